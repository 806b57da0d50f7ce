//! Acceptance suite: one test per release criterion, each printing a
//! PASS line on success (run with `--nocapture` to see them).

mod common;

use std::time::Instant;

use chrono::NaiveDate;
use smilefit::black_scholes::{self as bs, erf_approx, implied_vol, OptionType};
use smilefit::calibration::{
    bootstrap, fit_term, CalibrationMode, OptimizerConfig, WeightConfig,
};
use smilefit::market_data::{
    build_grid, group_terms, load_context, load_quotes, GridMode, GridSpec, TermPoint, TermQuotes,
};
use smilefit::no_arbitrage::{NoArbReport, VerticalBoundConvention};
use smilefit::smile::{ModelConfig, SigmoidKind, SmileParams};
use smilefit::surface::{
    build_surface, extrapolate_term, implied_density, interpolate_term, interpolation_alpha,
    local_vol, single_quote_term, InterpolatorConfig, SingleQuote, SurfaceGrid, TermSlice,
    TermSource,
};
use smilefit::svi::{svi_fit, SviFitMode};

use common::{erf_ref, lognormal_pdf, TestRng};

fn model() -> ModelConfig<f64> {
    ModelConfig { p: 1000.0, sigmoid: SigmoidKind::Erf }
}

/// A comfortably feasible parameter set used by the synthetic round trips.
fn reference_params() -> SmileParams<f64> {
    SmileParams { w_c: 0.03, s_c: -0.004, c: 0.05, s: -0.012, kurt: 0.015, alpha: 0.8, beta: 1.0 }
}

/// One synthetic term whose quotes sit exactly on the model smile.
fn synthetic_term(p: &SmileParams<f64>, t: f64, sigma_star: f64, zs: &[f64]) -> TermQuotes {
    let m = model();
    let forward = 100.0;
    let points: Vec<TermPoint> = zs
        .iter()
        .map(|&z| {
            let w = p.eval_w(&m, t, z);
            TermPoint {
                strike: forward * (z * sigma_star * t.sqrt()).exp(),
                z,
                iv: (w / t).sqrt(),
                w_m: w,
                call_delta: None,
                put_delta: None,
                bid_iv: None,
                ask_iv: None,
                blend_fallback: false,
            }
        })
        .collect();
    let sigma_atm = points
        .iter()
        .min_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
        .map(|q| q.iv)
        .unwrap();
    TermQuotes {
        expiry: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        maturity: t,
        forward,
        sigma_star,
        sigma_atm,
        points,
    }
}

fn grid_row(t: f64, sigma_star: f64) -> Vec<smilefit::market_data::GridNode> {
    (0..13)
        .map(|i| {
            let z = -1.5 + 0.25 * i as f64;
            smilefit::market_data::GridNode { z, strike: 100.0 * (z * sigma_star * t.sqrt()).exp() }
        })
        .collect()
}

/// Flat-smile surface built directly: sigma at every strike and expiry.
fn flat_surface(sigma: f64, forward: f64, expiries: &[f64], strikes: Vec<f64>) -> SurfaceGrid {
    let terms: Vec<TermSlice> = expiries
        .iter()
        .map(|&t| TermSlice {
            maturity: t,
            forward,
            params: Some(SmileParams {
                w_c: sigma * sigma * t,
                s_c: 0.0,
                c: 0.0,
                s: 0.0,
                kurt: 0.0,
                alpha: 1.0,
                beta: 1.0,
            }),
            source: TermSource::Calibrated,
            anchor_used: None,
            w: vec![sigma * sigma * t; strikes.len()],
        })
        .collect();
    SurfaceGrid {
        expiries: expiries.to_vec(),
        forwards: vec![forward; expiries.len()],
        strikes,
        sigma_star: sigma,
        rate: 0.0,
        terms,
        report: NoArbReport::new(vec![]),
        lee_envelope_ok: vec![true; expiries.len()],
    }
}

/// Prepared XLF inputs: terms plus the shared 23-strike / 6-expiry grid.
fn xlf_setup() -> (Vec<TermQuotes>, smilefit::market_data::Grid, smilefit::market_data::MarketContext)
{
    let quotes = load_quotes(&common::fixture_quotes()).unwrap();
    let context = load_context(&common::fixture_context()).unwrap();
    let terms = group_terms(&quotes, &context, None).unwrap();
    assert_eq!(terms.len(), 6);
    let strikes: Vec<f64> = (0..23).map(|i| 17.0 + 0.5 * i as f64).collect();
    let spec = GridSpec {
        mode: GridMode::StrikeList,
        gamma: None,
        sigma_star: Some(terms[0].sigma_star),
        strikes,
        expiries: terms.iter().map(|t| t.maturity).collect(),
        step: None,
    };
    let grid = build_grid(&spec, &context).unwrap();
    (terms, grid, context)
}

#[test]
fn criterion_01_fast_erf_accuracy() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..=6000 {
        let x = i as f64 * 1e-3;
        worst = worst.max((erf_approx(x) - erf_ref(x)).abs());
    }
    let elapsed = started.elapsed();
    assert!(worst <= 3e-7, "max error {worst:.3e}");
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("criterion 01 (fast erf: max error {worst:.2e} <= 3e-7, {elapsed:?} < 1s): PASS");
}

#[test]
fn criterion_02_hinge_identities() {
    let m = model();
    let mut rng = TestRng::new(42);
    for _ in 0..1000 {
        let p = SmileParams {
            w_c: rng.uniform(0.005, 0.1),
            s_c: rng.uniform(-0.05, 0.05),
            c: rng.uniform(-0.5, 0.5),
            s: rng.uniform(-0.1, 0.1),
            kurt: rng.uniform(0.0, 0.1),
            alpha: rng.uniform(0.2, 2.0),
            beta: rng.uniform(0.2, 2.0),
        };
        let t = rng.uniform(0.05, 1.5);

        // level: exact equality at the hinge
        let w_at_c = p.eval_w(&m, t, p.c);
        assert!(w_at_c == p.w_c, "w(C)={w_at_c} != w_C={}", p.w_c);

        // slope: central difference around the hinge
        let h = 1e-6;
        let slope = (p.eval_w(&m, t, p.c + h) - p.eval_w(&m, t, p.c - h)) / (2.0 * h);
        assert!((slope - p.s_c).abs() < 1e-8, "slope {slope} vs S_C {}", p.s_c);

        // curvature: central second difference, step inside the smoothing core
        let h2 = 1e-5;
        let curv = (p.eval_w(&m, t, p.c + h2) - 2.0 * p.eval_w(&m, t, p.c)
            + p.eval_w(&m, t, p.c - h2))
            / (h2 * h2);
        assert!(curv.abs() < 1e-6, "curvature {curv}");

        // the hinge construction itself stays C2
        assert!(p.hinge_continuity_check(&m).ok);
    }
    println!("criterion 02 (hinge identities over 1000 random draws): PASS");
}

#[test]
fn criterion_03_wing_slopes() {
    let mut rng = TestRng::new(7);
    for kind in [SigmoidKind::Erf, SigmoidKind::Arctan] {
        let m = ModelConfig { p: 1000.0, sigmoid: kind };
        let mut accepted = 0;
        while accepted < 100 {
            let p = SmileParams {
                w_c: rng.uniform(0.01, 0.5),
                s_c: rng.uniform(-0.2, 0.2),
                c: rng.uniform(-0.5, 0.5),
                s: rng.uniform(-1.0, 1.0),
                kurt: rng.uniform(0.0, 1.0),
                alpha: rng.uniform(0.3, 2.0),
                beta: rng.uniform(0.3, 2.0),
            };
            let slopes = p.wing_slopes(&m, 1.0);
            if slopes.phi_plus.abs() < 0.05 || slopes.phi_minus.abs() < 0.05 {
                continue; // keep the relative comparison well conditioned
            }
            accepted += 1;
            let t = 1.0;
            let y0 = 1e3;
            let fd = |y: f64| {
                (p.eval_w(&m, t, p.c + y + 1.0) - p.eval_w(&m, t, p.c + y - 1.0)) / 2.0
            };
            let fd_plus = fd(y0);
            let fd_minus = fd(-y0);
            assert!(
                (fd_plus - slopes.phi_plus).abs() <= 0.01 * slopes.phi_plus.abs(),
                "{kind:?} call wing: fd {fd_plus} vs closed form {}",
                slopes.phi_plus
            );
            assert!(
                (fd_minus - slopes.phi_minus).abs() <= 0.01 * slopes.phi_minus.abs(),
                "{kind:?} put wing: fd {fd_minus} vs closed form {}",
                slopes.phi_minus
            );
            if kind == SigmoidKind::Arctan {
                // independent closed form for the arctan sigmoid
                let l = std::f64::consts::FRAC_PI_2;
                let plus = l * (l * p.kurt - p.s * p.beta) / (p.beta * p.beta);
                let minus = -l * (l * p.kurt + p.s * p.alpha) / (p.alpha * p.alpha);
                assert!((slopes.phi_plus - plus).abs() < 1e-10);
                assert!((slopes.phi_minus - minus).abs() < 1e-10);
            }
        }
    }
    println!("criterion 03 (wing slopes vs finite differences, erf and arctan): PASS");
}

#[test]
fn criterion_04_flat_local_vol_and_density() {
    let sigma = 0.3;
    let forward = 100.0;
    let expiries = [1.5, 2.0, 2.5];
    let n = 500usize;
    // +-2 standard deviations at the longest expiry: wide enough to cover
    // the smile body, narrow enough that the fast-erf pricing noise (~1e-7
    // in price) stays well under 1e-3 of the density everywhere
    let u_max = 2.0 * sigma * 2.5f64.sqrt();
    let strikes: Vec<f64> = (0..=n)
        .map(|j| forward * (-u_max + 2.0 * u_max * j as f64 / n as f64).exp())
        .collect();
    let surface = flat_surface(sigma, forward, &expiries, strikes);

    let lv = local_vol(&surface, &model()).unwrap();
    let mut worst_lv = 0.0f64;
    for row in &lv.values {
        for &v in row {
            worst_lv = worst_lv.max((v - sigma).abs());
        }
    }
    assert!(worst_lv <= 1e-10, "local vol deviates by {worst_lv:.3e}");

    let density = implied_density(&surface).unwrap();
    let mut worst_pdf = 0.0f64;
    let mut worst_at = (0.0, 0.0, 0.0, 0.0);
    for row in &density.rows {
        for (j, &k) in row.strikes.iter().enumerate() {
            let reference = lognormal_pdf(forward, sigma, row.maturity, k);
            let rel = (row.pdf[j] - reference).abs() / reference;
            if rel > worst_pdf {
                worst_pdf = rel;
                worst_at = (row.maturity, k, row.pdf[j], reference);
            }
        }
    }
    assert!(worst_pdf <= 1e-3, "density relative error {worst_pdf:.3e} at {worst_at:?}");
    println!(
        "criterion 04 (flat surface: local vol error {worst_lv:.1e} <= 1e-10, \
         density error {worst_pdf:.1e} <= 1e-3): PASS"
    );
}

#[test]
fn criterion_05_synthetic_round_trip() {
    let truth = reference_params();
    let t = 0.5;
    let sigma_star = 0.25;
    let zs: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
    let term = synthetic_term(&truth, t, sigma_star, &zs);
    let row = grid_row(t, sigma_star);
    let started = Instant::now();
    let fit = fit_term(
        &term,
        &row,
        &model(),
        &WeightConfig::default(),
        &OptimizerConfig::default(),
        VerticalBoundConvention::SignCorrected,
        None,
        None,
    )
    .unwrap();
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() <= 5.0, "took {elapsed:?}");
    assert!(fit.evals <= 10_000, "used {} evaluations", fit.evals);
    assert!(fit.iv_rmse < 1e-3, "IV RMSE {}", fit.iv_rmse);
    assert!(fit.feasible && fit.report.ok);
    println!(
        "criterion 05 (9-strike round trip: RMSE {:.2e} < 1e-3 in {} evals, {elapsed:?}): PASS",
        fit.iv_rmse, fit.evals
    );
}

#[test]
fn criterion_06_xlf_ends_only_pipeline() {
    let (terms, grid, context) = xlf_setup();
    let wcfg = WeightConfig { nu: -1.0, ..Default::default() };
    let ocfg = OptimizerConfig { max_evals: 100_000, seed: 2, ..Default::default() };
    let fits = bootstrap(
        &terms,
        &grid,
        &model(),
        &wcfg,
        &ocfg,
        VerticalBoundConvention::SignCorrected,
        CalibrationMode::EndsOnly,
    )
    .unwrap();

    // (a) feasible first/last fits under half a vol point
    for idx in [0, terms.len() - 1] {
        let fit = fits[idx].as_ref().expect("end term not calibrated");
        assert!(fit.feasible && fit.report.ok, "term {idx} infeasible");
        assert!(fit.iv_rmse < 0.005, "term {idx} IV RMSE {}", fit.iv_rmse);
    }
    for fit in &fits[1..terms.len() - 1] {
        assert!(fit.is_none(), "interior term unexpectedly calibrated");
    }

    let surface = build_surface(
        &terms,
        &fits,
        &grid,
        &model(),
        &InterpolatorConfig::default(),
        VerticalBoundConvention::SignCorrected,
        context.rate,
    )
    .unwrap();
    assert!(surface.report.ok);

    // (b) non-negative local volatility everywhere on the grid
    let lv = local_vol(&surface, &model()).unwrap();
    let mut lv_min = f64::INFINITY;
    for row in &lv.values {
        for &v in row {
            assert!(v.is_finite() && v >= 0.0);
            lv_min = lv_min.min(v);
        }
    }

    // (c) non-negative density integrating to one within 2% per expiry
    let density = implied_density(&surface).unwrap();
    assert_eq!(density.rows.len(), terms.len());
    for row in &density.rows {
        assert!(row.pdf.iter().all(|&p| p >= 0.0));
        assert!(
            (row.total_mass - 1.0).abs() <= 0.02,
            "T={} mass {}",
            row.maturity,
            row.total_mass
        );
    }
    println!(
        "criterion 06 (XLF ends-only: end RMSE {:.4}/{:.4}, min local vol {lv_min:.3}, \
         density mass within 2%): PASS",
        fits[0].as_ref().unwrap().iv_rmse,
        fits[terms.len() - 1].as_ref().unwrap().iv_rmse
    );
}

#[test]
fn criterion_07_interpolation_extrapolation_properties() {
    let forward = 100.0;
    let (t1, sigma1) = (0.5, 0.2);
    let (t2, sigma2) = (1.0, 0.25);
    // an out-of-the-money call band: the 1/T price scaling behind the
    // extrapolation is meaningful for extrinsic value, not intrinsic
    let strikes: Vec<f64> = (0..25)
        .map(|j| forward * (1.08f64.ln() + (1.5f64 / 1.08).ln() * j as f64 / 24.0).exp())
        .collect();
    let call_row = |t: f64, sigma: f64| -> Vec<f64> {
        strikes.iter().map(|&k| bs::bs_call(forward, k, t, sigma).unwrap()).collect()
    };
    let c1 = call_row(t1, sigma1);
    let c2 = call_row(t2, sigma2);

    let convex = |c: &[f64]| {
        for j in 1..strikes.len() - 1 {
            let left = (c[j] - c[j - 1]) / (strikes[j] - strikes[j - 1]);
            let right = (c[j + 1] - c[j]) / (strikes[j + 1] - strikes[j]);
            assert!(right >= left - 1e-10, "convexity broken at strike {}", strikes[j]);
        }
    };
    let lee_at_edges = |c: &[f64], t: f64| {
        for j in [0, strikes.len() - 1] {
            let iv = implied_vol(c[j], forward, strikes[j], t, OptionType::Call).unwrap();
            let chi = (strikes[j] / forward).ln();
            assert!(iv * iv * t < 2.0 * chi.abs(), "edge strike {} breaks the envelope", strikes[j]);
        }
    };

    // endpoint reproduction is bit-exact
    assert_eq!(interpolate_term(&c1, &c2, 1.0).unwrap(), c1);
    assert_eq!(interpolate_term(&c1, &c2, 0.0).unwrap(), c2);

    // alpha(T) in [0,1], decreasing in T (linear anchor a(T) = T)
    let mut prev_alpha = f64::INFINITY;
    let mut slices: Vec<Vec<f64>> = vec![c1.clone()];
    for i in 0..=10 {
        let t = t1 + (t2 - t1) * i as f64 / 10.0;
        let alpha = interpolation_alpha(t1, t, t2).unwrap();
        assert!((0.0..=1.0).contains(&alpha));
        if i > 0 {
            assert!(alpha < prev_alpha, "alpha not decreasing at T={t}");
        }
        prev_alpha = alpha;
        slices.push(interpolate_term(&c1, &c2, alpha).unwrap());
    }
    slices.push(c2.clone());

    // extrapolation past the long end with the safe exponent
    let t_out = 1.1;
    let alpha_out = (t2 - t_out) / (t2 - t1);
    let ext = extrapolate_term(&c1, t1, &c2, t2, t_out, alpha_out, -1.0).unwrap();
    assert!(!ext.tightened && ext.k_used == -1.0);
    slices.push(ext.prices.clone());

    // calendar monotonicity at every strike, convexity and the Lee envelope
    // on every slice
    for pair in slices.windows(2) {
        for j in 0..strikes.len() {
            assert!(pair[1][j] >= pair[0][j] - 1e-12, "calendar broken at strike {}", strikes[j]);
        }
    }
    for c in &slices {
        convex(c);
    }
    lee_at_edges(&c1, t1);
    lee_at_edges(&c2, t2);
    lee_at_edges(&ext.prices, t_out);

    // a -0.5 exponent request is not honored: tightened to -1
    let shallow = extrapolate_term(&c1, t1, &c2, t2, t_out, alpha_out, -0.5).unwrap();
    assert!(shallow.tightened && shallow.k_used == -1.0);
    // exponents above -0.5 are rejected outright
    assert!(extrapolate_term(&c1, t1, &c2, t2, t_out, alpha_out, -0.4).is_err());
    println!("criterion 07 (interpolation/extrapolation invariants): PASS");
}

#[test]
fn criterion_08_single_quote_reproduction() {
    let forward = 100.0;
    let (t1, sigma1) = (0.5, 0.2);
    let (t2, sigma2) = (1.0, 0.25);
    let strikes: Vec<f64> = vec![80.0, 85.0, 90.0, 95.0, 100.0, 105.0, 110.0, 115.0, 120.0];
    let j = 3; // strike 95 sits on the shared grid
    let c1: Vec<f64> =
        strikes.iter().map(|&k| bs::bs_call(forward, k, t1, sigma1).unwrap()).collect();
    let c2: Vec<f64> =
        strikes.iter().map(|&k| bs::bs_call(forward, k, t2, sigma2).unwrap()).collect();
    for iv in [0.21, 0.225, 0.24] {
        let quote = SingleQuote { strike: strikes[j], maturity: 0.75, iv };
        let target = bs::bs_call(forward, quote.strike, quote.maturity, iv).unwrap();
        let (prices, alpha) =
            single_quote_term(&quote, forward, &c1, c1[j], t1, &c2, c2[j], t2).unwrap();
        assert!((0.0..=1.0).contains(&alpha));
        assert!(
            (prices[j] - target).abs() <= 1e-10,
            "quote price {target} reproduced as {} (iv {iv})",
            prices[j]
        );
    }
    println!("criterion 08 (single-quote anchor reproduces the quote to 1e-10): PASS");
}

#[test]
fn criterion_09_svi_comparison_harness() {
    let (terms, grid, _context) = xlf_setup();
    let wcfg = WeightConfig { nu: -1.0, ..Default::default() };
    let ocfg = OptimizerConfig { max_evals: 20_000, seed: 1, ..Default::default() };
    for (i, term) in terms.iter().enumerate() {
        let row = &grid.nodes[i];
        let fit = fit_term(
            term,
            row,
            &model(),
            &wcfg,
            &ocfg,
            VerticalBoundConvention::SignCorrected,
            None,
            None,
        )
        .unwrap();
        let svi_pos = svi_fit(
            term,
            row,
            SviFitMode::PositiveW,
            &wcfg,
            &ocfg,
            VerticalBoundConvention::SignCorrected,
        )
        .unwrap();
        assert!(svi_pos.feasible, "positive-w SVI fit infeasible for term {i}");
        let svi_full = svi_fit(
            term,
            row,
            SviFitMode::FullConstraints,
            &wcfg,
            &ocfg,
            VerticalBoundConvention::SignCorrected,
        )
        .unwrap();
        // the fully constrained SVI outcome is recorded, not asserted
        println!(
            "  term {i} T={:.4}: model objective {:.3e}, SVI objective {:.3e}, \
             SVI full-constraint feasible: {}",
            term.maturity, fit.objective, svi_pos.objective, svi_full.feasible
        );
    }
    println!("criterion 09 (SVI comparison harness on the bundled fixture): PASS");
}

#[test]
fn criterion_10_determinism() {
    let (terms, grid, _context) = xlf_setup();
    let wcfg = WeightConfig::default();
    let ocfg = OptimizerConfig { max_evals: 4_000, seed: 11, ..Default::default() };
    let run = || {
        let fits = bootstrap(
            &terms,
            &grid,
            &model(),
            &wcfg,
            &ocfg,
            VerticalBoundConvention::SignCorrected,
            CalibrationMode::EndsOnly,
        )
        .unwrap();
        serde_json::to_string(&fits).unwrap()
    };
    let first = run();
    let second = run();
    assert!(first == second, "identical seeds produced different fit outputs");
    println!("criterion 10 (identical seeds give byte-identical fit outputs): PASS");
}
