//! Raw-SVI baseline for the model comparison: same data, same weighted
//! objective, optionally the same grid constraints.

use serde::{Deserialize, Serialize};

use crate::calibration::{cmaes, term_weights, OptimizerConfig, WeightConfig};
use crate::error::{Result, SmileFitError};
use crate::market_data::{GridNode, TermQuotes};
use crate::no_arbitrage::{self, VerticalBoundConvention, NOARB_TOL};

/// Raw SVI parameters: w(chi) = a + b{rho (chi - m) + sqrt((chi-m)^2 + s^2)}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub m: f64,
    pub sigma: f64,
}

impl SviParams {
    pub fn validate(&self) -> Result<()> {
        if self.b < 0.0 {
            return Err(SmileFitError::Domain(format!("svi b={} must be >= 0", self.b)));
        }
        if self.rho.abs() > 1.0 {
            return Err(SmileFitError::Domain(format!("svi |rho|={} must be <= 1", self.rho)));
        }
        if self.sigma <= 0.0 {
            return Err(SmileFitError::Domain(format!("svi sigma={} must be > 0", self.sigma)));
        }
        let min_w = self.a + self.b * self.sigma * (1.0 - self.rho * self.rho).sqrt();
        if min_w < 0.0 {
            return Err(SmileFitError::Domain(format!(
                "svi minimum total variance {min_w} is negative"
            )));
        }
        Ok(())
    }

    fn to_array(self) -> [f64; 5] {
        [self.a, self.b, self.rho, self.m, self.sigma]
    }

    fn from_array(x: [f64; 5]) -> Self {
        Self { a: x[0], b: x[1], rho: x[2], m: x[3], sigma: x[4] }
    }
}

/// Total variance at log-moneyness chi.
pub fn svi_w(p: &SviParams, chi: f64) -> f64 {
    let d = chi - p.m;
    p.a + p.b * (p.rho * d + (d * d + p.sigma * p.sigma).sqrt())
}

/// (w, dw/dchi, d2w/dchi2).
pub fn svi_w_derivs(p: &SviParams, chi: f64) -> (f64, f64, f64) {
    let d = chi - p.m;
    let r = (d * d + p.sigma * p.sigma).sqrt();
    let w = p.a + p.b * (p.rho * d + r);
    let w1 = p.b * (p.rho + d / r);
    let w2 = p.b * p.sigma * p.sigma / (r * r * r);
    (w, w1, w2)
}

/// Constraint regime for the SVI fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SviFitMode {
    /// Only positivity of the total variance on the grid.
    #[default]
    PositiveW,
    /// The same butterfly/vertical/Lee grid checks as the main model.
    FullConstraints,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SviFitResult {
    pub params: SviParams,
    /// Pure weighted SSE, penalty excluded.
    pub objective: f64,
    pub iv_rmse: f64,
    pub feasible: bool,
    pub evals: usize,
    pub mode: SviFitMode,
}

/// SVI box bounds in [a, b, rho, m, sigma] order.
const SVI_BOUNDS: [[f64; 2]; 5] =
    [[-1.0, 1.0], [0.0, 5.0], [-0.999, 0.999], [-3.0, 3.0], [1e-4, 3.0]];

fn params_from_unit(u: &[f64]) -> SviParams {
    let mut x = [0.0; 5];
    for i in 0..5 {
        let [lo, hi] = SVI_BOUNDS[i];
        x[i] = lo + u[i].clamp(0.0, 1.0) * (hi - lo);
    }
    SviParams::from_array(x)
}

fn unit_from_params(p: &SviParams) -> Vec<f64> {
    let x = p.to_array();
    (0..5)
        .map(|i| {
            let [lo, hi] = SVI_BOUNDS[i];
            ((x[i] - lo) / (hi - lo)).clamp(0.0, 1.0)
        })
        .collect()
}

fn iv_rmse(p: &SviParams, term: &TermQuotes) -> f64 {
    let scale = term.sigma_star * term.maturity.sqrt();
    let mut acc = 0.0;
    for q in &term.points {
        let w = svi_w(p, q.z * scale).max(0.0);
        let iv = (w / term.maturity).sqrt();
        acc += (iv - q.iv) * (iv - q.iv);
    }
    (acc / term.points.len() as f64).sqrt()
}

/// Data-driven starting point: hinge near the variance minimum, slope scale
/// from the end chords.
fn initial_guess(term: &TermQuotes) -> SviParams {
    let scale = term.sigma_star * term.maturity.sqrt();
    let pts = &term.points;
    let (mut m, mut wmin) = (0.0, f64::MAX);
    for p in pts {
        if p.w_m < wmin {
            wmin = p.w_m;
            m = p.z * scale;
        }
    }
    let chi_lo = pts.first().map(|p| p.z * scale).unwrap_or(-0.5);
    let chi_hi = pts.last().map(|p| p.z * scale).unwrap_or(0.5);
    let w_lo = pts.first().map(|p| p.w_m).unwrap_or(wmin);
    let w_hi = pts.last().map(|p| p.w_m).unwrap_or(wmin);
    let slope_l = if (m - chi_lo).abs() > 1e-8 { (w_lo - wmin) / (m - chi_lo) } else { 0.1 };
    let slope_r = if (chi_hi - m).abs() > 1e-8 { (w_hi - wmin) / (chi_hi - m) } else { 0.1 };
    let b = (0.5 * (slope_l + slope_r)).clamp(1e-3, 4.9);
    let rho = ((slope_r - slope_l) / (slope_r + slope_l).max(1e-12)).clamp(-0.9, 0.9);
    let sigma = 0.1;
    let a = (wmin - b * sigma * (1.0 - rho * rho).sqrt()).clamp(-0.99, 0.99);
    SviParams { a, b, rho, m, sigma }
}

/// Fit SVI with the shared weighted objective; the optimizer and budget
/// mirror the main model's fit.
pub fn svi_fit(
    term: &TermQuotes,
    grid_nodes: &[GridNode],
    mode: SviFitMode,
    wcfg: &WeightConfig,
    ocfg: &OptimizerConfig,
    convention: VerticalBoundConvention,
) -> Result<SviFitResult> {
    if term.points.is_empty() {
        return Err(SmileFitError::NoQuotes);
    }
    if grid_nodes.is_empty() {
        return Err(SmileFitError::Input("empty constraint grid".into()));
    }
    let weights = term_weights(term, wcfg);
    let scale = term.sigma_star * term.maturity.sqrt();
    let chis: Vec<f64> = term.points.iter().map(|p| p.z * scale).collect();
    let grid_chis: Vec<f64> = grid_nodes.iter().map(|n| n.z * scale).collect();

    let pure = |p: &SviParams| -> f64 {
        term.points
            .iter()
            .zip(&chis)
            .zip(&weights)
            .map(|((q, &chi), &w)| {
                let d = q.w_m - svi_w(p, chi);
                w * d * d
            })
            .sum()
    };
    fn hinge(margin: f64) -> f64 {
        let v = (-(margin + NOARB_TOL)).max(0.0);
        v * v
    }
    let violation = |p: &SviParams| -> f64 {
        let mut v2 = 0.0;
        if p.b < 0.0 {
            v2 += p.b * p.b;
        }
        let min_w = p.a + p.b * p.sigma * (1.0 - p.rho * p.rho).sqrt();
        if min_w <= 1e-10 {
            v2 += 1.0 + min_w * min_w;
        }
        for &chi in &grid_chis {
            let (w, w1, w2) = svi_w_derivs(p, chi);
            if w <= 1e-10 {
                v2 += 1.0 + w * w;
                continue;
            }
            if mode == SviFitMode::FullConstraints {
                if let Ok(node) = no_arbitrage::check_node(
                    chi / scale,
                    chi,
                    w,
                    w1,
                    w2,
                    term.maturity,
                    convention,
                ) {
                    v2 += hinge(node.butterfly_margin);
                    v2 += hinge(node.vertical_lower_margin);
                    v2 += hinge(node.vertical_upper_margin);
                } else {
                    v2 += 1.0;
                }
            }
        }
        if mode == SviFitMode::FullConstraints {
            // Lee wing slopes per unit chi
            let up = p.b * (1.0 + p.rho);
            let dn = -p.b * (1.0 - p.rho);
            v2 += hinge(2.0 - up) + hinge(up) + hinge(2.0 + dn) + hinge(-dn);
        }
        v2
    };

    let mut penalty = ocfg.penalty_scale;
    let mut best_feasible: Option<(SviParams, f64)> = None;
    let mut best_any: (SviParams, f64) = (initial_guess(term), f64::MAX);
    let mut evals = 0usize;
    let x0 = unit_from_params(&best_any.0);

    let score_at = |u: &[f64],
                        penalty: f64,
                        best_feasible: &mut Option<(SviParams, f64)>,
                        best_any: &mut (SviParams, f64)|
     -> f64 {
        let p = params_from_unit(u);
        let obj = pure(&p);
        let viol = violation(&p);
        let s = obj + penalty * viol;
        if viol == 0.0 {
            match best_feasible {
                Some((_, bo)) if *bo <= obj => {}
                _ => *best_feasible = Some((p, obj)),
            }
        }
        if s < best_any.1 {
            *best_any = (p, s);
        }
        s
    };

    // local descent, evolutionary refinement, final polish: the same budget
    // split as the main model's fit
    let (_, _, used) = cmaes::nelder_mead(
        |u| score_at(u, penalty, &mut best_feasible, &mut best_any),
        &x0,
        0.02,
        ocfg.max_evals / 5,
    );
    evals += used;
    for (phase, (sigma0, budget)) in
        [(0.02, ocfg.max_evals / 2), (0.004, ocfg.max_evals * 4 / 5)].into_iter().enumerate()
    {
        let start = best_feasible
            .as_ref()
            .map(|(p, _)| unit_from_params(p))
            .unwrap_or_else(|| unit_from_params(&best_any.0));
        let mut es = cmaes::Cmaes::new(&start, sigma0, ocfg.seed + phase as u64, ocfg.population);
        while evals + es.lambda() <= budget {
            let xs = es.ask();
            let mut scores = Vec::with_capacity(xs.len());
            for x in &xs {
                scores.push(score_at(x, penalty, &mut best_feasible, &mut best_any));
                evals += 1;
            }
            es.tell(&xs, &scores);
            if best_feasible.is_none() {
                penalty = (penalty * 2.0).min(1e12);
            }
            if es.sigma() < 1e-11 {
                break;
            }
        }
    }
    if evals < ocfg.max_evals {
        let start = best_feasible
            .as_ref()
            .map(|(p, _)| unit_from_params(p))
            .unwrap_or_else(|| unit_from_params(&best_any.0));
        let (_, _, used) = cmaes::nelder_mead(
            |u| score_at(u, penalty, &mut best_feasible, &mut best_any),
            &start,
            0.01,
            ocfg.max_evals - evals,
        );
        evals += used;
    }

    let (params, objective, feasible) = match best_feasible {
        Some((p, o)) => (p, o, true),
        None => {
            let (p, _) = best_any;
            (p, pure(&p), false)
        }
    };
    Ok(SviFitResult {
        params,
        objective,
        iv_rmse: iv_rmse(&params, term),
        feasible,
        evals,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::TermPoint;

    fn svi_term(truth: &SviParams, t: f64, sigma_star: f64, zs: &[f64]) -> TermQuotes {
        let scale = sigma_star * t.sqrt();
        let points: Vec<TermPoint> = zs
            .iter()
            .map(|&z| {
                let w = svi_w(truth, z * scale);
                TermPoint {
                    strike: 100.0 * (z * scale).exp(),
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
        let sigma_atm = (svi_w(truth, 0.0) / t).sqrt();
        TermQuotes {
            expiry: chrono::NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
            maturity: t,
            forward: 100.0,
            sigma_star,
            sigma_atm,
            points,
        }
    }

    #[test]
    fn value_at_m_collapses_the_radical() {
        let p = SviParams { a: 0.02, b: 0.4, rho: -0.3, m: 0.05, sigma: 0.25 };
        assert!((svi_w(&p, 0.05) - (0.02 + 0.4 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_slopes_are_b_one_plus_minus_rho() {
        let p = SviParams { a: 0.02, b: 0.4, rho: -0.3, m: 0.05, sigma: 0.25 };
        let h = 1.0;
        let far = 1e3;
        let up = (svi_w(&p, far + h) - svi_w(&p, far)) / h;
        let dn = (svi_w(&p, -far - h) - svi_w(&p, -far)) / (-h);
        assert!((up - p.b * (1.0 + p.rho)).abs() / (p.b * (1.0 + p.rho)) < 0.01);
        assert!((dn - (-p.b * (1.0 - p.rho))).abs() / (p.b * (1.0 - p.rho)) < 0.01);
    }

    #[test]
    fn zero_b_is_constant() {
        let p = SviParams { a: 0.03, b: 0.0, rho: 0.0, m: 0.0, sigma: 0.1 };
        for chi in [-1.0, -0.2, 0.0, 0.4, 2.0] {
            assert_eq!(svi_w(&p, chi), 0.03);
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let ok = SviParams { a: 0.02, b: 0.4, rho: -0.3, m: 0.05, sigma: 0.25 };
        assert!(ok.validate().is_ok());
        assert!(SviParams { b: -0.1, ..ok }.validate().is_err());
        assert!(SviParams { rho: 1.2, ..ok }.validate().is_err());
        assert!(SviParams { sigma: 0.0, ..ok }.validate().is_err());
        assert!(SviParams { a: -0.5, ..ok }.validate().is_err());
    }

    #[test]
    fn derivs_match_finite_differences() {
        let p = SviParams { a: 0.02, b: 0.4, rho: -0.3, m: 0.05, sigma: 0.25 };
        for chi in [-0.8, -0.1, 0.05, 0.3, 1.2] {
            let h = 1e-5;
            let (_, w1, w2) = svi_w_derivs(&p, chi);
            let fd1 = (svi_w(&p, chi + h) - svi_w(&p, chi - h)) / (2.0 * h);
            let fd2 =
                (svi_w(&p, chi + h) - 2.0 * svi_w(&p, chi) + svi_w(&p, chi - h)) / (h * h);
            assert!((w1 - fd1).abs() < 1e-8);
            assert!((w2 - fd2).abs() < 1e-4);
        }
    }

    #[test]
    fn synthetic_svi_round_trip() {
        let truth = SviParams { a: 0.015, b: 0.2, rho: -0.4, m: 0.03, sigma: 0.2 };
        let t = 0.5;
        let sigma_star = 0.25;
        let zs: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
        let term = svi_term(&truth, t, sigma_star, &zs);
        let scale = sigma_star * t.sqrt();
        let grid: Vec<GridNode> = (0..13)
            .map(|i| {
                let z = -1.5 + 0.25 * i as f64;
                GridNode { z, strike: 100.0 * (z * scale).exp() }
            })
            .collect();
        let fit = svi_fit(
            &term,
            &grid,
            SviFitMode::PositiveW,
            &WeightConfig::default(),
            &OptimizerConfig::default(),
            VerticalBoundConvention::SignCorrected,
        )
        .unwrap();
        assert!(fit.feasible);
        assert!(fit.iv_rmse < 1e-3, "rmse={}", fit.iv_rmse);
        assert!(fit.evals <= 10_000);
    }
}
