//! Term calibration: point weights, the weighted least-squares objective,
//! the constrained evolutionary fit, and the term-by-term bootstrap.

pub mod cmaes;
pub mod guess;

use serde::{Deserialize, Serialize};

use crate::black_scholes as bs;
use crate::error::{Result, SmileFitError};
use crate::market_data::{Grid, GridNode, TermQuotes};
use crate::no_arbitrage::{self, VerticalBoundConvention, NOARB_TOL};
use crate::smile::{ModelConfig, SmileParams};

pub use guess::{default_guess, smart_initial_guess, GuessDiagnostics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    /// min[cap, (|z|/sigma_atm)^nu] with nu < 0: near-ATM points capped,
    /// wings down-weighted.
    #[default]
    AsPrinted,
    /// Exponent sign flipped.
    Inverse,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightConfig {
    pub nu: f64,
    pub cap: f64,
    pub variant: WeightVariant,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { nu: -2.0, cap: 0.1, variant: WeightVariant::AsPrinted }
    }
}

/// Weight of one market point: 1/2 (w_c + w_p), each side
/// (1 - |delta|) min[cap, (|z|/sigma_atm)^nu]; a missing delta contributes
/// factor 1; z = 0 takes the cap.
pub fn point_weight(
    z: f64,
    sigma_atm: f64,
    delta_c: Option<f64>,
    delta_p: Option<f64>,
    cfg: &WeightConfig,
) -> f64 {
    debug_assert!(sigma_atm > 0.0);
    let nu = match cfg.variant {
        WeightVariant::AsPrinted => cfg.nu,
        WeightVariant::Inverse => -cfg.nu,
    };
    let ratio = (z / sigma_atm).abs();
    let base = if ratio == 0.0 && nu < 0.0 { cfg.cap } else { cfg.cap.min(ratio.powf(nu)) };
    let wc = (1.0 - delta_c.map_or(0.0, f64::abs)) * base;
    let wp = (1.0 - delta_p.map_or(0.0, f64::abs)) * base;
    0.5 * (wc + wp)
}

/// Per-point weights for a whole term.
pub fn term_weights(term: &TermQuotes, cfg: &WeightConfig) -> Vec<f64> {
    term.points
        .iter()
        .map(|p| point_weight(p.z, term.sigma_atm, p.call_delta, p.put_delta, cfg))
        .collect()
}

/// Weighted SSE in total variance; the flag marks an all-zero weight vector.
pub fn objective(
    params: &SmileParams<f64>,
    model: &ModelConfig<f64>,
    term: &TermQuotes,
    weights: &[f64],
) -> (f64, bool) {
    let mut sse = 0.0;
    for (p, &w) in term.points.iter().zip(weights) {
        let d = p.w_m - params.eval_w(model, term.maturity, p.z);
        sse += w * d * d;
    }
    (sse, weights.iter().all(|&w| w == 0.0))
}

/// Root-mean-square IV residual of a fit, in absolute vol terms.
pub fn iv_rmse(params: &SmileParams<f64>, model: &ModelConfig<f64>, term: &TermQuotes) -> f64 {
    let mut acc = 0.0;
    for p in &term.points {
        let w = params.eval_w(model, term.maturity, p.z).max(0.0);
        let iv = (w / term.maturity).sqrt();
        acc += (iv - p.iv) * (iv - p.iv);
    }
    (acc / term.points.len() as f64).sqrt()
}

/// Which parameters stay free for a given quote count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedMode {
    Full,
    /// S_C fixed to 0.
    FixSc,
    /// K and S_C fixed to 0.
    FixKurtSc,
    /// Too few quotes to calibrate; the surface fills the term by the
    /// single-quote interpolation.
    Interpolate,
}

pub fn reduced_mode(term_size: usize) -> ReducedMode {
    match term_size {
        0..=2 => ReducedMode::Interpolate,
        3..=4 => ReducedMode::FixKurtSc,
        5..=6 => ReducedMode::FixSc,
        _ => ReducedMode::Full,
    }
}

impl ReducedMode {
    /// Free parameter indices in [w_C, S_C, C, S, K, alpha, beta] order.
    pub fn free_indices(self) -> Vec<usize> {
        match self {
            ReducedMode::Full => vec![0, 1, 2, 3, 4, 5, 6],
            ReducedMode::FixSc => vec![0, 2, 3, 4, 5, 6],
            ReducedMode::FixKurtSc => vec![0, 2, 3, 5, 6],
            ReducedMode::Interpolate => vec![],
        }
    }
}

/// Optimizer settings; bounds rows are [min, max] per parameter in
/// [w_C, S_C, C, S, K, alpha, beta] order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_evals: usize,
    pub population: Option<usize>,
    pub penalty_scale: f64,
    pub seed: u64,
    pub bounds: [[f64; 2]; 7],
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evals: 10_000,
            population: None,
            penalty_scale: 1e3,
            seed: 0,
            bounds: [
                [1e-6, 4.0],
                [-5.0, 5.0],
                [-3.0, 3.0],
                [-50.0, 50.0],
                [-10.0, 100.0],
                [-10.0, 10.0],
                [-10.0, 10.0],
            ],
        }
    }
}

/// Previous calibrated term, for the bootstrap calendar constraint.
#[derive(Debug, Clone, Copy)]
pub struct PriorTerm {
    pub params: SmileParams<f64>,
    pub maturity: f64,
    pub forward: f64,
    pub sigma_star: f64,
}

impl PriorTerm {
    /// Undiscounted call price at a strike, off the prior smile.
    pub fn call_price(&self, model: &ModelConfig<f64>, strike: f64) -> Result<f64> {
        let z = (strike / self.forward).ln() / (self.sigma_star * self.maturity.sqrt());
        let w = self.params.eval_w(model, self.maturity, z);
        bs::bs_call_from_variance(self.forward, strike, w.max(1e-12))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SmileParams<f64>,
    /// Pure weighted SSE, penalty excluded.
    pub objective: f64,
    /// Model-minus-market total variance per point.
    pub residuals: Vec<f64>,
    pub iv_rmse: f64,
    pub report: no_arbitrage::TermReport,
    pub evals: usize,
    pub mode: ReducedMode,
    pub feasible: bool,
    pub guess_fallback: bool,
    /// Not serialized so reruns with the same seed are byte-identical.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

struct Evaluator<'a> {
    term: &'a TermQuotes,
    grid_nodes: &'a [GridNode],
    model: &'a ModelConfig<f64>,
    weights: Vec<f64>,
    free: Vec<usize>,
    base: [f64; 7],
    bounds: [[f64; 2]; 7],
    convention: VerticalBoundConvention,
    prior_calls: Option<Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    fn params_from_unit(&self, u: &[f64]) -> SmileParams<f64> {
        let mut arr = self.base;
        for (j, &i) in self.free.iter().enumerate() {
            let [lo, hi] = self.bounds[i];
            arr[i] = lo + u[j].clamp(0.0, 1.0) * (hi - lo);
        }
        SmileParams::from_array(arr)
    }

    fn unit_from_params(&self, p: &SmileParams<f64>) -> Vec<f64> {
        let arr = p.to_array();
        self.free
            .iter()
            .map(|&i| {
                let [lo, hi] = self.bounds[i];
                ((arr[i] - lo) / (hi - lo)).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Sum of squared constraint violations (0 when feasible).
    fn violation(&self, p: &SmileParams<f64>) -> f64 {
        let t = self.term.maturity;
        let sigma_star = self.term.sigma_star;
        let scale = sigma_star * t.sqrt();
        let mut v2 = 0.0;
        fn add(v2: &mut f64, margin: f64) {
            let v = (-(margin + NOARB_TOL)).max(0.0);
            *v2 += v * v;
        }
        for (idx, node) in self.grid_nodes.iter().enumerate() {
            let (w, w_z, w_zz) = p.eval_w_derivs(self.model, t, node.z);
            if w <= 1e-10 {
                // strongly discourage non-positive variance
                v2 += 1.0 + w * w;
                continue;
            }
            let chi = node.z * scale;
            let w_chi = w_z / scale;
            let w_chichi = w_zz / (scale * scale);
            if let Ok(den) = no_arbitrage::dupire_denominator(w, w_chi, w_chichi, chi) {
                add(&mut v2, den);
            }
            let k_di_dk = w_chi / (2.0 * (w * t).sqrt());
            let d2 = -chi / w.sqrt() - w.sqrt() / 2.0;
            let vc = no_arbitrage::vertical_spread_bounds(
                (w / t).sqrt(),
                1.0,
                t,
                k_di_dk,
                d2,
                self.convention,
            );
            add(&mut v2, vc.lower_margin);
            add(&mut v2, vc.upper_margin);
            if let Some(prior) = &self.prior_calls {
                if let Ok(c2) = bs::bs_call_from_variance(self.term.forward, node.strike, w) {
                    add(&mut v2, c2 - prior[idx]);
                }
            }
        }
        // Lee slope bounds at the wings, per unit log-moneyness
        let slopes = p.wing_slopes(self.model, t);
        let lee_plus = slopes.phi_plus / sigma_star;
        let lee_minus = slopes.phi_minus / sigma_star;
        add(&mut v2, lee_plus);
        add(&mut v2, 2.0 - lee_plus);
        add(&mut v2, -lee_minus);
        add(&mut v2, 2.0 + lee_minus);
        // bid/ask containment where quoted
        for q in &self.term.points {
            if let (Some(b), Some(a)) = (q.bid_iv, q.ask_iv) {
                let w = p.eval_w(self.model, t, q.z).max(0.0);
                let iv = (w / t).sqrt();
                add(&mut v2, iv - b);
                add(&mut v2, a - iv);
            }
        }
        v2
    }

    fn pure_objective(&self, p: &SmileParams<f64>) -> f64 {
        objective(p, self.model, self.term, &self.weights).0
    }
}

/// Calibrate one term under the full grid constraint set.
#[allow(clippy::too_many_arguments)]
pub fn fit_term(
    term: &TermQuotes,
    grid_nodes: &[GridNode],
    model: &ModelConfig<f64>,
    wcfg: &WeightConfig,
    ocfg: &OptimizerConfig,
    convention: VerticalBoundConvention,
    prior: Option<&PriorTerm>,
    initial: Option<SmileParams<f64>>,
) -> Result<FitResult> {
    let started = std::time::Instant::now();
    if term.points.is_empty() {
        return Err(SmileFitError::NoQuotes);
    }
    let mode = reduced_mode(term.points.len());
    if mode == ReducedMode::Interpolate {
        return Err(SmileFitError::Optimizer(format!(
            "{} quote(s) are too few to calibrate; use the interpolation path",
            term.points.len()
        )));
    }
    if grid_nodes.is_empty() {
        return Err(SmileFitError::Input("empty constraint grid".into()));
    }

    let prior_calls = match prior {
        Some(pt) => Some(
            grid_nodes
                .iter()
                .map(|n| pt.call_price(model, n.strike))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let free = mode.free_indices();
    let mut base = [0.0; 7];
    base[4] = 0.0; // K and S_C pinned to zero when not free
    let ev = Evaluator {
        term,
        grid_nodes,
        model,
        weights: term_weights(term, wcfg),
        free,
        base,
        bounds: ocfg.bounds,
        convention,
        prior_calls,
    };

    let (mut guess_params, diag) = match initial {
        Some(p) => (p, GuessDiagnostics {
            used_fallback: false,
            hinge_from_iv_min: false,
            mixed_sign_interpolation: false,
        }),
        None => smart_initial_guess(term, model),
    };
    // respect the reduced-mode pins
    if !ev.free.contains(&1) {
        guess_params.s_c = 0.0;
    }
    if !ev.free.contains(&4) {
        guess_params.kurt = 0.0;
    }
    let x0 = ev.unit_from_params(&guess_params);

    let mut penalty = ocfg.penalty_scale;
    let score = |ev: &Evaluator, u: &[f64], penalty: f64| -> (f64, f64, f64) {
        let p = ev.params_from_unit(u);
        let obj = ev.pure_objective(&p);
        let viol = ev.violation(&p);
        (obj + penalty * viol, obj, viol)
    };

    let mut best_feasible: Option<(Vec<f64>, f64)> = None;
    let mut best_any: (Vec<f64>, f64, f64) = {
        let (s, obj, viol) = score(&ev, &x0, penalty);
        if viol == 0.0 {
            best_feasible = Some((x0.clone(), obj));
        }
        (x0.clone(), s, viol)
    };
    let mut evals = 1usize;

    // Two-phase search. The feasible region is a thin sliver of the unit box,
    // and the smart guess already lands near it, so phase one explores with a
    // moderate step and phase two polishes from the best point found with a
    // much smaller one.
    // Local descent from the smart guess first: the guess usually lands in
    // the right basin and a direct simplex descent keeps it there, while the
    // evolutionary phases below explore more widely.
    if evals < ocfg.max_evals / 5 {
        let budget = ocfg.max_evals / 5 - evals;
        let (_, _, used) = cmaes::nelder_mead(
            |u| {
                let (s, obj, viol) = score(&ev, u, penalty);
                if viol == 0.0 {
                    match &best_feasible {
                        Some((_, bo)) if *bo <= obj => {}
                        _ => best_feasible = Some((u.to_vec(), obj)),
                    }
                }
                if s < best_any.1 {
                    best_any = (u.to_vec(), s, viol);
                }
                s
            },
            &x0,
            0.02,
            budget,
        );
        evals += used;
    }

    let phase_budgets = [(0.02, ocfg.max_evals / 2), (0.004, ocfg.max_evals * 4 / 5)];
    for (phase, &(sigma0, budget)) in phase_budgets.iter().enumerate() {
        let start = if phase == 0 {
            x0.clone()
        } else {
            best_feasible
                .as_ref()
                .map(|(x, _)| x.clone())
                .unwrap_or_else(|| best_any.0.clone())
        };
        let mut es = cmaes::Cmaes::new(&start, sigma0, ocfg.seed + phase as u64, ocfg.population);
        while evals + es.lambda() <= budget {
            let xs = es.ask();
            let mut scores = Vec::with_capacity(xs.len());
            let mut any_feasible = false;
            for x in &xs {
                let (s, obj, viol) = score(&ev, x, penalty);
                evals += 1;
                if viol == 0.0 {
                    any_feasible = true;
                    match &best_feasible {
                        Some((_, bo)) if *bo <= obj => {}
                        _ => best_feasible = Some((x.clone(), obj)),
                    }
                }
                if s < best_any.1 {
                    best_any = (x.clone(), s, viol);
                }
                scores.push(s);
            }
            es.tell(&xs, &scores);
            if best_feasible.is_none() && !any_feasible {
                // adaptive quadratic penalty: push harder toward feasibility
                penalty = (penalty * 2.0).min(1e12);
            }
            if es.sigma() < 1e-11 {
                break;
            }
        }
    }

    // Simplex polish: the box normalization leaves the least-squares valley
    // strongly anisotropic (parameter ranges span orders of magnitude), which
    // slows the covariance adaptation; Nelder-Mead finishes the descent.
    if evals < ocfg.max_evals {
        let start = best_feasible
            .as_ref()
            .map(|(x, _)| x.clone())
            .unwrap_or_else(|| best_any.0.clone());
        let budget = ocfg.max_evals - evals;
        let (_, _, used) = cmaes::nelder_mead(
            |u| {
                let (s, obj, viol) = score(&ev, u, penalty);
                if viol == 0.0 {
                    match &best_feasible {
                        Some((_, bo)) if *bo <= obj => {}
                        _ => best_feasible = Some((u.to_vec(), obj)),
                    }
                }
                if s < best_any.1 {
                    best_any = (u.to_vec(), s, viol);
                }
                s
            },
            &start,
            0.01,
            budget,
        );
        evals += used;
    }

    let (x_best, obj_best) = best_feasible.ok_or_else(|| {
        SmileFitError::Optimizer(format!(
            "no feasible candidate within {} evaluations (best violation^2 {:.3e}, best penalized score {:.3e})",
            ocfg.max_evals, best_any.2, best_any.1
        ))
    })?;
    let params = ev.params_from_unit(&x_best);
    let z_nodes: Vec<f64> = grid_nodes.iter().map(|n| n.z).collect();
    let mut report =
        no_arbitrage::check_term(&params, model, term.maturity, term.sigma_star, &z_nodes, convention)?;
    if let Some(pc) = &ev.prior_calls {
        let curr: Vec<f64> = grid_nodes
            .iter()
            .map(|n| {
                let w = params.eval_w(model, term.maturity, n.z).max(1e-12);
                bs::bs_call_from_variance(term.forward, n.strike, w)
            })
            .collect::<Result<Vec<_>>>()?;
        let (ok, margin) = no_arbitrage::check_calendar(pc, &curr);
        report.calendar_ok = Some(ok);
        report.calendar_margin = Some(margin);
        report.ok = report.ok && ok;
    }
    let residuals: Vec<f64> = term
        .points
        .iter()
        .map(|p| params.eval_w(model, term.maturity, p.z) - p.w_m)
        .collect();
    Ok(FitResult {
        iv_rmse: iv_rmse(&params, model, term),
        params,
        objective: obj_best,
        residuals,
        report,
        evals,
        mode,
        feasible: true,
        guess_fallback: diag.used_fallback,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Calibrate every term with enough quotes.
    #[default]
    All,
    /// Calibrate only the first and last terms; fill the rest by
    /// interpolation.
    EndsOnly,
}

/// Sequential term-by-term calibration. Returns one entry per term in
/// ascending maturity: `Some(fit)` for calibrated terms, `None` for terms left
/// to the interpolation pass.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap(
    terms: &[TermQuotes],
    grid: &Grid,
    model: &ModelConfig<f64>,
    wcfg: &WeightConfig,
    ocfg: &OptimizerConfig,
    convention: VerticalBoundConvention,
    mode: CalibrationMode,
) -> Result<Vec<Option<FitResult>>> {
    if terms.is_empty() {
        return Err(SmileFitError::NoQuotes);
    }
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&a, &b| terms[a].maturity.total_cmp(&terms[b].maturity));

    let grid_row = |t: f64| -> Result<&Vec<GridNode>> {
        grid.expiries
            .iter()
            .position(|&ge| (ge - t).abs() < 1e-12)
            .map(|i| &grid.nodes[i])
            .ok_or_else(|| SmileFitError::Input(format!("no grid row for maturity {t}")))
    };

    let mut fits: Vec<Option<FitResult>> = vec![None; terms.len()];
    let mut prior: Option<PriorTerm> = None;
    for (rank, &idx) in order.iter().enumerate() {
        let term = &terms[idx];
        let calibrate = match mode {
            CalibrationMode::All => reduced_mode(term.points.len()) != ReducedMode::Interpolate,
            CalibrationMode::EndsOnly => rank == 0 || rank == order.len() - 1,
        };
        if !calibrate {
            continue;
        }
        let row = grid_row(term.maturity)?;
        let mut cfg = ocfg.clone();
        cfg.seed = ocfg.seed.wrapping_add(rank as u64);
        let fit = fit_term(term, row, model, wcfg, &cfg, convention, prior.as_ref(), None)
            .map_err(|e| {
                SmileFitError::Optimizer(format!("term {} (T={:.4}): {e}", rank + 1, term.maturity))
            })?;
        prior = Some(PriorTerm {
            params: fit.params,
            maturity: term.maturity,
            forward: term.forward,
            sigma_star: term.sigma_star,
        });
        fits[idx] = Some(fit);
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::TermPoint;
    use crate::smile::SigmoidKind;
    use chrono::NaiveDate;

    fn model() -> ModelConfig<f64> {
        ModelConfig { p: 1000.0, sigmoid: SigmoidKind::Erf }
    }

    fn term_from_zw(t: f64, sigma_star: f64, zw: &[(f64, f64)]) -> TermQuotes {
        let forward = 100.0;
        let points: Vec<TermPoint> = zw
            .iter()
            .map(|&(z, w)| TermPoint {
                strike: forward * (z * sigma_star * t.sqrt()).exp(),
                z,
                iv: (w / t).sqrt(),
                w_m: w,
                call_delta: None,
                put_delta: None,
                bid_iv: None,
                ask_iv: None,
                blend_fallback: false,
            })
            .collect();
        let sigma_atm = points
            .iter()
            .min_by(|a, b| a.z.abs().total_cmp(&b.z.abs()))
            .map(|p| p.iv)
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

    fn synthetic_term(
        p: &SmileParams<f64>,
        t: f64,
        sigma_star: f64,
        zs: &[f64],
    ) -> TermQuotes {
        let m = model();
        let zw: Vec<(f64, f64)> = zs.iter().map(|&z| (z, p.eval_w(&m, t, z))).collect();
        term_from_zw(t, sigma_star, &zw)
    }

    fn grid_row(t: f64, sigma_star: f64) -> Vec<GridNode> {
        (0..13)
            .map(|i| {
                let z = -1.5 + 0.25 * i as f64;
                GridNode { z, strike: 100.0 * (z * sigma_star * t.sqrt()).exp() }
            })
            .collect()
    }

    fn feasible_truth() -> SmileParams<f64> {
        SmileParams { w_c: 0.03, s_c: -0.004, c: 0.05, s: -0.012, kurt: 0.015, alpha: 0.8, beta: 1.0 }
    }

    #[test]
    fn point_weight_examples() {
        let cfg = WeightConfig::default();
        assert_eq!(point_weight(0.5, 0.2, Some(1.0), Some(-1.0), &cfg), 0.0);
        // z/sigma_atm = 10, nu = -2, no deltas -> 0.01
        let w = point_weight(2.0, 0.2, None, None, &cfg);
        assert!((w - 0.01).abs() < 1e-15);
        assert_eq!(point_weight(0.0, 0.2, None, None, &cfg), 0.1);
        // inverse variant caps the wings instead
        let inv = WeightConfig { variant: WeightVariant::Inverse, ..cfg };
        assert!((point_weight(2.0, 0.2, None, None, &inv) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn objective_zero_at_exact_fit_and_quadratic_in_shift() {
        let truth = feasible_truth();
        let t = 0.5;
        let term = synthetic_term(&truth, t, 0.25, &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let weights = term_weights(&term, &WeightConfig::default());
        let (sse, degenerate) = objective(&truth, &model(), &term, &weights);
        assert!(sse < 1e-24);
        assert!(!degenerate);

        // flat data: shifting w_C by delta raises the objective by sum(W) delta^2
        let flat = SmileParams { w_c: 0.04, s_c: 0.0, c: 0.0, s: 0.0, kurt: 0.0, alpha: 1.0, beta: 1.0 };
        let term = synthetic_term(&flat, t, 0.25, &[-1.0, -0.5, 0.5, 1.0]);
        let weights = term_weights(&term, &WeightConfig::default());
        let mut shifted = flat;
        let delta = 1e-3;
        shifted.w_c += delta;
        let (sse, _) = objective(&shifted, &model(), &term, &weights);
        let expect: f64 = weights.iter().sum::<f64>() * delta * delta;
        assert!((sse - expect).abs() < 1e-12 * expect.max(1e-30));

        let (sse, degenerate) = objective(&truth, &model(), &term, &[0.0; 4]);
        assert_eq!(sse, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn reduced_mode_thresholds() {
        assert_eq!(reduced_mode(10), ReducedMode::Full);
        assert_eq!(reduced_mode(7), ReducedMode::Full);
        assert_eq!(reduced_mode(6), ReducedMode::FixSc);
        assert_eq!(reduced_mode(5), ReducedMode::FixSc);
        assert_eq!(reduced_mode(4), ReducedMode::FixKurtSc);
        assert_eq!(reduced_mode(3), ReducedMode::FixKurtSc);
        assert_eq!(reduced_mode(2), ReducedMode::Interpolate);
        assert_eq!(reduced_mode(1), ReducedMode::Interpolate);
    }

    #[test]
    fn synthetic_round_trip_nine_strikes() {
        let truth = feasible_truth();
        let t = 0.5;
        let sigma_star = 0.25;
        let zs: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
        let term = synthetic_term(&truth, t, sigma_star, &zs);
        let row = grid_row(t, sigma_star);
        let started = std::time::Instant::now();
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
        assert!(started.elapsed().as_secs_f64() <= 5.0);
        assert!(fit.iv_rmse < 1e-3, "rmse={}", fit.iv_rmse);
        assert!(fit.feasible && fit.report.ok);
        assert!(fit.evals <= 10_000);
    }

    #[test]
    fn optimizer_never_worsens_the_start() {
        let truth = feasible_truth();
        let t = 0.5;
        let zs: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
        let term = synthetic_term(&truth, t, 0.25, &zs);
        let row = grid_row(t, 0.25);
        let (g, _) = smart_initial_guess(&term, &model());
        let weights = term_weights(&term, &WeightConfig::default());
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
        let (g_obj, _) = objective(&g, &model(), &term, &weights);
        assert!(fit.objective <= g_obj + 1e-18);
    }

    #[test]
    fn deterministic_given_seed() {
        let truth = feasible_truth();
        let t = 0.5;
        let zs: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
        let term = synthetic_term(&truth, t, 0.25, &zs);
        let row = grid_row(t, 0.25);
        let run = || {
            fit_term(
                &term,
                &row,
                &model(),
                &WeightConfig::default(),
                &OptimizerConfig { seed: 42, ..Default::default() },
                VerticalBoundConvention::SignCorrected,
                None,
                None,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.evals, b.evals);
    }

    #[test]
    fn single_point_term_is_delegated() {
        let term = term_from_zw(0.5, 0.25, &[(0.0, 0.02)]);
        let err = fit_term(
            &term,
            &grid_row(0.5, 0.25),
            &model(),
            &WeightConfig::default(),
            &OptimizerConfig::default(),
            VerticalBoundConvention::SignCorrected,
            None,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SmileFitError::Optimizer(_)));
    }

    #[test]
    fn bootstrap_two_terms_calendar_feasible_and_order_invariant() {
        let truth = feasible_truth();
        let m = model();
        let sigma_star = 0.25;
        let zs: Vec<f64> = (0..9).map(|i| -1.2 + 0.3 * i as f64).collect();
        let t1 = 0.25;
        let t2 = 0.5;
        let term1 = synthetic_term(&truth, t1, sigma_star, &zs);
        let term2 = synthetic_term(&truth, t2, sigma_star, &zs);
        let grid = Grid {
            expiries: vec![t1, t2],
            forwards: vec![100.0, 100.0],
            sigma_star,
            nodes: vec![grid_row(t1, sigma_star), grid_row(t2, sigma_star)],
        };
        let run = |terms: &[TermQuotes]| {
            bootstrap(
                terms,
                &grid,
                &m,
                &WeightConfig::default(),
                &OptimizerConfig { seed: 7, ..Default::default() },
                VerticalBoundConvention::SignCorrected,
                CalibrationMode::All,
            )
            .unwrap()
        };
        let fits = run(&[term1.clone(), term2.clone()]);
        assert!(fits.iter().all(|f| f.is_some()));
        let second = fits[1].as_ref().unwrap();
        assert_eq!(second.report.calendar_ok, Some(true));
        assert!(second.report.calendar_margin.unwrap() >= -NOARB_TOL);

        // supplying terms out of order gives the same result per term
        let swapped = run(&[term2, term1]);
        assert_eq!(
            swapped[1].as_ref().unwrap().params,
            fits[0].as_ref().unwrap().params
        );
        assert_eq!(
            swapped[0].as_ref().unwrap().params,
            fits[1].as_ref().unwrap().params
        );
    }

}
