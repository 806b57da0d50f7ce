//! Surface assembly: calibrated terms evaluated on the grid, remaining
//! expiries filled by arbitrage-free time interpolation of undiscounted call
//! prices, extrapolation beyond the calibrated span, the single-quote anchor
//! trick, Dupire local volatility, and the implied density.

use serde::{Deserialize, Serialize};

use crate::black_scholes as bs;
use crate::black_scholes::OptionType;
use crate::calibration::FitResult;
use crate::error::{Result, SmileFitError};
use crate::market_data::{Grid, TermQuotes};
use crate::no_arbitrage::{self, NoArbReport, VerticalBoundConvention, NOARB_TOL};
use crate::smile::{ModelConfig, SmileParams};

/// Where a term's variance row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSource {
    Calibrated,
    Interpolated,
    Extrapolated,
}

/// How the interpolation anchor a(T) was resolved for a filled term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorUsed {
    AnchorStrikeQuote,
    SingleQuote,
    Table,
    Linear,
}

/// One expiry of the surface at the shared strike set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermSlice {
    pub maturity: f64,
    pub forward: f64,
    /// Present iff source == Calibrated.
    pub params: Option<SmileParams<f64>>,
    pub source: TermSource,
    /// How a(T) was chosen for interpolated/extrapolated terms.
    pub anchor_used: Option<AnchorUsed>,
    /// Total variance at the shared strikes.
    pub w: Vec<f64>,
}

/// The assembled surface: total variance on a strikes x expiries grid, with
/// the no-arbitrage report that admitted it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub expiries: Vec<f64>,
    pub forwards: Vec<f64>,
    pub strikes: Vec<f64>,
    pub sigma_star: f64,
    pub rate: f64,
    pub terms: Vec<TermSlice>,
    pub report: NoArbReport,
    /// Per-term: model call below the Lee-envelope call at both edge strikes.
    pub lee_envelope_ok: Vec<bool>,
}

impl SurfaceGrid {
    /// Implied volatility at (expiry i, strike j).
    pub fn iv(&self, i: usize, j: usize) -> f64 {
        (self.terms[i].w[j] / self.expiries[i]).sqrt()
    }

    /// Normalized strikes of expiry i.
    pub fn z_row(&self, i: usize) -> Vec<f64> {
        let scale = self.sigma_star * self.expiries[i].sqrt();
        self.strikes.iter().map(|k| (k / self.forwards[i]).ln() / scale).collect()
    }

    /// Undiscounted call prices of expiry i at the shared strikes.
    pub fn call_prices(&self, i: usize) -> Result<Vec<f64>> {
        let t = &self.terms[i];
        self.strikes
            .iter()
            .zip(&t.w)
            .map(|(&k, &w)| bs::bs_call_from_variance(t.forward, k, w))
            .collect()
    }
}

/// Choice of the monotone anchor function a(T).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnchorRule {
    /// a(T) = undiscounted call at this strike: the quoted price at filled
    /// expiries, the model price at calibrated endpoints. Falls back to
    /// `Linear` (with a note in `anchor_used`) when the quote is missing.
    CallAtStrike { strike: f64 },
    /// User-supplied monotone table of (T, a) pairs, linearly interpolated.
    Table { points: Vec<(f64, f64)> },
    /// a(T) = T.
    Linear,
}

/// Time interpolation/extrapolation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolatorConfig {
    pub anchor: AnchorRule,
    /// Extrapolation exponent, must be <= -0.5; -1 is the safe default.
    pub k: f64,
}

impl Default for InterpolatorConfig {
    fn default() -> Self {
        Self { anchor: AnchorRule::Linear, k: -1.0 }
    }
}

/// alpha(T) = (a(T2) - a(T)) / (a(T2) - a(T1)) for an interpolation span;
/// errors unless the triple is strictly monotone so alpha lands in [0,1].
pub fn interpolation_alpha(a1: f64, at: f64, a2: f64) -> Result<f64> {
    let den = a2 - a1;
    if den.abs() < 1e-14 {
        return Err(SmileFitError::Domain(
            "anchor a(T) is not monotone over the interpolation span (a(T1) == a(T2))".into(),
        ));
    }
    let alpha = (a2 - at) / den;
    if !(-1e-12..=1.0 + 1e-12).contains(&alpha) {
        return Err(SmileFitError::Domain(format!(
            "interpolation weight alpha={alpha:.6} outside [0,1]: anchor values \
             a(T1)={a1:.6e}, a(T)={at:.6e}, a(T2)={a2:.6e} are not monotone in T"
        )));
    }
    Ok(alpha.clamp(0.0, 1.0))
}

/// Price-space interpolation C(K,T) = alpha C(K,T1) + (1-alpha) C(K,T2).
/// At alpha = 1 or 0 the result is bit-identical to the corresponding input.
pub fn interpolate_term(c1: &[f64], c2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if c1.len() != c2.len() {
        return Err(SmileFitError::Input("interpolation strike sets differ".into()));
    }
    if alpha == 1.0 {
        return Ok(c1.to_vec());
    }
    if alpha == 0.0 {
        return Ok(c2.to_vec());
    }
    Ok(c1.iter().zip(c2).map(|(p1, p2)| alpha * p1 + (1.0 - alpha) * p2).collect())
}

/// Outcome of an extrapolation: the prices, the exponent actually used
/// (the requested one, or -1 after the automatic tightening), and whether the
/// scaled-price ordering T1^k C1 < T2^k C2 held at every strike.
#[derive(Debug, Clone)]
pub struct Extrapolated {
    pub prices: Vec<f64>,
    pub k_used: f64,
    pub tightened: bool,
    pub ordering_ok: bool,
}

/// Price-space extrapolation T^k C(K,T) = alpha T1^k C1 + (1-alpha) T2^k C2
/// for T outside [T1, T2], with alpha extended through the same anchor
/// formula.
///
/// Requires k <= -0.5. Exponents in (-1, -0.5] are tightened to -1
/// automatically: the Lee-envelope argument behind the shallower exponents
/// rests on a convexity property that fails close to ATM, so such requests
/// are rejected in favor of the safe default. The hard error is an output
/// that violates the calendar against the nearest input term; the
/// scaled-price ordering (sufficient, not necessary, for that calendar) is
/// reported as a diagnostic.
pub fn extrapolate_term(
    c1: &[f64],
    t1: f64,
    c2: &[f64],
    t2: f64,
    t: f64,
    alpha: f64,
    k: f64,
) -> Result<Extrapolated> {
    if !(k <= -0.5) {
        return Err(SmileFitError::Config(format!(
            "extrapolation exponent k={k} violates k <= -0.5"
        )));
    }
    if c1.len() != c2.len() {
        return Err(SmileFitError::Input("extrapolation strike sets differ".into()));
    }
    let tightened = k > -1.0;
    let k_used = if tightened { -1.0 } else { k };
    let (s1, s2, st) = (t1.powf(k_used), t2.powf(k_used), t.powf(k_used));
    let ordering_ok = c1.iter().zip(c2).all(|(p1, p2)| s1 * p1 - s2 * p2 < 0.0);
    let prices: Vec<f64> = c1
        .iter()
        .zip(c2)
        .map(|(p1, p2)| (alpha * s1 * p1 + (1.0 - alpha) * s2 * p2) / st)
        .collect();
    // the output must sit on the right side of the nearest input term
    let (near, after) = if t >= t2 { (c2, true) } else { (c1, false) };
    for (j, (p, pn)) in prices.iter().zip(near).enumerate() {
        let gap = if after { p - pn } else { pn - p };
        if gap < -NOARB_TOL {
            return Err(SmileFitError::ArbitrageRejected(format!(
                "extrapolation precondition failed: calendar violated at strike \
                 index {j} (gap {gap:.3e}, k={k_used})"
            )));
        }
    }
    Ok(Extrapolated { prices, k_used, tightened, ordering_ok })
}

/// A single market quote defining an entire term via the anchor trick.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SingleQuote {
    pub strike: f64,
    pub maturity: f64,
    pub iv: f64,
}

/// Fill a term from one quote: a(T) = C(K_q, T, I_q) makes the interpolated
/// term reproduce the quote's price exactly.
///
/// `c1`/`c2` are the bracketing terms' prices at the shared strikes; `e1`/`e2`
/// evaluate those terms' calls at the quote's (possibly off-grid) strike.
#[allow(clippy::too_many_arguments)]
pub fn single_quote_term(
    quote: &SingleQuote,
    forward_t: f64,
    c1: &[f64],
    a1: f64,
    t1: f64,
    c2: &[f64],
    a2: f64,
    t2: f64,
) -> Result<(Vec<f64>, f64)> {
    if !(t1 < quote.maturity && quote.maturity < t2) {
        return Err(SmileFitError::Input(format!(
            "single-quote maturity {} outside the bracketing span ({t1}, {t2})",
            quote.maturity
        )));
    }
    let at = bs::bs_call(forward_t, quote.strike, quote.maturity, quote.iv)?;
    let (lo, hi) = (a1.min(a2), a1.max(a2));
    if at <= lo || at >= hi {
        return Err(SmileFitError::ArbitrageRejected(format!(
            "single quote violates the calendar against its neighbors: anchor call \
             {at:.6e} outside ({lo:.6e}, {hi:.6e})"
        )));
    }
    let alpha = interpolation_alpha(a1, at, a2)?;
    Ok((interpolate_term(c1, c2, alpha)?, alpha))
}

fn anchor_table_value(points: &[(f64, f64)], t: f64) -> Result<f64> {
    if points.len() < 2 || points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(SmileFitError::Config(
            "anchor table needs >= 2 points with strictly increasing T".into(),
        ));
    }
    if points.windows(2).any(|w| w[0].1 >= w[1].1) {
        return Err(SmileFitError::Config("anchor table a(T) must be strictly increasing".into()));
    }
    let (first, last) = (points[0], points[points.len() - 1]);
    if t <= first.0 {
        // linear continuation keeps monotonicity
        let (p, q) = (points[0], points[1]);
        return Ok(p.1 + (t - p.0) * (q.1 - p.1) / (q.0 - p.0));
    }
    if t >= last.0 {
        let (p, q) = (points[points.len() - 2], last);
        return Ok(q.1 + (t - q.0) * (q.1 - p.1) / (q.0 - p.0));
    }
    let j = points.iter().position(|&(ti, _)| ti > t).unwrap();
    let (p, q) = (points[j - 1], points[j]);
    Ok(p.1 + (t - p.0) * (q.1 - p.1) / (q.0 - p.0))
}

/// Call price of a calibrated slice at an arbitrary strike.
fn slice_call_at(
    slice: &TermSlice,
    model: &ModelConfig<f64>,
    sigma_star: f64,
    strike: f64,
) -> Result<f64> {
    match &slice.params {
        Some(p) => {
            let z = (strike / slice.forward).ln() / (sigma_star * slice.maturity.sqrt());
            let w = p.eval_w(model, slice.maturity, z);
            bs::bs_call_from_variance(slice.forward, strike, w.max(1e-12))
        }
        None => Err(SmileFitError::Domain(
            "anchor evaluation needs a calibrated term at the span endpoint".into(),
        )),
    }
}

fn invert_row(prices: &[f64], forward: f64, strikes: &[f64], maturity: f64) -> Result<Vec<f64>> {
    prices
        .iter()
        .zip(strikes)
        .map(|(&p, &k)| {
            let vol = bs::implied_vol(p, forward, k, maturity, OptionType::Call)?;
            Ok(vol * vol * maturity)
        })
        .collect()
}

/// Model call price below the Lee-envelope call C(K, T, sqrt(2|chi|/T)) at
/// both edge strikes; equivalently w < 2|chi| there.
fn lee_envelope_ok(w: &[f64], strikes: &[f64], forward: f64) -> bool {
    let edges = [0, strikes.len() - 1];
    edges.iter().all(|&j| {
        let chi = (strikes[j] / forward).ln();
        w[j] < 2.0 * chi.abs()
    })
}

/// Assemble the surface: calibrated terms from their parameters, the other
/// grid expiries by price-space interpolation/extrapolation, then the full
/// no-arbitrage report. A failing report rejects the surface.
#[allow(clippy::too_many_arguments)]
pub fn build_surface(
    terms: &[TermQuotes],
    fits: &[Option<FitResult>],
    grid: &Grid,
    model: &ModelConfig<f64>,
    cfg: &InterpolatorConfig,
    convention: VerticalBoundConvention,
    rate: f64,
) -> Result<SurfaceGrid> {
    if terms.len() != fits.len() {
        return Err(SmileFitError::Input("terms and fits are misaligned".into()));
    }
    if grid.nodes.is_empty() {
        return Err(SmileFitError::Input("empty grid".into()));
    }
    let strikes: Vec<f64> = grid.nodes[0].iter().map(|n| n.strike).collect();
    for row in &grid.nodes[1..] {
        let same = row.len() == strikes.len()
            && row.iter().zip(&strikes).all(|(n, &k)| (n.strike - k).abs() < 1e-9);
        if !same {
            return Err(SmileFitError::Input(
                "surface assembly needs one strike set shared by all expiries; \
                 use a strike_list grid"
                    .into(),
            ));
        }
    }
    if strikes.len() < 2 {
        return Err(SmileFitError::Input("surface needs at least 2 strikes".into()));
    }

    // calibrated slices at their grid expiries
    let mut slices: Vec<Option<TermSlice>> = vec![None; grid.expiries.len()];
    for (term, fit) in terms.iter().zip(fits) {
        let Some(fit) = fit else { continue };
        let Some(i) = grid.expiries.iter().position(|&t| (t - term.maturity).abs() < 1e-12)
        else {
            continue;
        };
        let w: Vec<f64> = grid.nodes[i]
            .iter()
            .map(|n| fit.params.eval_w(model, term.maturity, n.z))
            .collect();
        if let Some(bad) = w.iter().position(|&v| !(v > 0.0)) {
            return Err(SmileFitError::Domain(format!(
                "calibrated term T={:.4} has non-positive variance at strike {}",
                term.maturity, strikes[bad]
            )));
        }
        slices[i] = Some(TermSlice {
            maturity: term.maturity,
            forward: grid.forwards[i],
            params: Some(fit.params),
            source: TermSource::Calibrated,
            anchor_used: None,
            w,
        });
    }

    let calibrated: Vec<usize> =
        (0..slices.len()).filter(|&i| slices[i].is_some()).collect();
    if calibrated.is_empty() {
        return Err(SmileFitError::Input("no calibrated term matches a grid expiry".into()));
    }
    if calibrated.len() == 1 && slices.len() > 1 {
        return Err(SmileFitError::Input(
            "filling other expiries needs at least 2 calibrated terms".into(),
        ));
    }

    let prices_of = |s: &TermSlice| -> Result<Vec<f64>> {
        strikes
            .iter()
            .zip(&s.w)
            .map(|(&k, &w)| bs::bs_call_from_variance(s.forward, k, w))
            .collect()
    };
    let mut cal_prices: Vec<(usize, Vec<f64>)> = Vec::new();
    for &i in &calibrated {
        cal_prices.push((i, prices_of(slices[i].as_ref().unwrap())?));
    }

    // anchor value a(T) for a span endpoint (calibrated slice) at a strike
    // market quote at (expiry, strike), if present
    let quote_at = |t: f64, strike: f64| -> Option<f64> {
        let term = terms.iter().find(|q| (q.maturity - t).abs() < 1e-12)?;
        let p = term.points.iter().find(|p| (p.strike - strike).abs() < 1e-9)?;
        Some(p.iv)
    };
    let single_quote_of = |t: f64| -> Option<SingleQuote> {
        let term = terms.iter().find(|q| (q.maturity - t).abs() < 1e-12)?;
        if term.points.len() == 1 {
            let p = &term.points[0];
            Some(SingleQuote { strike: p.strike, maturity: t, iv: p.iv })
        } else {
            None
        }
    };

    for i in 0..slices.len() {
        if slices[i].is_some() {
            continue;
        }
        let t = grid.expiries[i];
        let forward = grid.forwards[i];
        let lo = calibrated.iter().rev().find(|&&c| grid.expiries[c] < t).copied();
        let hi = calibrated.iter().find(|&&c| grid.expiries[c] > t).copied();
        let price_row = |c: usize| -> &Vec<f64> {
            &cal_prices.iter().find(|(i2, _)| *i2 == c).unwrap().1
        };
        let (prices, source, anchor_used) = match (lo, hi) {
            (Some(l), Some(h)) => {
                let (t1, t2) = (grid.expiries[l], grid.expiries[h]);
                let (c1, c2) = (price_row(l), price_row(h));
                // resolve a(T1), a(T), a(T2)
                let resolved: (f64, f64, f64, AnchorUsed) = match &cfg.anchor {
                    AnchorRule::Table { points } => (
                        anchor_table_value(points, t1)?,
                        anchor_table_value(points, t)?,
                        anchor_table_value(points, t2)?,
                        AnchorUsed::Table,
                    ),
                    AnchorRule::CallAtStrike { strike } => {
                        if let Some(iv) = quote_at(t, *strike) {
                            (
                                slice_call_at(slices[l].as_ref().unwrap(), model, grid.sigma_star, *strike)?,
                                bs::bs_call(forward, *strike, t, iv)?,
                                slice_call_at(slices[h].as_ref().unwrap(), model, grid.sigma_star, *strike)?,
                                AnchorUsed::AnchorStrikeQuote,
                            )
                        } else if let Some(q) = single_quote_of(t) {
                            (
                                slice_call_at(slices[l].as_ref().unwrap(), model, grid.sigma_star, q.strike)?,
                                bs::bs_call(forward, q.strike, t, q.iv)?,
                                slice_call_at(slices[h].as_ref().unwrap(), model, grid.sigma_star, q.strike)?,
                                AnchorUsed::SingleQuote,
                            )
                        } else {
                            (t1, t, t2, AnchorUsed::Linear)
                        }
                    }
                    AnchorRule::Linear => (t1, t, t2, AnchorUsed::Linear),
                };
                let (a1, at, a2, used) = resolved;
                let alpha = interpolation_alpha(a1, at, a2)?;
                (interpolate_term(c1, c2, alpha)?, TermSource::Interpolated, used)
            }
            (l, h) => {
                // outside the calibrated span: the two nearest calibrated terms
                let (i1, i2) = match (l, h) {
                    (None, Some(_)) => (calibrated[0], calibrated[1]),
                    (Some(_), None) => {
                        (calibrated[calibrated.len() - 2], calibrated[calibrated.len() - 1])
                    }
                    _ => unreachable!(),
                };
                let (t1, t2) = (grid.expiries[i1], grid.expiries[i2]);
                // a(T) = T keeps alpha well-defined beyond the span
                let alpha = (t2 - t) / (t2 - t1);
                let ex = extrapolate_term(
                    price_row(i1),
                    t1,
                    price_row(i2),
                    t2,
                    t,
                    alpha,
                    cfg.k,
                )?;
                (ex.prices, TermSource::Extrapolated, AnchorUsed::Linear)
            }
        };
        let w = invert_row(&prices, forward, &strikes, t)?;
        slices[i] = Some(TermSlice {
            maturity: t,
            forward,
            params: None,
            source,
            anchor_used: Some(anchor_used),
            w,
        });
    }

    let terms_out: Vec<TermSlice> = slices.into_iter().map(Option::unwrap).collect();

    // full no-arbitrage report: per-term node checks plus the calendar
    let mut reports = Vec::with_capacity(terms_out.len());
    let mut prev_prices: Option<Vec<f64>> = None;
    for (i, s) in terms_out.iter().enumerate() {
        let z_row: Vec<f64> = grid.nodes[i].iter().map(|n| n.z).collect();
        let mut rep = match &s.params {
            Some(p) => no_arbitrage::check_term(
                p,
                model,
                s.maturity,
                grid.sigma_star,
                &z_row,
                convention,
            )?,
            None => no_arbitrage::check_term_values(
                s.maturity,
                grid.sigma_star,
                &z_row,
                &s.w,
                convention,
            )?,
        };
        let prices = prices_of(s)?;
        if let Some(prev) = &prev_prices {
            let (ok, margin) = no_arbitrage::check_calendar(prev, &prices);
            rep.calendar_ok = Some(ok);
            rep.calendar_margin = Some(margin);
            rep.ok = rep.ok && ok;
        }
        prev_prices = Some(prices);
        reports.push(rep);
    }
    let report = NoArbReport::new(reports);
    if !report.ok {
        return Err(SmileFitError::ArbitrageRejected(format!(
            "surface rejected: {}",
            report.violations().join("; ")
        )));
    }
    let lee_env: Vec<bool> =
        terms_out.iter().map(|s| lee_envelope_ok(&s.w, &strikes, s.forward)).collect();

    Ok(SurfaceGrid {
        expiries: grid.expiries.clone(),
        forwards: grid.forwards.clone(),
        strikes,
        sigma_star: grid.sigma_star,
        rate,
        terms: terms_out,
        report,
        lee_envelope_ok: lee_env,
    })
}

/// Local volatility on the surface's interior strikes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalVolSurface {
    pub expiries: Vec<f64>,
    /// Interior strikes (the strike-space derivatives need both neighbors).
    pub strikes: Vec<f64>,
    /// values[i][j]: annualized local volatility at (expiry i, strike j).
    pub values: Vec<Vec<f64>>,
}

/// Unequal-spacing three-point first derivative at the middle point.
fn deriv3(xl: f64, x: f64, xr: f64, fl: f64, f: f64, fr: f64) -> f64 {
    let (hl, hr) = (x - xl, xr - x);
    (fr * hl * hl - fl * hr * hr + f * (hr * hr - hl * hl)) / (hl * hr * (hl + hr))
}

/// Unequal-spacing second derivative at the middle point.
fn deriv3_2(xl: f64, x: f64, xr: f64, fl: f64, f: f64, fr: f64) -> f64 {
    let (hl, hr) = (x - xl, xr - x);
    2.0 * ((fr - f) / hr - (f - fl) / hl) / (hl + hr)
}

/// Dupire local volatility: sigma_loc^2 = dw/dT (at fixed chi) divided by the
/// butterfly denominator. The time derivative uses chords of w at fixed
/// strike plus the rate correction r * w_chi that moves the derivative to
/// fixed forward log-moneyness.
pub fn local_vol(surface: &SurfaceGrid, model: &ModelConfig<f64>) -> Result<LocalVolSurface> {
    let n = surface.expiries.len();
    let m = surface.strikes.len();
    if n < 2 {
        return Err(SmileFitError::Input("local volatility needs >= 2 expiries".into()));
    }
    if m < 3 {
        return Err(SmileFitError::Input("local volatility needs >= 3 strikes".into()));
    }
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = surface.expiries[i];
        let s = &surface.terms[i];
        let scale = surface.sigma_star * t.sqrt();
        let z_row = surface.z_row(i);
        let mut row = Vec::with_capacity(m - 2);
        for j in 1..m - 1 {
            let chi = z_row[j] * scale;
            // chi-derivatives: analytic when the term is calibrated
            let (w, w_chi, w_chichi) = match &s.params {
                Some(p) => {
                    let (w, w_z, w_zz) = p.eval_w_derivs(model, t, z_row[j]);
                    (w, w_z / scale, w_zz / (scale * scale))
                }
                None => {
                    let (cl, c, cr) =
                        (z_row[j - 1] * scale, chi, z_row[j + 1] * scale);
                    let (wl, w, wr) = (s.w[j - 1], s.w[j], s.w[j + 1]);
                    (
                        w,
                        deriv3(cl, c, cr, wl, w, wr),
                        deriv3_2(cl, c, cr, wl, w, wr),
                    )
                }
            };
            // dw/dT at fixed strike by chords across neighboring expiries
            let dw_dt_k = if i == 0 {
                (surface.terms[1].w[j] - s.w[j]) / (surface.expiries[1] - t)
            } else if i == n - 1 {
                (s.w[j] - surface.terms[n - 2].w[j]) / (t - surface.expiries[n - 2])
            } else {
                deriv3(
                    surface.expiries[i - 1],
                    t,
                    surface.expiries[i + 1],
                    surface.terms[i - 1].w[j],
                    s.w[j],
                    surface.terms[i + 1].w[j],
                )
            };
            let dw_dt = dw_dt_k + surface.rate * w_chi;
            let den = no_arbitrage::dupire_denominator(w, w_chi, w_chichi, chi)?;
            // a denominator inside the check tolerance is an active butterfly
            // constraint: the density vanishes and local variance diverges, so
            // floor it instead of letting the ratio flip sign
            if den < -NOARB_TOL {
                return Err(SmileFitError::ArbitrageRejected(format!(
                    "butterfly denominator {den:.3e} at T={t:.4} K={:.4}",
                    surface.strikes[j]
                )));
            }
            if dw_dt < -1e-6 {
                return Err(SmileFitError::ArbitrageRejected(format!(
                    "negative calendar numerator {dw_dt:.3e} at T={t:.4} K={:.4}",
                    surface.strikes[j]
                )));
            }
            let var = dw_dt.max(0.0) / den.max(NOARB_TOL);
            row.push(var.sqrt());
        }
        values.push(row);
    }
    Ok(LocalVolSurface {
        expiries: surface.expiries.clone(),
        strikes: surface.strikes[1..m - 1].to_vec(),
        values,
    })
}

/// One expiry of the implied density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRow {
    pub maturity: f64,
    /// Interior strikes carrying the second differences.
    pub strikes: Vec<f64>,
    pub pdf: Vec<f64>,
    /// Trapezoid integral of the pdf over the interior strikes.
    pub integral: f64,
    /// Estimated probability mass below/above the strike range, from the
    /// one-sided call-price slopes at the edges.
    pub tail_mass: (f64, f64),
    /// integral + both tails; close to 1 by construction of the estimates.
    pub total_mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySurface {
    pub rows: Vec<DensityRow>,
}

/// Breeden-Litzenberger density of expiry i: second central differences of
/// the undiscounted call prices over the strike grid.
pub fn implied_density_row(surface: &SurfaceGrid, i: usize) -> Result<DensityRow> {
    let m = surface.strikes.len();
    if m < 3 {
        return Err(SmileFitError::Input("insufficient strikes for second difference".into()));
    }
    let t = surface.expiries[i];
    let ks = &surface.strikes;
    let prices = surface.call_prices(i)?;
    let mut pdf = Vec::with_capacity(m - 2);
    for j in 1..m - 1 {
        let d2 = deriv3_2(ks[j - 1], ks[j], ks[j + 1], prices[j - 1], prices[j], prices[j + 1]);
        if d2 < -1e-8 {
            return Err(SmileFitError::ArbitrageRejected(format!(
                "negative implied density {d2:.3e} at T={t:.4} K={:.4}",
                ks[j]
            )));
        }
        pdf.push(d2.max(0.0));
    }
    let strikes = ks[1..m - 1].to_vec();
    let mut integral = 0.0;
    for j in 1..pdf.len() {
        integral += 0.5 * (pdf[j] + pdf[j - 1]) * (strikes[j] - strikes[j - 1]);
    }
    // half-cells between the edge slopes and the first/last interior nodes
    integral += 0.5 * pdf[0] * (ks[1] - ks[0]);
    integral += 0.5 * pdf[pdf.len() - 1] * (ks[m - 1] - ks[m - 2]);
    let slope_left = (prices[1] - prices[0]) / (ks[1] - ks[0]);
    let slope_right = (prices[m - 1] - prices[m - 2]) / (ks[m - 1] - ks[m - 2]);
    let tail_left = (1.0 + slope_left).max(0.0);
    let tail_right = (-slope_right).max(0.0);
    Ok(DensityRow {
        maturity: t,
        strikes,
        pdf,
        integral,
        tail_mass: (tail_left, tail_right),
        total_mass: integral + tail_left + tail_right,
    })
}

/// Densities for every expiry.
pub fn implied_density(surface: &SurfaceGrid) -> Result<DensitySurface> {
    let rows = (0..surface.expiries.len())
        .map(|i| implied_density_row(surface, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(DensitySurface { rows })
}
