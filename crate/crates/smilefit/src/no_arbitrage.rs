//! Static no-arbitrage checks on smile slices and surfaces: butterfly
//! (Dupire denominator), Mill's-ratio vertical-spread bounds, Lee wing-slope
//! bounds, and the calendar condition in price space.

use serde::{Deserialize, Serialize};

use crate::black_scholes as bs;
use crate::error::{Result, SmileFitError};
use crate::smile::{ModelConfig, SmileParams};

/// Violations smaller than this pass; the inequalities are exact on paper but
/// need floating-point slack.
pub const NOARB_TOL: f64 = 1e-8;

/// Which lower vertical-spread bound to enforce.
///
/// The bracket R(d2)/sqrt(T) <= K dI/dK <= R(-d2)/sqrt(T) has a lower bound
/// that, read literally, excludes every flat or downward-sloping smile
/// (R > 0 always while K dI/dK <= 0 there). The sign-corrected variant uses
/// -R(d2)/sqrt(T) as the lower bound, which is the form the vertical-spread
/// argument actually supports. Both margins are always reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerticalBoundConvention {
    AsPrinted,
    #[default]
    SignCorrected,
}

/// Butterfly-spread denominator of Dupire's formula:
/// (1 - chi w_chi / (2w))^2 - (w_chi^2/4)(1/w + 1/4) + w_chichi/2.
pub fn dupire_denominator(w: f64, w_chi: f64, w_chichi: f64, chi: f64) -> Result<f64> {
    if w <= 0.0 {
        return Err(SmileFitError::Domain(format!("dupire denominator needs w > 0, got {w}")));
    }
    let g = 1.0 - chi * w_chi / (2.0 * w);
    Ok(g * g - w_chi * w_chi / 4.0 * (1.0 / w + 0.25) + w_chichi / 2.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VerticalCheck {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// Margin of the enforced lower bound (>= 0 passes).
    pub lower_margin: f64,
    /// Margin of the lower bound exactly as printed: K dI/dK - R(d2)/sqrt(T).
    pub lower_margin_as_printed: f64,
    /// R(-d2)/sqrt(T) - K dI/dK.
    pub upper_margin: f64,
}

/// Mill's-ratio vertical-spread bracket on K dI/dK.
pub fn vertical_spread_bounds(
    iv: f64,
    strike: f64,
    maturity: f64,
    di_dk: f64,
    d2: f64,
    convention: VerticalBoundConvention,
) -> VerticalCheck {
    let sqrt_t = maturity.sqrt();
    let k_di_dk = strike * di_dk;
    let r_pos = bs::mills_ratio(d2) / sqrt_t;
    let r_neg = bs::mills_ratio(-d2) / sqrt_t;
    let lower_margin_as_printed = k_di_dk - r_pos;
    let lower_margin = match convention {
        VerticalBoundConvention::AsPrinted => lower_margin_as_printed,
        VerticalBoundConvention::SignCorrected => k_di_dk + r_pos,
    };
    let upper_margin = r_neg - k_di_dk;
    let _ = iv;
    VerticalCheck {
        lower_ok: lower_margin >= -NOARB_TOL,
        upper_ok: upper_margin >= -NOARB_TOL,
        lower_margin,
        lower_margin_as_printed,
        upper_margin,
    }
}

/// One grid node's butterfly + vertical flags.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NodeCheck {
    pub z: f64,
    pub chi: f64,
    pub butterfly_ok: bool,
    pub butterfly_margin: f64,
    pub vertical_ok: bool,
    pub vertical_lower_margin: f64,
    pub vertical_lower_margin_as_printed: f64,
    pub vertical_upper_margin: f64,
}

/// Node check from total variance and its chi-derivatives at log-moneyness chi.
pub fn check_node(
    z: f64,
    chi: f64,
    w: f64,
    w_chi: f64,
    w_chichi: f64,
    maturity: f64,
    convention: VerticalBoundConvention,
) -> Result<NodeCheck> {
    let den = dupire_denominator(w, w_chi, w_chichi, chi)?;
    let sqrt_w = w.sqrt();
    // K dI/dK = w_chi / (2 sqrt(w T)); d2 from the forward-Black formula
    let k_di_dk = w_chi / (2.0 * (w * maturity).sqrt());
    let d2 = -chi / sqrt_w - sqrt_w / 2.0;
    let iv = (w / maturity).sqrt();
    // pass K=1, di_dk already folded into k_di_dk
    let vc = vertical_spread_bounds(iv, 1.0, maturity, k_di_dk, d2, convention);
    Ok(NodeCheck {
        z,
        chi,
        butterfly_ok: den >= -NOARB_TOL,
        butterfly_margin: den,
        vertical_ok: vc.lower_ok && vc.upper_ok,
        vertical_lower_margin: vc.lower_margin,
        vertical_lower_margin_as_printed: vc.lower_margin_as_printed,
        vertical_upper_margin: vc.upper_margin,
    })
}

/// Report for one expiry slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermReport {
    pub maturity: f64,
    pub nodes: Vec<NodeCheck>,
    /// Wing slope per unit log-moneyness, call side; Lee requires [0, 2].
    pub lee_plus_slope: f64,
    /// Put side; Lee requires [-2, 0].
    pub lee_minus_slope: f64,
    pub lee_plus_ok: bool,
    pub lee_minus_ok: bool,
    pub calendar_ok: Option<bool>,
    pub calendar_margin: Option<f64>,
    pub worst_butterfly: f64,
    pub worst_vertical: f64,
    pub ok: bool,
}

impl TermReport {
    fn finalize(&mut self) {
        self.worst_butterfly =
            self.nodes.iter().map(|n| n.butterfly_margin).fold(f64::INFINITY, f64::min);
        self.worst_vertical = self
            .nodes
            .iter()
            .map(|n| n.vertical_lower_margin.min(n.vertical_upper_margin))
            .fold(f64::INFINITY, f64::min);
        self.ok = self.nodes.iter().all(|n| n.butterfly_ok && n.vertical_ok)
            && self.lee_plus_ok
            && self.lee_minus_ok
            && self.calendar_ok.unwrap_or(true);
    }
}

/// Butterfly/vertical checks at every z-node plus Lee slope bounds for a
/// parameterized slice. `sigma_star` converts between z and chi = z sigma* sqrt(T).
pub fn check_term(
    params: &SmileParams<f64>,
    cfg: &ModelConfig<f64>,
    maturity: f64,
    sigma_star: f64,
    z_nodes: &[f64],
    convention: VerticalBoundConvention,
) -> Result<TermReport> {
    let scale = sigma_star * maturity.sqrt();
    let mut nodes = Vec::with_capacity(z_nodes.len());
    for &z in z_nodes {
        let (w, w_z, w_zz) = params.eval_w_derivs(cfg, maturity, z);
        if w <= 0.0 {
            return Err(SmileFitError::Domain(format!(
                "non-positive total variance {w} at z={z}"
            )));
        }
        let chi = z * scale;
        let w_chi = w_z / scale;
        let w_chichi = w_zz / (scale * scale);
        nodes.push(check_node(z, chi, w, w_chi, w_chichi, maturity, convention)?);
    }

    // asymptotic slopes per unit y sqrt(T); dividing by sigma* gives the slope
    // per unit chi that Lee's bounds constrain
    let slopes = params.wing_slopes(cfg, maturity);
    let lee_plus = slopes.phi_plus / sigma_star;
    let lee_minus = slopes.phi_minus / sigma_star;
    let mut report = TermReport {
        maturity,
        nodes,
        lee_plus_slope: lee_plus,
        lee_minus_slope: lee_minus,
        lee_plus_ok: lee_plus >= -NOARB_TOL && lee_plus <= 2.0 + NOARB_TOL,
        lee_minus_ok: lee_minus <= NOARB_TOL && lee_minus >= -2.0 - NOARB_TOL,
        calendar_ok: None,
        calendar_margin: None,
        worst_butterfly: f64::INFINITY,
        worst_vertical: f64::INFINITY,
        ok: true,
    };
    report.finalize();
    Ok(report)
}

/// Node checks for a slice known only by its w values at the z-nodes
/// (interpolated terms): chi-derivatives by central finite differences.
pub fn check_term_values(
    maturity: f64,
    sigma_star: f64,
    z_nodes: &[f64],
    w_values: &[f64],
    convention: VerticalBoundConvention,
) -> Result<TermReport> {
    if z_nodes.len() != w_values.len() || z_nodes.len() < 3 {
        return Err(SmileFitError::Input(
            "value-based term check needs >= 3 matching nodes".into(),
        ));
    }
    let scale = sigma_star * maturity.sqrt();
    let mut nodes = Vec::new();
    for i in 1..z_nodes.len() - 1 {
        let (zl, z, zr) = (z_nodes[i - 1], z_nodes[i], z_nodes[i + 1]);
        let (wl, w, wr) = (w_values[i - 1], w_values[i], w_values[i + 1]);
        if w <= 0.0 {
            return Err(SmileFitError::Domain(format!(
                "non-positive total variance {w} at z={z}"
            )));
        }
        let hl = z - zl;
        let hr = zr - z;
        // unequal-spacing central differences
        let w_z = (wr * hl * hl - wl * hr * hr + w * (hr * hr - hl * hl)) / (hl * hr * (hl + hr));
        let w_zz = 2.0 * (wl * hr + wr * hl - w * (hl + hr)) / (hl * hr * (hl + hr));
        let chi = z * scale;
        nodes.push(check_node(z, chi, w, w_z / scale, w_zz / (scale * scale), maturity, convention)?);
    }
    let mut report = TermReport {
        maturity,
        nodes,
        lee_plus_slope: 0.0,
        lee_minus_slope: 0.0,
        lee_plus_ok: true,
        lee_minus_ok: true,
        calendar_ok: None,
        calendar_margin: None,
        worst_butterfly: f64::INFINITY,
        worst_vertical: f64::INFINITY,
        ok: true,
    };
    report.finalize();
    Ok(report)
}

/// Calendar condition in price space: undiscounted calls at the same strikes
/// must be non-decreasing in maturity.
pub fn check_calendar(calls_earlier: &[f64], calls_later: &[f64]) -> (bool, f64) {
    let margin = calls_earlier
        .iter()
        .zip(calls_later)
        .map(|(c1, c2)| c2 - c1)
        .fold(f64::INFINITY, f64::min);
    (margin >= -NOARB_TOL, margin)
}

/// Full-surface report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoArbReport {
    pub terms: Vec<TermReport>,
    pub ok: bool,
}

impl NoArbReport {
    pub fn new(terms: Vec<TermReport>) -> Self {
        let ok = terms.iter().all(|t| t.ok);
        Self { terms, ok }
    }

    /// Human-readable list of failing nodes, for rejection messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.terms {
            for n in &t.nodes {
                if !n.butterfly_ok {
                    out.push(format!(
                        "T={:.4} z={:.4}: butterfly margin {:.3e}",
                        t.maturity, n.z, n.butterfly_margin
                    ));
                }
                if !n.vertical_ok {
                    out.push(format!(
                        "T={:.4} z={:.4}: vertical margins {:.3e}/{:.3e}",
                        t.maturity, n.z, n.vertical_lower_margin, n.vertical_upper_margin
                    ));
                }
            }
            if !t.lee_plus_ok {
                out.push(format!("T={:.4}: call-wing slope {:.4} outside [0,2]", t.maturity, t.lee_plus_slope));
            }
            if !t.lee_minus_ok {
                out.push(format!("T={:.4}: put-wing slope {:.4} outside [-2,0]", t.maturity, t.lee_minus_slope));
            }
            if t.calendar_ok == Some(false) {
                out.push(format!(
                    "T={:.4}: calendar margin {:.3e}",
                    t.maturity,
                    t.calendar_margin.unwrap_or(f64::NAN)
                ));
            }
        }
        out
    }
}
