//! Smart initial guess for one term: locate the hinge from discrete second
//! differences, read off w_C and S_C locally, then recover S, K from two
//! same-side points in closed form and the wing steepnesses by scalar
//! root-solving.

use crate::market_data::TermQuotes;
use crate::smile::{ModelConfig, SmileParams};

/// Fallback parameters when the construction fails; w_C comes from the ATM
/// total variance.
pub fn default_guess(term: &TermQuotes) -> SmileParams<f64> {
    SmileParams {
        w_c: (term.sigma_atm * term.sigma_atm * term.maturity).max(1e-6),
        s_c: 0.0,
        c: 0.0,
        s: -0.2,
        kurt: 1.0,
        alpha: 1.0,
        beta: 1.0,
    }
}

#[derive(Debug, Clone)]
pub struct GuessDiagnostics {
    pub used_fallback: bool,
    pub hinge_from_iv_min: bool,
    pub mixed_sign_interpolation: bool,
}

/// Second differences of (x, v) on an unequal grid, at interior indices.
fn second_differences(xs: &[f64], vs: &[f64]) -> Vec<f64> {
    (1..xs.len() - 1)
        .map(|i| {
            let hl = xs[i] - xs[i - 1];
            let hr = xs[i + 1] - xs[i];
            2.0 * (vs[i - 1] * hr + vs[i + 1] * hl - vs[i] * (hl + hr)) / (hl * hr * (hl + hr))
        })
        .collect()
}

/// Bisection on [lo, hi] assuming g(lo) and g(hi) bracket a root.
fn bisect<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut flo = g(lo);
    let fhi = g(hi);
    if !flo.is_finite() || !fhi.is_finite() || flo * fhi > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = g(mid);
        if !fm.is_finite() {
            return None;
        }
        if fm.abs() < 1e-14 || hi - lo < 1e-13 {
            return Some(mid);
        }
        if flo * fm <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Scan a log-spaced grid for a sign change of g and bisect it.
fn root_scan<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64) -> Option<f64> {
    let n = 200;
    let ratio = (hi / lo).powf(1.0 / n as f64);
    let mut x_prev = lo;
    let mut g_prev = g(lo);
    for i in 1..=n {
        let x = lo * ratio.powi(i);
        let gx = g(x);
        if g_prev.is_finite() && gx.is_finite() && g_prev * gx <= 0.0 {
            return bisect(&g, x_prev, x);
        }
        x_prev = x;
        g_prev = gx;
    }
    None
}

struct Frame {
    w_c: f64,
    s_c: f64,
    sqrt_t: f64,
    p: f64,
}

impl Frame {
    /// kappa(y) = [w(y+C) - w_C - S_C y/(1+y^2)] / (y tanh(p y) sqrt(T)).
    fn kappa(&self, y: f64, w: f64) -> f64 {
        (w - self.w_c - self.s_c * y / (1.0 + y * y)) / (y * (self.p * y).tanh() * self.sqrt_t)
    }
}

/// Wing function for a trial steepness on the side matching the sign of y.
fn y_fn(cfg: &ModelConfig<f64>, wing: f64, y: f64) -> f64 {
    if wing.abs() < crate::smile::DEGENERATE_WING_EPS {
        return -cfg.sigmoid.origin_slope::<f64>() * y;
    }
    cfg.sigmoid.eval(-wing * y).0 / wing
}

/// Closed form for the outer coefficients: solve S Y(y1) + K Y(y1)^2 = k1
/// and the same equation at y2.
fn solve_sk(y1: f64, y2: f64, k1: f64, k2: f64) -> Option<(f64, f64)> {
    let det = y1 * y2 * y2 - y2 * y1 * y1;
    if det.abs() < 1e-14 {
        return None;
    }
    let s = (k1 * y2 * y2 - k2 * y1 * y1) / det;
    let k = (k2 * y1 - k1 * y2) / det;
    if s.is_finite() && k.is_finite() {
        Some((s, k))
    } else {
        None
    }
}

pub fn smart_initial_guess(
    term: &TermQuotes,
    cfg: &ModelConfig<f64>,
) -> (SmileParams<f64>, GuessDiagnostics) {
    let mut diag = GuessDiagnostics {
        used_fallback: false,
        hinge_from_iv_min: false,
        mixed_sign_interpolation: false,
    };
    match try_guess(term, cfg, &mut diag) {
        Some(p) if p.is_finite() => (p, diag),
        _ => {
            diag.used_fallback = true;
            (default_guess(term), diag)
        }
    }
}

fn try_guess(
    term: &TermQuotes,
    cfg: &ModelConfig<f64>,
    diag: &mut GuessDiagnostics,
) -> Option<SmileParams<f64>> {
    let pts = &term.points;
    if pts.len() < 5 {
        return None;
    }
    let zs: Vec<f64> = pts.iter().map(|p| p.z).collect();
    let ws: Vec<f64> = pts.iter().map(|p| p.w_m).collect();

    // hinge: zero crossing of the discrete second derivative of w in z;
    // all-positive curvature (skew-only data) falls back to the IV minimum
    let d2 = second_differences(&zs, &ws);
    let mut c_idx: Option<usize> = None;
    let mut c_val: Option<f64> = None;
    for i in 0..d2.len() - 1 {
        if d2[i] * d2[i + 1] <= 0.0 {
            // snap to a node sitting right on the hinge, else interpolate
            let (zi, zj) = (zs[i + 1], zs[i + 2]);
            if d2[i].abs() <= 1e-3 * d2[i + 1].abs() {
                c_idx = Some(i + 1);
                c_val = Some(zi);
            } else if d2[i + 1].abs() <= 1e-3 * d2[i].abs() {
                c_idx = Some(i + 2);
                c_val = Some(zj);
            } else {
                let t = d2[i] / (d2[i] - d2[i + 1]);
                c_val = Some(zi + t * (zj - zi));
            }
            break;
        }
    }
    let c = match c_val {
        Some(c) => c,
        None => {
            diag.hinge_from_iv_min = true;
            let i = pts
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.iv.total_cmp(&b.1.iv))
                .map(|(i, _)| i)?;
            if i > 0 && i + 1 < zs.len() {
                // interior minimum: parabola vertex through the three
                // neighbouring points locates the hinge between nodes
                let (z0, z1, z2) = (zs[i - 1], zs[i], zs[i + 1]);
                let (w0, w1, w2) = (ws[i - 1], ws[i], ws[i + 1]);
                let s01 = (w1 - w0) / (z1 - z0);
                let s12 = (w2 - w1) / (z2 - z1);
                let curv = (s12 - s01) / (z2 - z0);
                // vertex of the interpolating parabola, clamped to the bracket
                let vertex = if curv > 0.0 {
                    let b = s01 - curv * (z0 + z1);
                    (-b / (2.0 * curv)).clamp(z0, z2)
                } else {
                    z1
                };
                if (vertex - z1).abs() < 1e-12 {
                    c_idx = Some(i);
                }
                vertex
            } else {
                c_idx = Some(i);
                zs[i]
            }
        }
    };

    // w_C and S_C from the local value and slope at C
    let (w_c, s_c) = match c_idx {
        Some(i) if i > 0 && i + 1 < zs.len() => {
            let hl = zs[i] - zs[i - 1];
            let hr = zs[i + 1] - zs[i];
            let slope = (ws[i + 1] * hl * hl - ws[i - 1] * hr * hr
                + ws[i] * (hr * hr - hl * hl))
                / (hl * hr * (hl + hr));
            (ws[i], slope)
        }
        _ => {
            // hinge between nodes: linear interpolation for both
            let j = zs.iter().position(|&z| z > c).unwrap_or(zs.len() - 1).max(1);
            let (z0, z1) = (zs[j - 1], zs[j]);
            let (w0, w1) = (ws[j - 1], ws[j]);
            let slope = (w1 - w0) / (z1 - z0);
            (w0 + slope * (c - z0), slope)
        }
    };
    if w_c <= 0.0 {
        return None;
    }

    let frame = Frame { w_c, s_c, sqrt_t: term.maturity.sqrt(), p: cfg.p };

    // offsets from the hinge, excluding points too close to it (kappa blows up)
    let min_offset = 1e-2_f64.min(0.1 * (zs[zs.len() - 1] - zs[0]));
    let mut pos: Vec<(f64, f64)> = Vec::new(); // (y, kappa)
    let mut neg: Vec<(f64, f64)> = Vec::new();
    for (z, w) in zs.iter().zip(&ws) {
        let y = z - c;
        if y.abs() < min_offset {
            continue;
        }
        let k = frame.kappa(y, *w);
        if !k.is_finite() {
            continue;
        }
        if y > 0.0 {
            pos.push((y, k));
        } else {
            neg.push((y, k));
        }
    }
    pos.sort_by(|a, b| b.0.total_cmp(&a.0)); // descending y
    neg.sort_by(|a, b| a.0.total_cmp(&b.0)); // ascending y (most negative first)

    // the hinge-local values are kept even when the wing construction fails;
    // only the wing parameters then revert to their defaults
    let partial = |diag: &mut GuessDiagnostics| {
        diag.used_fallback = true;
        Some(SmileParams { w_c, s_c, c, s: -0.2, kurt: 1.0, alpha: 1.0, beta: 1.0 })
    };

    if pos.len() + neg.len() < 4 || pos.is_empty() || neg.is_empty() {
        return partial(diag);
    }

    // mixed-sign shortage: interpolate an extra point onto the sparse side and
    // drop one from the rich side
    if pos.len() < 3 && neg.len() < 3 {
        diag.mixed_sign_interpolation = true;
        let grow = |side: &mut Vec<(f64, f64)>| {
            if side.len() >= 2 {
                let (y_a, k_a) = side[0];
                let (y_b, k_b) = side[1];
                let y_mid = 0.5 * (y_a + y_b);
                let t = (y_mid - y_a) / (y_b - y_a);
                side.push((y_mid, k_a + t * (k_b - k_a)));
                side.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
            }
        };
        if pos.len() >= neg.len() {
            grow(&mut neg);
        } else {
            grow(&mut pos);
        }
    }

    // choose the three-point side; widest spread preferred
    let (rich, lean, rich_positive) = if pos.len() >= 3 {
        (&pos, &neg, true)
    } else if neg.len() >= 3 {
        (&neg, &pos, false)
    } else {
        return partial(diag);
    };

    let (y1, k1) = rich[0];
    let (y2, k2) = rich[1];
    let (y3, k3) = rich[rich.len() - 1];
    let (y4, k4) = lean[0];

    // root-solve the rich wing's steepness with S, K eliminated via the
    // two-point closed form
    let residual = |wing: f64| {
        let yy1 = y_fn(cfg, wing, y1);
        let yy2 = y_fn(cfg, wing, y2);
        let yy3 = y_fn(cfg, wing, y3);
        match solve_sk(yy1, yy2, k1, k2) {
            Some((s, k)) => s * yy3 + k * yy3 * yy3 - k3,
            None => f64::NAN,
        }
    };
    let rich_wing = match root_scan(&residual, 1e-3, 10.0) {
        Some(w) => w,
        None => return partial(diag),
    };
    let yy1 = y_fn(cfg, rich_wing, y1);
    let yy2 = y_fn(cfg, rich_wing, y2);
    let (s, kurt) = match solve_sk(yy1, yy2, k1, k2) {
        Some(sk) => sk,
        None => return partial(diag),
    };

    // remaining wing from the single opposite-side point
    let other_residual = |wing: f64| {
        let yy = y_fn(cfg, wing, y4);
        s * yy + kurt * yy * yy - k4
    };
    let lean_wing = match root_scan(&other_residual, 1e-3, 10.0) {
        Some(w) => w,
        None => return partial(diag),
    };

    let (alpha, beta) =
        if rich_positive { (lean_wing, rich_wing) } else { (rich_wing, lean_wing) };
    Some(SmileParams { w_c, s_c, c, s, kurt, alpha, beta })
}
