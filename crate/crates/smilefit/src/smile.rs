//! The sigmoid-polynomial total variance smile for one expiry.
//!
//! One term is described by seven parameters. With y = z - C and a sigmoid S:
//!
//! ```text
//! w(z) = w_C + S_C * y/(1+y^2) + y*tanh(p*y) * sqrt(T) * (S*Y + K*Y^2)
//! Y(y) = S(-alpha*y)/alpha  (y <= 0),   S(-beta*y)/beta  (y > 0)
//! ```
//!
//! y*tanh(p*y) is the smooth stand-in for |y|; p defaults to 1000.

use serde::{Deserialize, Serialize};

use crate::black_scholes as bs;
use crate::error::{Result, SmileFitError};
use crate::real::Real;

/// Wing parameter magnitudes below this use the linear-Y limit.
pub const DEGENERATE_WING_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileParams<R> {
    /// Total variance at the hinge z = C.
    pub w_c: R,
    /// Skew at the hinge.
    pub s_c: R,
    /// Hinge location in z.
    pub c: R,
    /// Outer skew coefficient.
    pub s: R,
    /// Outer kurtosis coefficient.
    pub kurt: R,
    /// Put wing steepness.
    pub alpha: R,
    /// Call wing steepness.
    pub beta: R,
}

impl<R: Real> SmileParams<R> {
    pub fn to_array(&self) -> [R; 7] {
        [self.w_c, self.s_c, self.c, self.s, self.kurt, self.alpha, self.beta]
    }

    pub fn from_array(a: [R; 7]) -> Self {
        Self { w_c: a[0], s_c: a[1], c: a[2], s: a[3], kurt: a[4], alpha: a[5], beta: a[6] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmoidKind {
    Erf,
    Arctan,
}

impl SigmoidKind {
    /// Sigmoid value, first and second derivative.
    #[inline]
    pub fn eval<R: Real>(self, x: R) -> (R, R, R) {
        match self {
            SigmoidKind::Erf => {
                let v = bs::erf(x);
                let d1 = R::frac_2_sqrt_pi() * (-x * x).exp();
                let d2 = -R::two() * x * d1;
                (v, d1, d2)
            }
            SigmoidKind::Arctan => {
                let denom = R::one() + x * x;
                let v = x.atan();
                let d1 = denom.recip();
                let d2 = -R::two() * x * d1 * d1;
                (v, d1, d2)
            }
        }
    }

    /// Saturation level L = lim_{x->inf} S(x).
    #[inline]
    pub fn saturation<R: Real>(self) -> R {
        match self {
            SigmoidKind::Erf => R::one(),
            SigmoidKind::Arctan => R::c(std::f64::consts::FRAC_PI_2),
        }
    }

    /// Slope at the origin; the degenerate wing limit is Y(y) -> -S'(0) * y.
    #[inline]
    pub fn origin_slope<R: Real>(self) -> R {
        match self {
            SigmoidKind::Erf => R::frac_2_sqrt_pi(),
            SigmoidKind::Arctan => R::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConfig<R> {
    /// tanh smoothing constant for |y|.
    pub p: R,
    pub sigmoid: SigmoidKind,
}

impl<R: Real> Default for ModelConfig<R> {
    fn default() -> Self {
        Self { p: R::c(1000.0), sigmoid: SigmoidKind::Erf }
    }
}

/// Asymptotic wing slopes of w, per unit y*sqrt(T).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WingSlopes<R> {
    pub phi_plus: R,
    pub phi_minus: R,
    /// True when a wing parameter was in its degenerate (linear-Y) limit.
    pub degenerate: bool,
}

/// ATM level, skew and curvature: exact values and the closed-form
/// approximations used as diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AtmQuantities<R> {
    pub w0: R,
    pub skew: R,
    pub kurtosis: R,
    pub w0_approx: R,
    pub skew_approx: R,
    pub kurtosis_approx: R,
}

/// Hinge smoothness report: one-sided limits of Y' and Y'' at y = 0.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HingeReport<R> {
    pub yprime_left: R,
    pub yprime_right: R,
    pub ysecond_left: R,
    pub ysecond_right: R,
    pub expected_yprime: R,
    pub ok: bool,
}

impl<R: Real> SmileParams<R> {
    /// Y(y) with first and second derivatives, honoring the branch split and
    /// the degenerate wing limit.
    fn y_fn(&self, cfg: &ModelConfig<R>, y: R) -> (R, R, R) {
        let wing = if y <= R::zero() { self.alpha } else { self.beta };
        if wing.abs() < R::c(DEGENERATE_WING_EPS) {
            let slope = cfg.sigmoid.origin_slope::<R>();
            return (-slope * y, -slope, R::zero());
        }
        let (v, d1, d2) = cfg.sigmoid.eval(-wing * y);
        (v / wing, -d1, wing * d2)
    }

    /// Total variance at normalized strike z.
    pub fn eval_w(&self, cfg: &ModelConfig<R>, maturity: R, z: R) -> R {
        let y = z - self.c;
        let (yy, _, _) = self.y_fn(cfg, y);
        let skew_term = self.s_c * y / (R::one() + y * y);
        let abs_y = y * tanh_stable(cfg.p * y);
        self.w_c + skew_term + abs_y * maturity.sqrt() * (self.s * yy + self.kurt * yy * yy)
    }

    /// (w, dw/dz, d2w/dz2) at z, all analytic.
    pub fn eval_w_derivs(&self, cfg: &ModelConfig<R>, maturity: R, z: R) -> (R, R, R) {
        let y = z - self.c;
        let sqrt_t = maturity.sqrt();
        let (yy, yy1, yy2) = self.y_fn(cfg, y);

        let one = R::one();
        let y2 = y * y;
        let denom = one + y2;
        let f = y / denom;
        let f1 = (one - y2) / (denom * denom);
        let f2 = R::two() * y * (y2 - R::c(3.0)) / (denom * denom * denom);

        let (th, sech2) = tanh_sech2(cfg.p * y);
        let u = y * th;
        let u1 = th + cfg.p * y * sech2;
        let u2 = R::two() * cfg.p * sech2 - R::two() * cfg.p * cfg.p * y * sech2 * th;

        let h = self.s * yy + self.kurt * yy * yy;
        let h1 = (self.s + R::two() * self.kurt * yy) * yy1;
        let h2 = R::two() * self.kurt * yy1 * yy1 + (self.s + R::two() * self.kurt * yy) * yy2;

        let w = self.w_c + self.s_c * f + sqrt_t * u * h;
        let w1 = self.s_c * f1 + sqrt_t * (u1 * h + u * h1);
        let w2 = self.s_c * f2 + sqrt_t * (u2 * h + R::two() * u1 * h1 + u * h2);
        (w, w1, w2)
    }

    /// Asymptotic slopes of w at both wings, per unit y*sqrt(T).
    ///
    /// With sigmoid arctan (L = pi/2) these reduce to
    /// phi(+inf) = (pi/2) (pi K/2 - S beta) / beta^2 and
    /// phi(-inf) = -(pi/2) (pi K/2 + S alpha) / alpha^2.
    pub fn wing_slopes(&self, cfg: &ModelConfig<R>, _maturity: R) -> WingSlopes<R> {
        let l = cfg.sigmoid.saturation::<R>();
        let eps = R::c(DEGENERATE_WING_EPS);
        let mut degenerate = false;
        let slope0 = cfg.sigmoid.origin_slope::<R>();

        let phi_plus = if self.beta.abs() < eps {
            degenerate = true;
            // linear-Y limit: w grows quadratically; report the linear-Y slope
            // of the skew part only
            -self.s * slope0
        } else {
            l * (l * self.kurt - self.s * self.beta) / (self.beta * self.beta)
        };
        let phi_minus = if self.alpha.abs() < eps {
            degenerate = true;
            self.s * slope0
        } else {
            -l * (l * self.kurt + self.s * self.alpha) / (self.alpha * self.alpha)
        };
        WingSlopes { phi_plus, phi_minus, degenerate }
    }

    /// Exact ATM quantities from the analytic derivatives at z = 0, plus the
    /// closed-form approximations (A = Y(-C) etc., tanh(pC) ~ sign(C)).
    pub fn atm_quantities(&self, cfg: &ModelConfig<R>, maturity: R) -> AtmQuantities<R> {
        let (w0, skew, kurtosis) = self.eval_w_derivs(cfg, maturity, R::zero());

        let c = self.c;
        let sqrt_t = maturity.sqrt();
        let th = tanh_stable(cfg.p * c);
        let (a, a1, a2) = self.y_fn(cfg, -c);
        let one = R::one();
        let c2 = c * c;

        let w0_approx = if self.alpha.abs() < R::c(DEGENERATE_WING_EPS) {
            w0
        } else {
            self.w_c - c / (one + c2) * self.s_c
                + a * c * sqrt_t * th * (self.s * self.alpha + a * self.kurt)
                    / (self.alpha * self.alpha)
        };
        let skew_approx = -(c2 - one) / ((c2 + one) * (c2 + one)) * self.s_c
            + th * sqrt_t
                * (-a * (self.s + self.kurt * a) + c * a1 * (self.s + R::two() * self.kurt * a));
        let kurtosis_approx = -R::two() * self.s_c * c * (c2 - R::c(3.0))
            / ((c2 + one) * (c2 + one) * (c2 + one))
            + sqrt_t
                * th
                * (-R::two() * a1 * (self.kurt * (R::two() * a - c * a1) + self.s)
                    + c * a2 * (R::two() * a * self.kurt + self.s));

        AtmQuantities { w0, skew, kurtosis, w0_approx, skew_approx, kurtosis_approx }
    }

    /// Close-to-expiration limit of total variance at strike K.
    ///
    /// As T -> 0 the product z*sqrt(T)*sigma_star tends to log(K/F), so the
    /// wing slope takes over: w -> w_C + phi * log(K/F) / sigma_star.
    pub fn t0_limit(&self, cfg: &ModelConfig<R>, strike: R, forward: R, sigma_star: R) -> R {
        let chi = (strike / forward).ln();
        if chi == R::zero() {
            return self.w_c;
        }
        let slopes = self.wing_slopes(cfg, R::one());
        let phi = if chi > R::zero() { slopes.phi_plus } else { slopes.phi_minus };
        self.w_c + phi * chi / sigma_star
    }

    /// Verify the C2 property of Y at the hinge by one-sided finite
    /// differences: Y'(0-) = Y'(0+) = -S'(0) and Y''(0+-) = 0.
    pub fn hinge_continuity_check(&self, cfg: &ModelConfig<R>) -> HingeReport<R> {
        // separate steps: the first-derivative stencil needs a small h to keep
        // its O(h^2 Y''') truncation below 1e-8 for steep wings, while the
        // second-derivative stencil needs a larger h to stay above roundoff
        let h1 = R::c(1e-6);
        let h2 = R::c(5e-5);
        let expected = -cfg.sigmoid.origin_slope::<R>();
        let side = |sgn: R| -> (R, R) {
            let f = |h: R, k: f64| self.y_fn(cfg, sgn * h * R::c(k)).0;
            let (g0, g1, g2) = (f(h1, 0.0), f(h1, 1.0), f(h1, 2.0));
            let d1 = (-R::c(3.0) * g0 + R::c(4.0) * g1 - g2) / (R::two() * h1) * sgn;
            let (f0, f1, f2, f3) = (f(h2, 0.0), f(h2, 1.0), f(h2, 2.0), f(h2, 3.0));
            let d2 = (R::two() * f0 - R::c(5.0) * f1 + R::c(4.0) * f2 - f3) / (h2 * h2);
            (d1, d2)
        };
        let (dr, d2r) = side(R::one());
        let (dl, d2l) = side(-R::one());
        let tol = R::c(1e-8);
        let ok = (dr - expected).abs() < tol
            && (dl - expected).abs() < tol
            && d2r.abs() < tol
            && d2l.abs() < tol;
        HingeReport {
            yprime_left: dl,
            yprime_right: dr,
            ysecond_left: d2l,
            ysecond_right: d2r,
            expected_yprime: expected,
            ok,
        }
    }
}

/// Recover the hinge C from the ATM skew (small-C approximation).
///
/// C^2 = (S_C - S_atm) / (3 S_C - 2 p S sqrt(T) Y'(0)); at T = 0 this is
/// C = sqrt((S_C - S_atm) / (3 S_C)).
pub fn hinge_from_atm_skew<R: Real>(
    s_c: R,
    s_atm: R,
    s: R,
    maturity: R,
    p: R,
    yprime0: R,
) -> Result<R> {
    let denom = R::c(3.0) * s_c - R::two() * p * s * maturity.sqrt() * yprime0;
    if denom.abs() < R::c(1e-300) {
        return Err(SmileFitError::Domain("hinge approximation: zero denominator".into()));
    }
    let radicand = (s_c - s_atm) / denom;
    if radicand < R::zero() {
        return Err(SmileFitError::Domain(
            "hinge approximation inconsistent: negative radicand".into(),
        ));
    }
    Ok(radicand.sqrt())
}

#[inline]
fn tanh_stable<R: Real>(x: R) -> R {
    // saturates exactly for |x| > 20, avoiding needless exp work at p*y
    if x.abs() > R::c(20.0) {
        if x > R::zero() {
            R::one()
        } else {
            -R::one()
        }
    } else {
        x.tanh()
    }
}

/// (tanh x, sech^2 x) without overflow.
#[inline]
fn tanh_sech2<R: Real>(x: R) -> (R, R) {
    if x.abs() > R::c(20.0) {
        return (if x > R::zero() { R::one() } else { -R::one() }, R::zero());
    }
    let t = x.tanh();
    (t, R::one() - t * t)
}
