//! Black pricing on the forward, normal distribution helpers, Mill's ratio
//! and implied volatility inversion.
//!
//! All prices are undiscounted and quoted against the forward; discounting is
//! never needed inside the surface construction.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmileFitError};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionType {
    Call,
    Put,
}

/// Fast erf approximation, 6 polynomial constants, max error 3e-7.
///
/// Valid as written for x >= 0; extended to x < 0 through oddness.
pub fn erf_approx<R: Real>(x: R) -> R {
    if x < R::zero() {
        return -erf_approx(-x);
    }
    let a1 = R::c(0.070_523_078_4);
    let a2 = R::c(0.042_282_012_3);
    let a3 = R::c(0.009_270_527_2);
    let a4 = R::c(0.000_152_014_3);
    let a5 = R::c(0.000_276_567_2);
    let a6 = R::c(0.000_043_063_8);
    let p = R::one() + x * (a1 + x * (a2 + x * (a3 + x * (a4 + x * (a5 + x * a6)))));
    // p^-16 via four squarings
    let p2 = p * p;
    let p4 = p2 * p2;
    let p8 = p4 * p4;
    let p16 = p8 * p8;
    R::one() - p16.recip()
}

/// Accurate erf via the cancellation-free confluent series
/// erf(x) = (2x/sqrt(pi)) e^{-x^2} sum (2x^2)^n / (2n+1)!!.
pub fn erf<R: Real>(x: R) -> R {
    if x < R::zero() {
        return -erf(-x);
    }
    if x > R::c(6.0) {
        return R::one(); // erfc(6) < 3e-17
    }
    let x2 = x * x;
    let two_x2 = R::two() * x2;
    let mut term = R::one();
    let mut sum = R::one();
    let mut n = R::one();
    for _ in 0..300 {
        term = term * two_x2 / (R::two() * n + R::one());
        sum = sum + term;
        if term < sum * R::c(1e-18) {
            break;
        }
        n = n + R::one();
    }
    R::frac_2_sqrt_pi() * x * (-x2).exp() * sum
}

/// Standard normal pdf.
pub fn normal_pdf<R: Real>(x: R) -> R {
    R::c(1.0 / (2.0 * std::f64::consts::PI).sqrt()) * (-x * x * R::half()).exp()
}

/// Standard normal cdf through the fast erf approximation.
pub fn normal_cdf<R: Real>(x: R) -> R {
    R::half() * (R::one() + erf_approx(x / R::c(std::f64::consts::SQRT_2)))
}

/// Mill's ratio R(x) = (1 - N(x)) / N'(x).
///
/// For x > 1 the continued fraction 1/(x + 1/(x + 2/(x + ...))) is evaluated
/// with adaptive depth (convergents within 1e-12, depth capped at 200); below
/// that the erfc identity R(x) = e^{x^2/2} sqrt(pi/2) erfc(x/sqrt(2)) is used.
pub fn mills_ratio<R: Real>(x: R) -> R {
    if x > R::one() {
        let target = R::c(1e-12);
        let mut prev = R::zero();
        let mut depth = 10usize;
        loop {
            let val = mills_cf(x, depth);
            if (val - prev).abs() < target || depth >= 200 {
                return val;
            }
            prev = val;
            depth += 10;
        }
    } else {
        let erfc = R::one() - erf(x / R::c(std::f64::consts::SQRT_2));
        (x * x * R::half()).exp() * R::c((std::f64::consts::PI / 2.0).sqrt()) * erfc
    }
}

fn mills_cf<R: Real>(x: R, depth: usize) -> R {
    let mut f = x;
    for k in (1..=depth).rev() {
        f = x + R::from_usize(k).unwrap() / f;
    }
    f.recip()
}

fn check_positive<R: Real>(v: R, name: &str) -> Result<()> {
    if v <= R::zero() || !v.is_finite() {
        return Err(SmileFitError::Domain(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// d2 from the Black formula on the forward.
pub fn bs_d2<R: Real>(forward: R, strike: R, maturity: R, vol: R) -> Result<R> {
    check_positive(forward, "forward")?;
    check_positive(strike, "strike")?;
    check_positive(maturity, "maturity")?;
    check_positive(vol, "vol")?;
    let sq = vol * maturity.sqrt();
    Ok((forward / strike).ln() / sq - sq * R::half())
}

pub fn bs_d1<R: Real>(forward: R, strike: R, maturity: R, vol: R) -> Result<R> {
    let sq = vol * maturity.sqrt();
    Ok(bs_d2(forward, strike, maturity, vol)? + sq)
}

/// Undiscounted Black call on the forward.
pub fn bs_call<R: Real>(forward: R, strike: R, maturity: R, vol: R) -> Result<R> {
    let d2 = bs_d2(forward, strike, maturity, vol)?;
    let d1 = d2 + vol * maturity.sqrt();
    Ok(forward * normal_cdf(d1) - strike * normal_cdf(d2))
}

/// Undiscounted Black put on the forward.
pub fn bs_put<R: Real>(forward: R, strike: R, maturity: R, vol: R) -> Result<R> {
    // parity: C - P = F - K, exact under the odd-extended cdf
    let c = bs_call(forward, strike, maturity, vol)?;
    Ok(c - forward + strike)
}

/// Undiscounted call from total implied variance w = vol^2 * maturity.
pub fn bs_call_from_variance<R: Real>(forward: R, strike: R, total_variance: R) -> Result<R> {
    check_positive(forward, "forward")?;
    check_positive(strike, "strike")?;
    check_positive(total_variance, "total_variance")?;
    let sq = total_variance.sqrt();
    let d2 = (forward / strike).ln() / sq - sq * R::half();
    Ok(forward * normal_cdf(d2 + sq) - strike * normal_cdf(d2))
}

/// Sensitivity of the undiscounted call to total variance, dC/dw.
pub fn bs_dcall_dvariance<R: Real>(forward: R, strike: R, total_variance: R) -> Result<R> {
    check_positive(total_variance, "total_variance")?;
    let sq = total_variance.sqrt();
    let d2 = (forward / strike).ln() / sq - sq * R::half();
    Ok(strike * normal_pdf(d2) / (R::two() * sq))
}

/// Forward delta (undiscounted dPrice/dForward).
pub fn bs_delta<R: Real>(
    forward: R,
    strike: R,
    maturity: R,
    vol: R,
    option_type: OptionType,
) -> Result<R> {
    let d1 = bs_d1(forward, strike, maturity, vol)?;
    Ok(match option_type {
        OptionType::Call => normal_cdf(d1),
        OptionType::Put => normal_cdf(d1) - R::one(),
    })
}

const IV_LO: f64 = 1e-6;
const IV_HI: f64 = 10.0;

/// Invert the undiscounted Black price to an implied volatility.
///
/// Bisection-safeguarded secant on vol in [1e-6, 10]; the returned vol
/// reproduces the input price to better than 1e-10 absolute.
pub fn implied_vol(
    price: f64,
    forward: f64,
    strike: f64,
    maturity: f64,
    option_type: OptionType,
) -> Result<f64> {
    check_positive(forward, "forward")?;
    check_positive(strike, "strike")?;
    check_positive(maturity, "maturity")?;
    let intrinsic = match option_type {
        OptionType::Call => (forward - strike).max(0.0),
        OptionType::Put => (strike - forward).max(0.0),
    };
    let upper = match option_type {
        OptionType::Call => forward,
        OptionType::Put => strike,
    };
    if price <= intrinsic {
        return Err(SmileFitError::PriceBounds(format!(
            "price {price} at or below intrinsic {intrinsic}"
        )));
    }
    if price >= upper {
        return Err(SmileFitError::PriceBounds(format!(
            "price {price} at or above upper bound {upper}"
        )));
    }

    let value = |vol: f64| -> f64 {
        let c = bs_call(forward, strike, maturity, vol).unwrap();
        let p = match option_type {
            OptionType::Call => c,
            OptionType::Put => c - forward + strike,
        };
        p - price
    };

    let mut lo = IV_LO;
    let mut hi = IV_HI;
    let mut f_lo = value(lo);
    let f_hi = value(hi);
    if f_lo > 0.0 {
        // price below the value at the vol floor: report the boundary
        return Err(SmileFitError::PriceBounds(format!(
            "price {price} below lower volatility bound value {}",
            f_lo + price
        )));
    }
    if f_hi < 0.0 {
        return Err(SmileFitError::PriceBounds(format!(
            "price {price} above upper volatility bound value {}",
            f_hi + price
        )));
    }

    // bisection with a secant refinement step once the bracket is tight
    let mut f_hi_cur = f_hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = value(mid);
        if f_mid.abs() < 1e-13 || (hi - lo) < 1e-15 {
            return Ok(mid);
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi_cur = f_mid;
        }
        if (hi - lo) < 1e-8 && (f_hi_cur - f_lo).abs() > 1e-300 {
            let sec = hi - f_hi_cur * (hi - lo) / (f_hi_cur - f_lo);
            if sec > lo && sec < hi && value(sec).abs() < 1e-13 {
                return Ok(sec);
            }
        }
    }
    Ok(0.5 * (lo + hi))
}
