//! Shared test oracles, implemented independently of the library code.

#![allow(dead_code)]

use std::path::PathBuf;

/// Reference erf: direct Taylor series below 3, asymptotic continued fraction
/// for the complement above. Worst-case error far below 1e-10 on [0, 6].
pub fn erf_ref(x: f64) -> f64 {
    if x < 0.0 {
        return -erf_ref(-x);
    }
    if x <= 3.0 {
        // erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // erf(x) = erf(3) + 2/sqrt(pi) * int_3^x exp(-t^2) dt, Simpson's rule
        let n = 2000usize; // even
        let h = (x - 3.0) / n as f64;
        let f = |t: f64| (-t * t).exp();
        let mut s = f(3.0) + f(x);
        for i in 1..n {
            let t = 3.0 + h * i as f64;
            s += f(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        erf_ref(3.0) + s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
    }
}

/// Standard normal pdf.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Lognormal terminal density of the forward at strike k:
/// phi(d2) / (k sigma sqrt(t)), d2 = (ln(f/k) - sigma^2 t / 2) / (sigma sqrt(t)).
pub fn lognormal_pdf(forward: f64, sigma: f64, t: f64, k: f64) -> f64 {
    let st = sigma * t.sqrt();
    let d2 = ((forward / k).ln() - 0.5 * sigma * sigma * t) / st;
    norm_pdf(d2) / (k * st)
}

pub fn fixture_quotes() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/xlf_quotes.csv"))
}

pub fn fixture_context() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/xlf_context.json"))
}

/// Small deterministic xorshift generator so the tests do not depend on the
/// library's RNG choices.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }
}
