//! Covariance-matrix-adaptation evolution strategy on the unit box [0,1]^n.
//!
//! Standard (mu/mu_w, lambda) CMA-ES with rank-one and rank-mu covariance
//! updates and cumulative step-size adaptation. Candidates outside the box are
//! repaired by clamping. The caller drives the ask/tell loop, which keeps
//! penalty adaptation and feasibility tracking outside the optimizer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Cmaes {
    n: usize,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    pc: DVector<f64>,
    ps: DVector<f64>,
    // eigendecomposition cache: cov = b * diag(d^2) * b^T
    b: DMatrix<f64>,
    d: DVector<f64>,
    rng: ChaCha8Rng,
    generation: u64,
}

impl Cmaes {
    /// `x0` in unit coordinates; `sigma0` initial step size (fraction of the box).
    pub fn new(x0: &[f64], sigma0: f64, seed: u64, population: Option<usize>) -> Self {
        let n = x0.len();
        let nf = n as f64;
        let lambda = population.unwrap_or(4 + (3.0 * nf.ln()).floor() as usize).max(4);
        let mu = lambda / 2;
        let mut weights: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let c1 = 2.0 / ((nf + 1.3) * (nf + 1.3) + mu_eff);
        let cmu = (1.0 - c1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0) * (nf + 2.0) + mu_eff));
        let damps = 1.0 + 2.0 * (0.0f64).max(((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            n,
            lambda,
            weights,
            mu_eff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            mean: DVector::from_column_slice(x0),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            pc: DVector::zeros(n),
            ps: DVector::zeros(n),
            b: DMatrix::identity(n, n),
            d: DVector::from_element(n, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
            generation: 0,
        }
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn refresh_eigen(&mut self) {
        let sym = nalgebra::SymmetricEigen::new(self.cov.clone());
        self.b = sym.eigenvectors;
        self.d = sym.eigenvalues.map(|v| v.max(1e-20).sqrt());
    }

    fn sample_standard_normal(&mut self) -> DVector<f64> {
        // Box-Muller
        DVector::from_fn(self.n, |_, _| {
            let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = self.rng.gen::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
    }

    /// Sample one generation of candidates, clamped to the unit box.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        self.refresh_eigen();
        (0..self.lambda)
            .map(|_| {
                let zv = self.sample_standard_normal();
                let y = &self.b * self.d.component_mul(&zv);
                let x = &self.mean + self.sigma * y;
                x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
            })
            .collect()
    }

    /// Update the distribution from the sampled candidates and their scores
    /// (lower is better).
    pub fn tell(&mut self, candidates: &[Vec<f64>], scores: &[f64]) {
        assert_eq!(candidates.len(), scores.len());
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

        let old_mean = self.mean.clone();
        let mut new_mean = DVector::zeros(self.n);
        for (i, &w) in self.weights.iter().enumerate() {
            let x = DVector::from_column_slice(&candidates[order[i]]);
            new_mean += w * x;
        }
        self.mean = new_mean;

        let y_w = (&self.mean - &old_mean) / self.sigma;
        // C^{-1/2} y_w for the sigma path
        let mut c_inv_sqrt_y = DVector::zeros(self.n);
        let bt_y = self.b.transpose() * &y_w;
        for i in 0..self.n {
            c_inv_sqrt_y += self.b.column(i) * (bt_y[i] / self.d[i]);
        }
        self.ps = (1.0 - self.cs) * &self.ps
            + (self.cs * (2.0 - self.cs) * self.mu_eff).sqrt() * c_inv_sqrt_y;

        self.generation += 1;
        let expected_window =
            (1.0 - self.cs).powf(2.0 * self.generation as f64).sqrt();
        let hsig = self.ps.norm()
            / (1.0 - expected_window * expected_window).max(1e-12).sqrt()
            / self.chi_n
            < 1.4 + 2.0 / (self.n as f64 + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };

        self.pc = (1.0 - self.cc) * &self.pc
            + hsig_f * (self.cc * (2.0 - self.cc) * self.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(self.n, self.n);
        for (i, &w) in self.weights.iter().enumerate() {
            let y = (DVector::from_column_slice(&candidates[order[i]]) - &old_mean) / self.sigma;
            rank_mu += w * (&y * y.transpose());
        }
        let delta_hsig = (1.0 - hsig_f) * self.cc * (2.0 - self.cc);
        self.cov = (1.0 - self.c1 - self.cmu) * &self.cov
            + self.c1 * ((&self.pc * self.pc.transpose()) + delta_hsig * &self.cov)
            + self.cmu * rank_mu;
        // keep symmetric against drift
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((self.cs / self.damps) * (self.ps.norm() / self.chi_n - 1.0)).exp();
        self.sigma = self.sigma.clamp(1e-12, 2.0);
    }
}

/// Convenience driver: minimize `f` over the unit box.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    sigma0: f64,
    max_evals: usize,
    seed: u64,
    population: Option<usize>,
) -> (Vec<f64>, f64, usize) {
    let mut es = Cmaes::new(x0, sigma0, seed, population);
    let mut best_x = x0.to_vec();
    let mut best_f = f(x0);
    let mut evals = 1;
    while evals + es.lambda() <= max_evals.max(es.lambda() + 1) {
        let xs = es.ask();
        let fs: Vec<f64> = xs.iter().map(|x| f(x)).collect();
        evals += fs.len();
        for (x, &v) in xs.iter().zip(&fs) {
            if v < best_f {
                best_f = v;
                best_x = x.clone();
            }
        }
        es.tell(&xs, &fs);
        if es.sigma() < 1e-11 {
            break;
        }
    }
    (best_x, best_f, evals)
}


/// Nelder-Mead simplex polish on the unit box (lower is better). Starts from
/// `x0` with per-coordinate step `step`, runs until `max_evals` objective
/// calls or simplex collapse, and returns the best vertex with its score and
/// the evaluation count. Useful after CMA-ES when the remaining valley is
/// strongly anisotropic relative to the box scaling.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let clampv = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut evals = 0usize;
    let fx0 = f(x0);
    evals += 1;
    simplex.push((x0.to_vec(), fx0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] = if x[i] + step <= 1.0 { x[i] + step } else { x[i] - step };
        let v = f(&x);
        evals += 1;
        simplex.push((x, v));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while evals + 2 <= max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread: f64 = simplex[n].1 - simplex[0].1;
        let size: f64 = (0..n)
            .map(|i| {
                simplex
                    .iter()
                    .map(|(x, _)| x[i])
                    .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
            })
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        if spread.abs() < 1e-16 && size < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|(x, _)| x[i]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect = clampv(
            centroid.iter().zip(&worst.0).map(|(c, w)| c + alpha * (c - w)).collect(),
        );
        let fr = f(&reflect);
        evals += 1;
        if fr < simplex[0].1 {
            // try expansion
            let expand = clampv(
                centroid.iter().zip(&reflect).map(|(c, r)| c + gamma * (r - c)).collect(),
            );
            let fe = f(&expand);
            evals += 1;
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract = clampv(
                centroid.iter().zip(&worst.0).map(|(c, w)| c + rho * (w - c)).collect(),
            );
            let fc = f(&contract);
            evals += 1;
            if fc < worst.1 {
                simplex[n] = (contract, fc);
            } else {
                // shrink toward the best vertex
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if evals >= max_evals {
                        break;
                    }
                    v.0 = clampv(
                        best.iter().zip(&v.0).map(|(b, x)| b + sigma * (x - b)).collect(),
                    );
                    v.1 = f(&v.0);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}
