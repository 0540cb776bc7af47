//! Exact Gaussian-process regression on latent vectors with an isotropic
//! squared-exponential kernel.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood
//! with multi-start Adam in log space. Targets are standardized before
//! fitting and predictions are mapped back to the original scale.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LsboError, Result};
use crate::linalg::{cholesky_in_place, solve_lower, solve_upper_t, squared_distance};
use crate::rng;

pub const NOISE_FLOOR: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_var: f64,
    pub lengthscale: f64,
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper {
            signal_var: 1.0,
            lengthscale: 1.0,
            noise_var: 1e-3,
        }
    }
}

impl GpHyper {
    fn to_log(self) -> [f64; 3] {
        [self.signal_var.ln(), self.lengthscale.ln(), self.noise_var.ln()]
    }

    fn from_log(t: [f64; 3]) -> Self {
        GpHyper {
            signal_var: t[0].exp(),
            lengthscale: t[1].exp(),
            noise_var: t[2].exp().max(NOISE_FLOOR),
        }
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_var * (-0.5 * squared_distance(a, b) / (self.lengthscale * self.lengthscale)).exp()
    }
}

/// Log-space box for the hyperparameter search: `[low, high]` per
/// (signal variance, lengthscale, noise variance).
const LOG_BOUNDS: [(f64, f64); 3] = [
    (-4.605_170_185_988_091, 4.605_170_185_988_091), // 1e-2 ..= 1e2
    (-4.605_170_185_988_091, 4.605_170_185_988_091), // 1e-2 ..= 1e2
    (-13.815_510_557_964_274, 0.0),                  // 1e-6 ..= 1
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpFitConfig {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            restarts: 8,
            steps: 200,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

/// A fitted surrogate. Immutable; refitting produces a new value.
#[derive(Clone, Debug, PartialEq)]
pub struct GpSurrogate {
    z: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    hyper: GpHyper,
    jitter: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

fn validate(z: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if z.is_empty() {
        return Err(LsboError::invalid("GP needs at least one training point"));
    }
    if z.len() != y.len() {
        return Err(LsboError::invalid(format!("{} latents but {} targets", z.len(), y.len())));
    }
    let d = z[0].len();
    if d == 0 || z.iter().any(|r| r.len() != d) {
        return Err(LsboError::invalid("GP training latents must share a non-zero dimension"));
    }
    if y.iter().chain(z.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(LsboError::invalid("GP training data must be finite"));
    }
    Ok(d)
}

/// Cholesky of `K + (σ_n² + jitter) I`, escalating jitter ×10 from the
/// noise floor up to 1e-2.
fn factor(kf: &[f64], n: usize, noise: f64) -> Result<(Vec<f64>, f64)> {
    let mut jitter = 0.0;
    loop {
        let mut a = kf.to_vec();
        for i in 0..n {
            a[i * n + i] += noise + jitter;
        }
        if cholesky_in_place(&mut a, n) {
            return Ok((a, jitter));
        }
        jitter = if jitter == 0.0 { NOISE_FLOOR } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.000_001 {
            return Err(LsboError::Cholesky { jitter: MAX_JITTER });
        }
    }
}

fn kernel_matrix(sq_dist: &[f64], hyper: &GpHyper) -> Vec<f64> {
    let inv = 1.0 / (hyper.lengthscale * hyper.lengthscale);
    sq_dist
        .iter()
        .map(|&r2| hyper.signal_var * (-0.5 * r2 * inv).exp())
        .collect()
}

fn pairwise(z: &[Vec<f64>]) -> Vec<f64> {
    let n = z.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let r = squared_distance(&z[i], &z[j]);
            out[i * n + j] = r;
            out[j * n + i] = r;
        }
    }
    out
}

struct Factored {
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

fn factor_and_solve(kf: &[f64], n: usize, noise: f64, y: &[f64]) -> Result<Factored> {
    let (chol, jitter) = factor(kf, n, noise)?;
    let mut alpha = y.to_vec();
    solve_lower(&chol, n, &mut alpha);
    solve_upper_t(&chol, n, &mut alpha);
    Ok(Factored { chol, alpha, jitter })
}

fn lml_from(f: &Factored, y: &[f64]) -> f64 {
    let n = y.len();
    let fit: f64 = y.iter().zip(&f.alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| f.chol[i * n + i].ln()).sum();
    -0.5 * fit - logdet - 0.5 * n as f64 * LOG_2PI
}

/// LML and its gradient with respect to (log s², log ℓ, log σ_n²).
fn lml_and_gradient(sq: &[f64], n: usize, y: &[f64], hyper: &GpHyper) -> Result<(f64, [f64; 3])> {
    let kf = kernel_matrix(sq, hyper);
    let f = factor_and_solve(&kf, n, hyper.noise_var, y)?;
    let lml = lml_from(&f, y);
    // K⁻¹ column by column
    let mut kinv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        solve_lower(&f.chol, n, &mut col);
        solve_upper_t(&f.chol, n, &mut col);
        for i in 0..n {
            kinv[i * n + j] = col[i];
        }
    }
    let inv_l2 = 1.0 / (hyper.lengthscale * hyper.lengthscale);
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let a = f.alpha[i] * f.alpha[j] - kinv[i * n + j];
            let k = kf[i * n + j];
            g[0] += a * k;
            g[1] += a * k * sq[i * n + j] * inv_l2;
            if i == j {
                g[2] += a * hyper.noise_var;
            }
        }
    }
    Ok((lml, [0.5 * g[0], 0.5 * g[1], 0.5 * g[2]]))
}

impl GpSurrogate {
    /// Exact GP with the given hyperparameters and no target scaling.
    pub fn with_hyper(z: &[Vec<f64>], y: &[f64], hyper: GpHyper) -> Result<Self> {
        validate(z, y)?;
        Self::build(z, y, hyper, 0.0, 1.0)
    }

    fn build(z: &[Vec<f64>], y: &[f64], mut hyper: GpHyper, y_mean: f64, y_std: f64) -> Result<Self> {
        hyper.noise_var = hyper.noise_var.max(NOISE_FLOOR);
        if !(hyper.signal_var > 0.0) || !(hyper.lengthscale > 0.0) {
            return Err(LsboError::invalid("kernel hyperparameters must be positive"));
        }
        let n = z.len();
        let scaled: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let kf = kernel_matrix(&pairwise(z), &hyper);
        let f = factor_and_solve(&kf, n, hyper.noise_var, &scaled)?;
        Ok(GpSurrogate {
            z: z.to_vec(),
            y: y.to_vec(),
            y_mean,
            y_std,
            hyper,
            jitter: f.jitter,
            chol: f.chol,
            alpha: f.alpha,
        })
    }

    /// Standardize targets, then maximize the LML over hyperparameters.
    pub fn fit(z: &[Vec<f64>], y: &[f64], init: GpHyper, config: &GpFitConfig) -> Result<Self> {
        validate(z, y)?;
        let n = z.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let scaled: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();
        let sq = pairwise(z);

        let clamp = |t: &mut [f64; 3]| {
            for (v, (lo, hi)) in t.iter_mut().zip(LOG_BOUNDS) {
                *v = v.clamp(lo, hi);
            }
        };
        let mut best: Option<(f64, [f64; 3])> = None;
        let mut last_err = None;
        for restart in 0..config.restarts.max(1) {
            let mut theta = if restart == 0 {
                let mut t = init.to_log();
                clamp(&mut t);
                t
            } else {
                let mut r = rng::stream(config.seed, "gp-restart", restart as u64);
                let mut t = [0.0; 3];
                for (v, (lo, hi)) in t.iter_mut().zip(LOG_BOUNDS) {
                    *v = r.gen_range(lo..=hi);
                }
                t
            };
            let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
            for step in 0..=config.steps {
                let hyper = GpHyper::from_log(theta);
                let (lml, grad) = match lml_and_gradient(&sq, n, &scaled, &hyper) {
                    Ok(r) => r,
                    Err(e) => {
                        last_err = Some(e);
                        break;
                    }
                };
                if lml.is_finite() && best.is_none_or(|(b, _)| lml > b) {
                    best = Some((lml, theta));
                }
                if step == config.steps {
                    break;
                }
                let t = (step + 1) as i32;
                for k in 0..3 {
                    // ascent: step along +gradient
                    m[k] = 0.9 * m[k] + 0.1 * grad[k];
                    v[k] = 0.999 * v[k] + 0.001 * grad[k] * grad[k];
                    let mh = m[k] / (1.0 - 0.9f64.powi(t));
                    let vh = v[k] / (1.0 - 0.999f64.powi(t));
                    theta[k] += config.learning_rate * mh / (vh.sqrt() + 1e-8);
                }
                clamp(&mut theta);
            }
        }
        let Some((_, theta)) = best else {
            return Err(last_err.unwrap_or(LsboError::Cholesky { jitter: MAX_JITTER }));
        };
        Self::build(z, y, GpHyper::from_log(theta), y_mean, y_std)
    }

    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z[0].len()
    }

    pub fn training_latents(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn training_targets(&self) -> &[f64] {
        &self.y
    }

    pub fn target_scaling(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    /// Largest observed target, on the original scale.
    pub fn y_best(&self) -> f64 {
        self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Posterior predictive mean and variance (observation noise included),
    /// on the original target scale.
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        let n = self.z.len();
        let mut v: Vec<f64> = self.z.iter().map(|zi| self.hyper.kernel(zi, z)).collect();
        let mean_std: f64 = v.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        solve_lower(&self.chol, n, &mut v);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        let var_std = (self.hyper.signal_var + self.hyper.noise_var - explained).max(0.0);
        (
            self.y_mean + self.y_std * mean_std,
            var_std * self.y_std * self.y_std,
        )
    }

    pub fn predict_batch(&self, zs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        zs.iter().map(|z| self.predict(z)).collect()
    }

    /// Log marginal likelihood of the (scaled) targets under the cached factor.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let scaled: Vec<f64> = self.y.iter().map(|v| (v - self.y_mean) / self.y_std).collect();
        lml_from(
            &Factored {
                chol: self.chol.clone(),
                alpha: self.alpha.clone(),
                jitter: self.jitter,
            },
            &scaled,
        )
    }

    /// Gradient of the LML with respect to (log s², log ℓ, log σ_n²).
    pub fn lml_gradient(&self) -> Result<[f64; 3]> {
        let scaled: Vec<f64> = self.y.iter().map(|v| (v - self.y_mean) / self.y_std).collect();
        Ok(lml_and_gradient(&pairwise(&self.z), self.z.len(), &scaled, &self.hyper)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = rng::stream(seed, "gp-data", 0);
        let z: Vec<Vec<f64>> = (0..n).map(|_| rng::standard_normals(&mut r, d)).collect();
        let y = z.iter().map(|p| p[0].sin() + 0.3 * p[d - 1]).collect();
        (z, y)
    }

    #[test]
    fn single_point_lml_closed_form() {
        let h = GpHyper {
            signal_var: 2.0,
            lengthscale: 0.7,
            noise_var: 0.1,
        };
        let gp = GpSurrogate::with_hyper(&[vec![0.3, 0.1]], &[1.5], h).unwrap();
        let s = 2.1f64;
        let want = -0.5 * 1.5 * 1.5 / s - 0.5 * s.ln() - 0.5 * LOG_2PI;
        assert!((gp.log_marginal_likelihood() - want).abs() < 1e-12);
    }

    #[test]
    fn interpolates_at_noise_floor() {
        let h = GpHyper {
            signal_var: 1.0,
            lengthscale: 1.0,
            noise_var: NOISE_FLOOR,
        };
        let gp = GpSurrogate::with_hyper(&[vec![0.5]], &[3.0], h).unwrap();
        let (m, _) = gp.predict(&[0.5]);
        assert!((m - 3.0).abs() < 1e-6 * 3.0 + 1e-8);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let (z, y) = points(1, 5, 2);
        let gp = GpSurrogate::fit(&z, &y, GpHyper::default(), &GpFitConfig::default()).unwrap();
        let far = vec![25.0 * gp.hyper().lengthscale + 10.0, 0.0];
        let (m, v) = gp.predict(&far);
        let (ym, ys) = gp.target_scaling();
        let prior = (gp.hyper().signal_var + gp.hyper().noise_var) * ys * ys;
        assert!((m - ym).abs() <= 1e-6 * ym.abs().max(1.0));
        assert!((v - prior).abs() <= 1e-6 * prior);
    }

    #[test]
    fn fit_is_deterministic_and_bounded() {
        let (z, y) = points(2, 8, 2);
        let cfg = GpFitConfig { seed: 4, ..GpFitConfig::default() };
        let a = GpSurrogate::fit(&z, &y, GpHyper::default(), &cfg).unwrap();
        let b = GpSurrogate::fit(&z, &y, GpHyper::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.hyper().noise_var >= NOISE_FLOOR);
    }

    #[test]
    fn constant_targets_do_not_break_standardization() {
        let z = vec![vec![0.0], vec![1.0], vec![2.0]];
        let gp = GpSurrogate::fit(&z, &[0.2, 0.2, 0.2], GpHyper::default(), &GpFitConfig::default()).unwrap();
        let (m, v) = gp.predict(&[1.0]);
        assert!((m - 0.2).abs() < 1e-6);
        assert!(v >= 0.0);
    }

    #[test]
    fn duplicated_points_are_handled() {
        let h = GpHyper {
            signal_var: 1.0,
            lengthscale: 1.0,
            noise_var: NOISE_FLOOR,
        };
        let z = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 0.0]];
        let gp = GpSurrogate::with_hyper(&z, &[1.0, 0.0, 1.0], h).unwrap();
        assert!(gp.predict(&[0.0, 0.0]).1 >= 0.0);
        // duplicate with identical target does not worsen the fit there
        let single = GpSurrogate::with_hyper(&z[..2], &[1.0, 0.0], h).unwrap();
        let e1 = (single.predict(&[0.0, 0.0]).0 - 1.0).abs();
        let e2 = (gp.predict(&[0.0, 0.0]).0 - 1.0).abs();
        assert!(e2 <= e1 + 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GpSurrogate::with_hyper(&[], &[], GpHyper::default()).is_err());
        assert!(GpSurrogate::with_hyper(&[vec![0.0]], &[1.0, 2.0], GpHyper::default()).is_err());
        assert!(GpSurrogate::with_hyper(&[vec![f64::NAN]], &[1.0], GpHyper::default()).is_err());
    }
}
