use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{LsboError, Result};
use crate::rng::standard_normals;

/// Reference spread used while pretraining: wider than the N(0, I) prior so
/// augmented latents reach sparse regions.
pub const PRETRAIN_REFERENCE_STD: f64 = 2.0;
/// Reference spread around the acquisition argmax during optimization.
pub const BO_PHASE_REFERENCE_STD: f64 = 0.3;

/// Spherical Gaussian `N(μ_ref, σ_ref² I)` that supplies augmented latents.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDistribution {
    mean: Vec<f64>,
    std: f64,
}

impl ReferenceDistribution {
    pub fn new(mean: Vec<f64>, std: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(LsboError::invalid("reference mean must have dimension ≥ 1"));
        }
        if !(std > 0.0) || !std.is_finite() {
            return Err(LsboError::invalid(format!("σ_ref must be positive, got {std}")));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(LsboError::invalid("reference mean must be finite"));
        }
        Ok(ReferenceDistribution { mean, std })
    }

    /// Centered at the origin with σ_ref = 2.
    pub fn pretrain(latent_dim: usize) -> Self {
        ReferenceDistribution {
            mean: vec![0.0; latent_dim],
            std: PRETRAIN_REFERENCE_STD,
        }
    }

    /// Centered at a consistent point with σ_ref = 0.3.
    pub fn around(center: &[f64]) -> Result<Self> {
        Self::new(center.to_vec(), BO_PHASE_REFERENCE_STD)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `n` i.i.d. draws as an `n×d` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        let d = self.dim();
        let eps = standard_normals(rng, n * d);
        let data = eps
            .iter()
            .enumerate()
            .map(|(k, e)| self.mean[k % d] + self.std * e)
            .collect();
        Tensor::matrix(n, d, data)
    }
}

pub fn sample_reference<R: Rng + ?Sized>(
    p_ref: &ReferenceDistribution,
    n: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if n == 0 {
        return Err(LsboError::invalid("sample count must be ≥ 1"));
    }
    Ok(p_ref.sample(n, rng))
}
