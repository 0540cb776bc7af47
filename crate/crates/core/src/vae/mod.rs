//! β-VAE with a diagonal-Gaussian encoder and a Bernoulli-mean decoder,
//! plus the latent-consistency training objective.

mod objective;
mod reference;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use objective::{elbo_loss, kl_diag_gaussian, lca_objective, LossParts, ObjectiveGraph};
pub use reference::{
    sample_reference, ReferenceDistribution, BO_PHASE_REFERENCE_STD, PRETRAIN_REFERENCE_STD,
};
pub use train::{train, Augmentation, EpochLoss, TrainConfig, TrainReport};

use crate::autodiff::{sigmoid, Checkpoint, ParamSet, Tensor};
use crate::error::{LsboError, Result};
use crate::linalg::squared_distance;
use crate::nn::{Activation, Mlp};

/// LCL weight that scored best in the image γ-sweep.
pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    /// Cross-entropy against (0,1)-valued data.
    Bernoulli,
    /// Squared error on the decoder mean, for real-valued data.
    Gaussian,
}

impl Likelihood {
    pub fn as_str(self) -> &'static str {
        match self {
            Likelihood::Bernoulli => "bernoulli",
            Likelihood::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bernoulli" => Some(Likelihood::Bernoulli),
            "gaussian" => Some(Likelihood::Gaussian),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub likelihood: Likelihood,
}

impl VaeArch {
    pub fn new(input_dim: usize, latent_dim: usize, hidden: Vec<usize>) -> Self {
        VaeArch {
            input_dim,
            latent_dim,
            hidden,
            activation: Activation::Tanh,
            likelihood: Likelihood::Bernoulli,
        }
    }

    fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(2 * self.latent_dim);
        s
    }

    fn decoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.latent_dim];
        s.extend(self.hidden.iter().rev());
        s.push(self.input_dim);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    arch: VaeArch,
    beta: f64,
    gamma: f64,
    params: ParamSet,
    encoder: Mlp,
    decoder: Mlp,
}

fn check_finite(t: &Tensor, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(LsboError::NonFinite { op: op.to_string() })
    }
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(arch: VaeArch, beta: f64, gamma: f64, rng: &mut R) -> Result<Self> {
        Self::validate(&arch, beta, gamma)?;
        let mut params = ParamSet::new();
        let encoder = Mlp::new(&mut params, "enc", &arch.encoder_sizes(), arch.activation, rng);
        let decoder = Mlp::new(&mut params, "dec", &arch.decoder_sizes(), arch.activation, rng);
        Ok(VaeModel {
            arch,
            beta,
            gamma,
            params,
            encoder,
            decoder,
        })
    }

    fn validate(arch: &VaeArch, beta: f64, gamma: f64) -> Result<()> {
        if arch.latent_dim == 0 || arch.input_dim == 0 {
            return Err(LsboError::invalid("latent and input dimensions must be ≥ 1"));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(LsboError::invalid(format!("β must be positive, got {beta}")));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(LsboError::invalid(format!("γ must be non-negative, got {gamma}")));
        }
        Ok(())
    }

    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        Self::validate(&self.arch, self.beta, gamma)?;
        self.gamma = gamma;
        Ok(())
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub(crate) fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    /// Encoder mean and standard deviation for each row of `x`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.encoder.forward(&self.params, x)?;
        let d = self.arch.latent_dim;
        let rows = out.rows();
        let mut mu = Vec::with_capacity(rows * d);
        let mut sigma = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let row = out.row(r);
            mu.extend_from_slice(&row[..d]);
            sigma.extend(row[d..].iter().map(|lv| (0.5 * lv).exp()));
        }
        let mu = Tensor::matrix(rows, d, mu);
        let sigma = Tensor::matrix(rows, d, sigma);
        check_finite(&mu, "encode")?;
        check_finite(&sigma, "encode")?;
        if sigma.data().iter().any(|&s| s <= 0.0) {
            return Err(LsboError::NonFinite {
                op: "encode (σ underflow)".into(),
            });
        }
        Ok((mu, sigma))
    }

    /// Encoder mean only; this is the deterministic half of a cycle.
    pub fn encode_mean_batch(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.encoder.forward(&self.params, x)?;
        let d = self.arch.latent_dim;
        let rows = out.rows();
        let mut mu = Vec::with_capacity(rows * d);
        for r in 0..rows {
            mu.extend_from_slice(&out.row(r)[..d]);
        }
        let mu = Tensor::matrix(rows, d, mu);
        check_finite(&mu, "encode")?;
        Ok(mu)
    }

    /// Decoder mean in (0,1) for each latent row.
    pub fn decode_batch(&self, z: &Tensor) -> Result<Tensor> {
        let logits = self.decoder.forward(&self.params, z)?;
        let out = logits.map(sigmoid);
        check_finite(&out, "decode")?;
        Ok(out)
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, sigma) = self.encode_batch(&Tensor::row_vector(x))?;
        Ok((mu.into_data(), sigma.into_data()))
    }

    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode_mean_batch(&Tensor::row_vector(x))?.into_data())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&Tensor::row_vector(z))?.into_data())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), "vae".into());
        meta.insert("input_dim".into(), self.arch.input_dim.to_string());
        meta.insert("latent_dim".into(), self.arch.latent_dim.to_string());
        meta.insert(
            "hidden".into(),
            self.arch
                .hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        meta.insert("activation".into(), self.arch.activation.as_str().into());
        meta.insert("likelihood".into(), self.arch.likelihood.as_str().into());
        meta.insert("beta".into(), self.beta.to_string());
        meta.insert("gamma".into(), self.gamma.to_string());
        Checkpoint::new(meta, self.params.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            ck.meta
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| LsboError::invalid(format!("checkpoint lacks `{k}`")))
        };
        let bad = |k: &str| LsboError::invalid(format!("checkpoint has malformed `{k}`"));
        if get("kind")? != "vae" {
            return Err(LsboError::invalid("checkpoint is not a VAE"));
        }
        let input_dim = get("input_dim")?.parse().map_err(|_| bad("input_dim"))?;
        let latent_dim = get("latent_dim")?.parse().map_err(|_| bad("latent_dim"))?;
        let hidden_s = get("hidden")?;
        let hidden = if hidden_s.is_empty() {
            Vec::new()
        } else {
            hidden_s
                .split(',')
                .map(|s| s.parse().map_err(|_| bad("hidden")))
                .collect::<Result<Vec<usize>>>()?
        };
        let activation = Activation::parse(get("activation")?).ok_or_else(|| bad("activation"))?;
        let likelihood = Likelihood::parse(get("likelihood")?).ok_or_else(|| bad("likelihood"))?;
        let beta: f64 = get("beta")?.parse().map_err(|_| bad("beta"))?;
        let gamma: f64 = get("gamma")?.parse().map_err(|_| bad("gamma"))?;
        let arch = VaeArch {
            input_dim,
            latent_dim,
            hidden,
            activation,
            likelihood,
        };
        Self::validate(&arch, beta, gamma)?;
        let encoder = Mlp::bind(&ck.params, "enc", &arch.encoder_sizes(), activation)?;
        let decoder = Mlp::bind(&ck.params, "dec", &arch.decoder_sizes(), activation)?;
        Ok(VaeModel {
            arch,
            beta,
            gamma,
            params: ck.params.clone(),
            encoder,
            decoder,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_checkpoint().to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `z = μ + σ ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], sigma: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if mu.len() != sigma.len() {
        return Err(LsboError::Shape {
            op: "reparameterize",
            detail: format!("μ has {} entries, σ has {}", mu.len(), sigma.len()),
        });
    }
    let eps = crate::rng::standard_normals(rng, mu.len());
    Ok(mu
        .iter()
        .zip(sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Latent consistency loss `‖ẑ − μ_φ(f_dec(ẑ))‖²` for one latent point.
pub fn lcl(model: &VaeModel, z: &[f64]) -> Result<f64> {
    if z.len() != model.latent_dim() {
        return Err(LsboError::Shape {
            op: "lcl",
            detail: format!("latent has {} entries, model dim is {}", z.len(), model.latent_dim()),
        });
    }
    let back = model.encode_mean(&model.decode(z)?)?;
    Ok(squared_distance(z, &back))
}

/// [`lcl`] for every row of `z`.
pub fn lcl_batch(model: &VaeModel, z: &Tensor) -> Result<Vec<f64>> {
    let back = model.encode_mean_batch(&model.decode_batch(z)?)?;
    Ok((0..z.rows())
        .map(|r| squared_distance(z.row(r), back.row(r)))
        .collect())
}
