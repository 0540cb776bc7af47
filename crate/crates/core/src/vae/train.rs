use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::objective::ObjectiveGraph;
use super::{ReferenceDistribution, VaeModel};
use crate::autodiff::{adam_step, AdamState, Tensor};
use crate::error::{LsboError, Result};
use crate::rng::{self, standard_normals};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Augmented latents per minibatch; `None` means "equal to the batch size".
    pub n_star: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            n_star: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn effective_n_star(&self) -> usize {
        self.n_star.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LsboError::invalid("batch size must be ≥ 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LsboError::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Where the latents feeding the consistency term come from.
#[derive(Clone, Debug)]
pub enum Augmentation<'a> {
    None,
    /// Fresh `N*` draws from the reference distribution for every minibatch.
    Reference(ReferenceDistribution),
    /// One fixed set reused by every minibatch.
    Fixed(&'a Tensor),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    pub lcl_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochLoss> {
        self.epochs.last()
    }
}

/// Minibatch Adam on the model's objective, in place.
///
/// The consistency term is active when `model.gamma() > 0` and the
/// augmentation yields at least one latent. On divergence the model keeps
/// the parameters of the last finite step.
pub fn train(
    model: &mut VaeModel,
    data: &Tensor,
    augmentation: Augmentation<'_>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if data.rows() == 0 {
        return Err(LsboError::invalid("training data is empty"));
    }
    if data.cols() != model.input_dim() {
        return Err(LsboError::Shape {
            op: "train",
            detail: format!("data has {} columns, model input is {}", data.cols(), model.input_dim()),
        });
    }
    let d = model.latent_dim();
    let n_star = match &augmentation {
        Augmentation::None => 0,
        Augmentation::Reference(p) => {
            if p.dim() != d {
                return Err(LsboError::invalid("reference dimension differs from latent dim"));
            }
            config.effective_n_star()
        }
        Augmentation::Fixed(t) => {
            if t.rows() > 0 && t.cols() != d {
                return Err(LsboError::invalid("augmented latents have wrong dimension"));
            }
            t.rows()
        }
    };
    let with_lcl = model.gamma() > 0.0 && n_star > 0;
    let mut objective = ObjectiveGraph::new(model, model.beta(), model.gamma(), with_lcl);
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut rng = rng::stream(config.seed, "vae-train", 0);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let mut report = TrainReport::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut lcl_sum = 0.0;
        let mut lcl_batches = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = data.select_rows(chunk);
            let eps = Tensor::matrix(chunk.len(), d, standard_normals(&mut rng, chunk.len() * d));
            let drawn;
            let zhat = match &augmentation {
                _ if !with_lcl => None,
                Augmentation::Reference(p) => {
                    drawn = p.sample(n_star, &mut rng);
                    Some(&drawn)
                }
                Augmentation::Fixed(t) => Some(*t),
                Augmentation::None => None,
            };
            let diverged = |detail: String| LsboError::Divergence { epoch, step, detail };
            let parts = objective
                .evaluate(model, &x, &eps, zhat)
                .map_err(|e| diverged(e.to_string()))?;
            let grads = objective.gradients(model)?;
            if !grads.is_finite() {
                return Err(diverged("non-finite gradient".into()));
            }
            adam_step(model.params_mut(), &grads, &mut adam)?;
            let w = chunk.len() as f64;
            sums[0] += parts.elbo * w;
            sums[1] += parts.kl * w;
            sums[2] += parts.recon * w;
            sums[3] += w;
            if let Some(l) = parts.lcl_mean {
                lcl_sum += l;
                lcl_batches += 1;
            }
        }
        if model.params().tensors().iter().any(|t| !t.is_finite()) {
            return Err(LsboError::Divergence {
                epoch,
                step: 0,
                detail: "parameters became non-finite".into(),
            });
        }
        report.epochs.push(EpochLoss {
            epoch,
            elbo: sums[0] / sums[3],
            kl: sums[1] / sums[3],
            recon: sums[2] / sums[3],
            lcl_mean: if lcl_batches > 0 {
                lcl_sum / lcl_batches as f64
            } else {
                0.0
            },
        });
    }
    Ok(report)
}
