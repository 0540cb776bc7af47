//! The optimization loops: vanilla LSBO, LSBO with the consistency-aware
//! acquisition, and LCA-LSBO with latent augmentation during retraining.
//!
//! All five method tags share one loop. Each iteration derives its random
//! streams from `(seed, name, iteration)`, so a run can be checkpointed
//! after any iteration and resumed without replaying earlier ones.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_base_af, maximize_lca_af, AcquisitionSpec};
use crate::autodiff::Tensor;
use crate::cycles::LatentCycle;
use crate::error::{LsboError, Result};
use crate::gp::{GpFitConfig, GpHyper, GpSurrogate};
use crate::rng;
use crate::tasks::BlackBox;
use crate::vae::{lcl_batch, train, Augmentation, ReferenceDistribution, TrainConfig, VaeModel, BO_PHASE_REFERENCE_STD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vanilla,
    VanillaRt,
    LcaAf,
    LcaAfRt,
    LcaLsbo,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::VanillaRt,
        Method::LcaAf,
        Method::LcaAfRt,
        Method::LcaLsbo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::VanillaRt => "vanilla-rt",
            Method::LcaAf => "lca-af",
            Method::LcaAfRt => "lca-af-rt",
            Method::LcaLsbo => "lca-lsbo",
        }
    }

    pub fn retrains(self) -> bool {
        matches!(self, Method::VanillaRt | Method::LcaAfRt | Method::LcaLsbo)
    }

    pub fn cycles(self) -> bool {
        matches!(self, Method::LcaAf | Method::LcaAfRt | Method::LcaLsbo)
    }

    pub fn augments(self) -> bool {
        self == Method::LcaLsbo
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = LsboError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LsboError::invalid(format!("unknown method tag {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeAt {
    /// The acquisition maximizer `z` itself.
    #[default]
    Maximizer,
    /// The consistent point `μ_ref` reached by cycling from the maximizer.
    ConsistentPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsboConfig {
    pub method: Method,
    /// Black-box evaluation budget `J`.
    pub iterations: usize,
    pub retrain_epochs: usize,
    /// Augmented latents per retrain; `None` means the batch size.
    pub n_star: Option<usize>,
    pub sigma_ref: f64,
    pub seed_instances: usize,
    /// Stop once a label reaches this value.
    pub stop_at: Option<f64>,
    /// Draws used to measure mean LCL around `μ_ref` before and after retraining.
    pub lcl_probe: usize,
    /// Which latent the cycle-aware methods decode and label.
    pub decode: DecodeAt,
    pub acquisition: AcquisitionSpec,
    pub train: TrainConfig,
    pub gp: GpFitConfig,
    pub seed: u64,
}

impl Default for LsboConfig {
    fn default() -> Self {
        LsboConfig {
            method: Method::LcaLsbo,
            iterations: 50,
            retrain_epochs: 3,
            n_star: None,
            sigma_ref: BO_PHASE_REFERENCE_STD,
            seed_instances: 10,
            stop_at: None,
            lcl_probe: 256,
            decode: DecodeAt::default(),
            acquisition: AcquisitionSpec::default(),
            train: TrainConfig::default(),
            gp: GpFitConfig::default(),
            seed: 0,
        }
    }
}

impl LsboConfig {
    pub fn effective_n_star(&self) -> usize {
        self.n_star.unwrap_or(self.train.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(LsboError::invalid("J must be at least 1"));
        }
        if !(self.sigma_ref > 0.0) {
            return Err(LsboError::invalid("σ_ref must be positive"));
        }
        self.acquisition.validate()?;
        self.train.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub x: Vec<f64>,
    /// Latent that was decoded to produce a generated entry. The surrogate
    /// ignores it and re-encodes `x` with the current model.
    pub z: Option<Vec<f64>>,
    pub y: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub entries: Vec<LabeledEntry>,
}

impl LabeledSet {
    pub fn from_seeds(seeds: &[(Vec<f64>, f64)]) -> Result<Self> {
        if seeds.iter().any(|(_, y)| !y.is_finite()) {
            return Err(LsboError::invalid("seed labels must be finite"));
        }
        Ok(LabeledSet {
            entries: seeds
                .iter()
                .map(|(x, y)| LabeledEntry {
                    x: x.clone(),
                    z: None,
                    y: *y,
                    provenance: Provenance::Seed,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> f64 {
        self.entries.iter().map(|e| e.y).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Surrogate training pairs: every labeled input under the current
    /// encoder.
    pub fn latents<M: LatentModel + ?Sized>(&self, model: &M) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let rows: Vec<Vec<f64>> = self.entries.iter().map(|e| e.x.clone()).collect();
        let z = model.encode_latents(&Tensor::from_rows(&rows)?)?.to_rows();
        Ok((z, self.entries.iter().map(|e| e.y).collect()))
    }

    fn generated_inputs(&self) -> Vec<Vec<f64>> {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Generated)
            .map(|e| e.x.clone())
            .collect()
    }
}

/// The generative model as the loop sees it.
pub trait LatentModel: LatentCycle {
    fn encode_latents(&self, x: &Tensor) -> Result<Tensor>;

    fn decode_latents(&self, z: &Tensor) -> Result<Tensor>;

    /// Mean one-cycle consistency loss over the rows of `z`.
    fn mean_lcl(&self, z: &Tensor) -> Result<f64>;

    /// Warm-started retraining; `augmented` feeds the consistency term.
    fn retrain(&mut self, data: &Tensor, augmented: Option<&Tensor>, config: &TrainConfig) -> Result<RetrainSummary>;

    fn fingerprint(&self) -> String;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrainSummary {
    pub elbo: f64,
    pub first_epoch_lcl: f64,
    pub last_epoch_lcl: f64,
}

impl LatentModel for VaeModel {
    fn encode_latents(&self, x: &Tensor) -> Result<Tensor> {
        self.encode_mean_batch(x)
    }

    fn decode_latents(&self, z: &Tensor) -> Result<Tensor> {
        self.decode_batch(z)
    }

    fn mean_lcl(&self, z: &Tensor) -> Result<f64> {
        let v = lcl_batch(self, z)?;
        Ok(v.iter().sum::<f64>() / v.len().max(1) as f64)
    }

    fn retrain(&mut self, data: &Tensor, augmented: Option<&Tensor>, config: &TrainConfig) -> Result<RetrainSummary> {
        let aug = match augmented {
            Some(t) => Augmentation::Fixed(t),
            None => Augmentation::None,
        };
        let report = train(self, data, aug, config)?;
        Ok(match (report.epochs.first(), report.epochs.last()) {
            (Some(f), Some(l)) => RetrainSummary {
                elbo: l.elbo,
                first_epoch_lcl: f.lcl_mean,
                last_epoch_lcl: l.lcl_mean,
            },
            _ => RetrainSummary::default(),
        })
    }

    fn fingerprint(&self) -> String {
        VaeModel::fingerprint(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub z: Vec<f64>,
    /// Consistent point reached from `z`; `z` itself for the base AF.
    pub mu_ref: Vec<f64>,
    pub x: Vec<f64>,
    /// `None` when the black box failed.
    pub y_star: Option<f64>,
    pub best_so_far: f64,
    pub af_value: f64,
    pub converged: bool,
    pub lcl_at_muref: f64,
    pub lcl_before: f64,
    pub lcl_after: Option<f64>,
    pub retrain: Option<RetrainSummary>,
    pub surrogate: GpHyper,
    pub failure: Option<String>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsboHistory {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
}

impl LsboHistory {
    pub fn best_so_far(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_so_far).collect()
    }

    /// 1-based index of the first evaluation reaching `threshold`.
    pub fn evaluations_to_reach(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.y_star.is_some_and(|y| y >= threshold))
            .map(|r| r.iteration)
    }
}

/// Everything needed to continue a run besides the model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsboState {
    pub labeled: LabeledSet,
    pub history: LsboHistory,
    pub finished: bool,
}

/// One optimization run.
pub struct LsboRun<'a, M: LatentModel> {
    config: LsboConfig,
    model: M,
    data: &'a Tensor,
    bb: &'a dyn BlackBox,
    state: LsboState,
}

fn derived_seed(seed: u64, name: &str, index: u64) -> u64 {
    rng::stream(seed, name, index).gen()
}

impl<'a, M: LatentModel> LsboRun<'a, M> {
    pub fn new(config: LsboConfig, model: M, data: &'a Tensor, bb: &'a dyn BlackBox, seeds: &[(Vec<f64>, f64)]) -> Result<Self> {
        config.validate()?;
        if seeds.is_empty() {
            return Err(LsboError::invalid("the labeled set needs at least one seed instance"));
        }
        let state = LsboState {
            labeled: LabeledSet::from_seeds(seeds)?,
            history: LsboHistory {
                method: config.method,
                seed: config.seed,
                records: Vec::new(),
            },
            finished: false,
        };
        Ok(LsboRun {
            config,
            model,
            data,
            bb,
            state,
        })
    }

    /// Continue from a saved state and the model saved with it.
    pub fn resume(config: LsboConfig, model: M, data: &'a Tensor, bb: &'a dyn BlackBox, state: LsboState) -> Result<Self> {
        config.validate()?;
        if state.history.method != config.method || state.history.seed != config.seed {
            return Err(LsboError::invalid("saved state belongs to a different method or seed"));
        }
        Ok(LsboRun {
            config,
            model,
            data,
            bb,
            state,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn into_model(self) -> M {
        self.model
    }

    pub fn state(&self) -> &LsboState {
        &self.state
    }

    pub fn history(&self) -> &LsboHistory {
        &self.state.history
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.state.labeled
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished || self.state.history.records.len() >= self.config.iterations
    }

    /// Run one BO iteration. Returns `None` once the run is over.
    pub fn step(&mut self) -> Result<Option<&IterationRecord>> {
        if self.is_finished() {
            self.state.finished = true;
            return Ok(None);
        }
        let started = Instant::now();
        let cfg = &self.config;
        let j = self.state.history.records.len() as u64 + 1;

        let (zs, ys) = self.state.labeled.latents(&self.model)?;
        let gp_cfg = GpFitConfig {
            seed: derived_seed(cfg.seed, "lsbo-gp", j),
            ..cfg.gp.clone()
        };
        let gp = GpSurrogate::fit(&zs, &ys, GpHyper::default(), &gp_cfg)?;
        let mut acq_rng = rng::stream(cfg.seed, "lsbo-acquisition", j);
        let best = if cfg.method.cycles() {
            maximize_lca_af(&self.model, &gp, &cfg.acquisition, &mut acq_rng)?
        } else {
            maximize_base_af(&gp, &cfg.acquisition, &mut acq_rng)?
        };
        let mu_ref = best.query_point();
        let converged = best.trace.as_ref().is_none_or(|t| t.converged);
        let query = match cfg.decode {
            DecodeAt::ConsistentPoint => mu_ref.clone(),
            DecodeAt::Maximizer => best.z.clone(),
        };
        let x = self.model.decode_latents(&Tensor::row_vector(&query))?.into_data();

        let (y_star, failure) = match self.bb.evaluate(&x) {
            Ok(y) if y.is_finite() => (Some(y), None),
            Ok(y) => (None, Some(format!("black box returned {y}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(y) = y_star {
            self.state.labeled.entries.push(LabeledEntry {
                x: x.clone(),
                z: Some(query.clone()),
                y,
                provenance: Provenance::Generated,
            });
        }

        let probe = ReferenceDistribution::new(mu_ref.clone(), cfg.sigma_ref)?
            .sample(cfg.lcl_probe.max(1), &mut rng::stream(cfg.seed, "lsbo-lcl-probe", j));
        let lcl_at_muref = self.model.mean_lcl(&Tensor::row_vector(&mu_ref))?;
        let lcl_before = self.model.mean_lcl(&probe)?;

        let mut retrain = None;
        let mut lcl_after = None;
        if cfg.method.retrains() && y_star.is_some() {
            let mut rows = self.data.to_rows();
            rows.extend(self.state.labeled.generated_inputs());
            let data = Tensor::from_rows(&rows)?;
            let augmented = if cfg.method.augments() {
                Some(
                    ReferenceDistribution::new(mu_ref.clone(), cfg.sigma_ref)?
                        .sample(cfg.effective_n_star(), &mut rng::stream(cfg.seed, "lsbo-augment", j)),
                )
            } else {
                None
            };
            let train_cfg = TrainConfig {
                epochs: cfg.retrain_epochs,
                seed: derived_seed(cfg.seed, "lsbo-retrain", j),
                ..cfg.train.clone()
            };
            retrain = Some(self.model.retrain(&data, augmented.as_ref().filter(|t| t.rows() > 0), &train_cfg)?);
            lcl_after = Some(self.model.mean_lcl(&probe)?);
        }

        let best_so_far = self.state.labeled.best();
        let stop = matches!((cfg.stop_at, y_star), (Some(t), Some(y)) if y >= t);
        self.state.history.records.push(IterationRecord {
            iteration: j as usize,
            z: best.z,
            mu_ref,
            x,
            y_star,
            best_so_far,
            af_value: best.value,
            converged,
            lcl_at_muref,
            lcl_before,
            lcl_after,
            retrain,
            surrogate: gp.hyper(),
            failure,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if stop {
            self.state.finished = true;
        }
        Ok(self.state.history.records.last())
    }

    pub fn run_to_end(&mut self) -> Result<&LsboHistory> {
        while self.step()?.is_some() {}
        Ok(&self.state.history)
    }
}

/// Run `config.method` to completion, returning the history and final model.
pub fn run_lsbo<M: LatentModel>(
    config: &LsboConfig,
    model: M,
    data: &Tensor,
    bb: &dyn BlackBox,
    seeds: &[(Vec<f64>, f64)],
) -> Result<(LsboHistory, M)> {
    let mut run = LsboRun::new(config.clone(), model, data, bb, seeds)?;
    run.run_to_end()?;
    let history = run.history().clone();
    Ok((history, run.into_model()))
}

fn expect_method(config: &LsboConfig, allowed: &[Method]) -> Result<()> {
    if allowed.contains(&config.method) {
        Ok(())
    } else {
        Err(LsboError::invalid(format!(
            "method {} is not one of {:?}",
            config.method,
            allowed.iter().map(|m| m.as_str()).collect::<Vec<_>>()
        )))
    }
}

/// Base acquisition maximized directly over the box (`vanilla`, `vanilla-rt`).
pub fn run_vanilla_lsbo<M: LatentModel>(
    config: &LsboConfig,
    model: M,
    data: &Tensor,
    bb: &dyn BlackBox,
    seeds: &[(Vec<f64>, f64)],
) -> Result<(LsboHistory, M)> {
    expect_method(config, &[Method::Vanilla, Method::VanillaRt])?;
    run_lsbo(config, model, data, bb, seeds)
}

/// Consistency-aware acquisition with optional plain retraining
/// (`lca-af`, `lca-af-rt`).
pub fn run_lsbo_lca_af<M: LatentModel>(
    config: &LsboConfig,
    model: M,
    data: &Tensor,
    bb: &dyn BlackBox,
    seeds: &[(Vec<f64>, f64)],
) -> Result<(LsboHistory, M)> {
    expect_method(config, &[Method::LcaAf, Method::LcaAfRt])?;
    run_lsbo(config, model, data, bb, seeds)
}

/// Consistency-aware acquisition plus latent augmentation around the
/// consistent point during every retrain (`lca-lsbo`).
pub fn run_lca_lsbo<M: LatentModel>(
    config: &LsboConfig,
    model: M,
    data: &Tensor,
    bb: &dyn BlackBox,
    seeds: &[(Vec<f64>, f64)],
) -> Result<(LsboHistory, M)> {
    expect_method(config, &[Method::LcaLsbo])?;
    run_lsbo(config, model, data, bb, seeds)
}

/// One retrain on `U ∪ L` with optional augmented latents.
pub fn retrain_step<M: LatentModel>(
    model: &mut M,
    data: &Tensor,
    labeled: &LabeledSet,
    augmented: Option<&Tensor>,
    config: &TrainConfig,
) -> Result<RetrainSummary> {
    let mut rows = data.to_rows();
    rows.extend(labeled.generated_inputs());
    model.retrain(&Tensor::from_rows(&rows)?, augmented.filter(|t| t.rows() > 0), config)
}
