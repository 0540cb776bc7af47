//! Datasets, black-box objectives and the generation metrics.
//!
//! The desk-scale task clusters 8×8 images around blob prototypes, hides
//! one cluster from the generative model's training data, and scores
//! candidates with a classifier trained to recognize the hidden cluster.

pub mod idx;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, sigmoid, AdamState, Graph, ParamSet, Tensor};
use crate::error::{LsboError, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::{self, standard_normals};

pub use idx::load_idx;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub data: Tensor,
    pub labels: Option<Vec<u8>>,
    pub excluded: Option<u8>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, data: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != data.rows() {
                return Err(LsboError::invalid(format!(
                    "{} labels for {} rows",
                    l.len(),
                    data.rows()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            data,
            labels,
            excluded: None,
        })
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    /// Drop every row labeled `class`.
    pub fn without_class(&self, class: u8) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| LsboError::invalid("cannot exclude a class from an unlabeled dataset"))?;
        let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != class).collect();
        Ok(Dataset {
            name: self.name.clone(),
            data: self.data.select_rows(&keep),
            labels: Some(keep.iter().map(|&i| labels[i]).collect()),
            excluded: Some(class),
        })
    }

    /// Rows whose label is `class`.
    pub fn rows_of(&self, class: u8) -> Vec<Vec<f64>> {
        match &self.labels {
            Some(l) => (0..l.len())
                .filter(|&i| l[i] == class)
                .map(|i| self.data.row(i).to_vec())
                .collect(),
            None => Vec::new(),
        }
    }
}

/// A deterministic scalar objective on the input space.
pub trait BlackBox {
    fn input_dim(&self) -> usize;

    /// Score in `[0, 1]`.
    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    fn describe(&self) -> String;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of rows held out for the accuracy check.
    pub holdout: f64,
    /// Extra negative rows (flat images, noise, blends of other visible
    /// pairs) appended to the classifier's training set.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            hidden: vec![32],
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-2,
            holdout: 0.2,
            distractors: 2000,
            seed: 0,
        }
    }
}

/// Frozen binary MLP classifier; the score is its sigmoid probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOracle {
    net: Mlp,
    params: ParamSet,
    target: u8,
    holdout_accuracy: f64,
}

impl ClassifierOracle {
    pub fn target(&self) -> u8 {
        self.target
    }

    pub fn holdout_accuracy(&self) -> f64 {
        self.holdout_accuracy
    }

    pub fn evaluate_batch(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.params, x)?.into_data().into_iter().map(sigmoid).collect())
    }

    fn accuracy(&self, data: &Tensor, y: &[f64]) -> Result<f64> {
        if y.is_empty() {
            return Ok(1.0);
        }
        let p = self.evaluate_batch(data)?;
        let hits = p.iter().zip(y).filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5)).count();
        Ok(hits as f64 / y.len() as f64)
    }
}

impl BlackBox for ClassifierOracle {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(LsboError::BlackBox(format!(
                "input has {} entries, oracle expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LsboError::BlackBox("non-finite input".into()));
        }
        Ok(self.evaluate_batch(&Tensor::row_vector(x))?[0])
    }

    fn describe(&self) -> String {
        format!(
            "MLP {:?} probability of class {}",
            self.net.sizes(),
            self.target
        )
    }
}

/// Train a "target class vs. everything else" classifier on a dataset
/// that still contains every class.
pub fn train_oracle_classifier(full: &Dataset, target: u8, config: &OracleConfig) -> Result<ClassifierOracle> {
    let labels = full
        .labels
        .as_ref()
        .ok_or_else(|| LsboError::invalid("oracle training needs labels"))?;
    let y: Vec<f64> = labels.iter().map(|&l| if l == target { 1.0 } else { 0.0 }).collect();
    if !y.contains(&1.0) || !y.contains(&0.0) {
        return Err(LsboError::invalid("oracle training needs both positive and negative rows"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.holdout) {
        return Err(LsboError::invalid("bad oracle training configuration"));
    }

    let mut r = rng::stream(config.seed, "oracle-split", 0);
    let mut idx: Vec<usize> = (0..full.len()).collect();
    idx.shuffle(&mut r);
    let n_hold = (config.holdout * full.len() as f64).round() as usize;
    let (hold, train) = idx.split_at(n_hold);

    let mut params = ParamSet::default();
    let mut sizes = vec![full.dim()];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let net = Mlp::new(
        &mut params,
        "oracle",
        &sizes,
        Activation::Tanh,
        &mut rng::stream(config.seed, "oracle-init", 0),
    );

    let mut g = Graph::new();
    let x = g.input("x");
    let t = g.input("y");
    let logit = net.build(&mut g, x);
    // logistic loss: softplus(l) − y·l
    let sp = g.softplus(logit);
    let yl = g.mul(t, logit);
    let per_row = g.sub(sp, yl);
    let loss = g.mean(per_row);
    g.output("loss", loss);

    let mut adam = AdamState::new(&params, config.learning_rate);
    let mut order = train.to_vec();
    let mut sr = rng::stream(config.seed, "oracle-train", 0);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut sr);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = full.data.select_rows(chunk);
            let yb = Tensor::matrix(chunk.len(), 1, chunk.iter().map(|&i| y[i]).collect());
            g.forward(&params, &[("x", &xb), ("y", &yb)])
                .map_err(|e| LsboError::Divergence {
                    epoch,
                    step,
                    detail: e.to_string(),
                })?;
            let grads = g.backward(loss, &params)?;
            if !grads.is_finite() {
                return Err(LsboError::Divergence {
                    epoch,
                    step,
                    detail: "non-finite oracle gradient".into(),
                });
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
    }

    let mut oracle = ClassifierOracle {
        net,
        params,
        target,
        holdout_accuracy: 1.0,
    };
    let hx = full.data.select_rows(hold);
    let hy: Vec<f64> = hold.iter().map(|&i| y[i]).collect();
    oracle.holdout_accuracy = oracle.accuracy(&hx, &hy)?;
    Ok(oracle)
}

/// What the hidden cluster's prototype looks like.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcludedShape {
    /// Equal blend of the two visible prototypes adjacent to it.
    Blend,
    /// Its own blob, like every other cluster.
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterTaskSpec {
    pub side: usize,
    pub clusters: usize,
    pub excluded: usize,
    pub excluded_shape: ExcludedShape,
    pub per_cluster: usize,
    pub noise: f64,
    pub blob_width: f64,
    pub seed: u64,
    pub oracle: OracleConfig,
}

impl Default for ClusterTaskSpec {
    fn default() -> Self {
        ClusterTaskSpec {
            side: 8,
            clusters: 5,
            excluded: 0,
            excluded_shape: ExcludedShape::Blend,
            per_cluster: 200,
            noise: 0.1,
            blob_width: 1.2,
            seed: 0,
            oracle: OracleConfig::default(),
        }
    }
}

pub struct ExcludedClusterTask {
    pub spec: ClusterTaskSpec,
    /// Every cluster, including the hidden one.
    pub full: Dataset,
    /// What the generative model may see.
    pub train: Dataset,
    pub prototypes: Vec<Vec<f64>>,
    pub oracle: ClassifierOracle,
}

fn blob(side: usize, cx: f64, cy: f64, width: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(side * side);
    for v in 0..side {
        for u in 0..side {
            let r2 = (u as f64 - cx).powi(2) + (v as f64 - cy).powi(2);
            out.push((-0.5 * r2 / (width * width)).exp());
        }
    }
    out
}

/// Blob prototypes spaced evenly on a circle around the image center.
pub fn cluster_prototypes(spec: &ClusterTaskSpec) -> Vec<Vec<f64>> {
    let c = (spec.side as f64 - 1.0) / 2.0;
    let radius = 0.3 * spec.side as f64;
    let mut protos: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / spec.clusters as f64;
            blob(spec.side, c + radius * a.cos(), c + radius * a.sin(), spec.blob_width)
        })
        .collect();
    if spec.excluded_shape == ExcludedShape::Blend {
        let k = spec.clusters;
        let a = (spec.excluded + 1) % k;
        let b = (spec.excluded + k - 1) % k;
        protos[spec.excluded] = protos[a].iter().zip(&protos[b]).map(|(p, q)| 0.5 * (p + q)).collect();
    }
    protos
}

/// Negative examples that are neither clean clusters nor the target:
/// flat images, pixel noise, blends of visible prototype pairs other than
/// the one defining the hidden cluster, and random blob mixtures. Anything
/// closer to the hidden prototype than `0.25 ×` its distance to the
/// nearest visible prototype is discarded.
fn distractors<R: Rng + ?Sized>(spec: &ClusterTaskSpec, protos: &[Vec<f64>], r: &mut R) -> Vec<Vec<f64>> {
    let dim = spec.side * spec.side;
    let k = spec.clusters;
    let target = &protos[spec.excluded];
    let sq = |a: &[f64], b: &[f64]| crate::linalg::squared_distance(a, b);
    let margin = 0.25
        * (0..k)
            .filter(|&i| i != spec.excluded)
            .map(|i| sq(target, &protos[i]))
            .fold(f64::INFINITY, f64::min);
    let target_pair = [(spec.excluded + 1) % k, (spec.excluded + k - 1) % k];
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let is_target = target_pair.contains(&a) && target_pair.contains(&b);
            if a != spec.excluded && b != spec.excluded && !(is_target && spec.excluded_shape == ExcludedShape::Blend) {
                pairs.push((a, b));
            }
        }
    }
    let side = spec.side as f64;
    let mut out = Vec::with_capacity(spec.oracle.distractors);
    while out.len() < spec.oracle.distractors {
        let row: Vec<f64> = match out.len() % 4 {
            0 => vec![r.gen::<f64>(); dim],
            1 => (0..dim).map(|_| r.gen::<f64>()).collect(),
            2 if !pairs.is_empty() => {
                let (a, b) = pairs[r.gen_range(0..pairs.len())];
                let w: f64 = r.gen_range(0.2..0.8);
                protos[a].iter().zip(&protos[b]).map(|(p, q)| w * p + (1.0 - w) * q).collect()
            }
            _ => {
                let mut img = vec![0.0; dim];
                for _ in 0..r.gen_range(1..=4) {
                    let (cx, cy) = (r.gen_range(-1.0..side), r.gen_range(-1.0..side));
                    let amp = r.gen_range(0.2..1.0);
                    let b = blob(spec.side, cx, cy, r.gen_range(0.6..2.5));
                    img.iter_mut().zip(b).for_each(|(v, p)| *v += amp * p);
                }
                img
            }
        };
        let noise = standard_normals(r, dim);
        let row: Vec<f64> = row
            .iter()
            .zip(noise)
            .map(|(v, e)| (v + spec.noise * e).clamp(0.0, 1.0))
            .collect();
        if sq(&row, target) >= margin {
            out.push(row);
        }
    }
    out
}

pub fn make_excluded_cluster_task(spec: &ClusterTaskSpec) -> Result<ExcludedClusterTask> {
    if spec.clusters < 2 {
        return Err(LsboError::invalid("need at least two clusters"));
    }
    if spec.excluded_shape == ExcludedShape::Blend && spec.clusters < 3 {
        return Err(LsboError::invalid("a blended hidden cluster needs at least three clusters"));
    }
    if spec.excluded >= spec.clusters || spec.clusters > 256 {
        return Err(LsboError::invalid("excluded index out of range"));
    }
    if spec.side == 0 || spec.per_cluster == 0 || !(spec.noise >= 0.0) || !(spec.blob_width > 0.0) {
        return Err(LsboError::invalid("degenerate cluster task specification"));
    }
    let protos = cluster_prototypes(spec);
    let dim = spec.side * spec.side;
    let mut r = rng::stream(spec.seed, "cluster-data", 0);
    let mut rows = Vec::with_capacity(spec.clusters * spec.per_cluster);
    let mut labels = Vec::with_capacity(rows.capacity());
    for _ in 0..spec.per_cluster {
        for (k, p) in protos.iter().enumerate() {
            let noise = standard_normals(&mut r, dim);
            rows.push(
                p.iter()
                    .zip(noise)
                    .map(|(v, e)| (v + spec.noise * e).clamp(0.0, 1.0))
                    .collect::<Vec<f64>>(),
            );
            labels.push(k as u8);
        }
    }
    let full = Dataset::new("excluded-cluster", Tensor::from_rows(&rows)?, Some(labels))?;
    let train = full.without_class(spec.excluded as u8)?;
    let oracle_cfg = OracleConfig {
        seed: spec.oracle.seed ^ spec.seed,
        ..spec.oracle.clone()
    };
    let oracle = if spec.oracle.distractors > 0 {
        let mut rows = full.data.to_rows();
        let mut labels = full.labels.clone().expect("labeled");
        let background = spec.clusters as u8;
        for row in distractors(spec, &protos, &mut r) {
            rows.push(row);
            labels.push(background);
        }
        let augmented = Dataset::new("oracle-train", Tensor::from_rows(&rows)?, Some(labels))?;
        train_oracle_classifier(&augmented, spec.excluded as u8, &oracle_cfg)?
    } else {
        train_oracle_classifier(&full, spec.excluded as u8, &oracle_cfg)?
    };
    Ok(ExcludedClusterTask {
        spec: spec.clone(),
        full,
        train,
        prototypes: protos,
        oracle,
    })
}

/// Draw `n` distinct training rows with their oracle labels.
pub fn seed_instances<R: Rng + ?Sized>(
    data: &Dataset,
    bb: &dyn BlackBox,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, f64)>> {
    if n > data.len() {
        return Err(LsboError::invalid(format!("asked for {n} seed rows from {}", data.len())));
    }
    let idx = rand::seq::index::sample(rng, data.len(), n).into_vec();
    idx.into_iter()
        .map(|i| {
            let x = data.data.row(i).to_vec();
            let y = bb.evaluate(&x)?;
            Ok((x, y))
        })
        .collect()
}

/// Fraction of distinct instances, two instances being equal when every
/// component differs by at most `tol`. Classes are formed greedily in
/// order against each class's first member.
pub fn diversity(instances: &[Vec<f64>], tol: f64) -> Result<f64> {
    if instances.is_empty() {
        return Err(LsboError::invalid("diversity of an empty set"));
    }
    let mut reps: Vec<&Vec<f64>> = Vec::new();
    for x in instances {
        let same = |r: &&Vec<f64>| r.len() == x.len() && r.iter().zip(x).all(|(a, b)| (a - b).abs() <= tol);
        if !reps.iter().any(same) {
            reps.push(x);
        }
    }
    Ok(reps.len() as f64 / instances.len() as f64)
}
