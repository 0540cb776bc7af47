//! Base acquisition functions and the latent-consistency-aware wrapper.
//!
//! `lca_af` scores a candidate by the acquisition value of its cycled
//! image: the final iterate when the cycles converge, otherwise the mean
//! over the retained trailing set. Maximization is a batched multi-start
//! pattern search, so no gradients flow through the cycles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::cycles::{successive_cycles_batch, CycleSchedule, CycleTrace, LatentCycle, DEFAULT_TOLERANCE};
use crate::error::{LsboError, Result};
use crate::gp::GpSurrogate;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn ucb(mean: f64, variance: f64, kappa: f64) -> f64 {
    mean + kappa * variance.max(0.0).sqrt()
}

pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Expected improvement over `y_best + xi`.
pub fn ei(mean: f64, variance: f64, y_best: f64, xi: f64) -> f64 {
    let gap = mean - y_best - xi;
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        return gap.max(0.0);
    }
    let u = gap / sigma;
    (gap * normal_cdf(u) + sigma * normal_pdf(u)).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AfKind {
    Ucb { kappa: f64 },
    Ei { xi: f64 },
}

impl Default for AfKind {
    fn default() -> Self {
        AfKind::Ucb { kappa: 2.0 }
    }
}

impl AfKind {
    pub fn evaluate(&self, mean: f64, variance: f64, y_best: f64) -> f64 {
        match *self {
            AfKind::Ucb { kappa } => ucb(mean, variance, kappa),
            AfKind::Ei { xi } => ei(mean, variance, y_best, xi),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AfKind::Ucb { kappa } if !(kappa >= 0.0) => Err(LsboError::invalid("UCB needs κ ≥ 0")),
            AfKind::Ei { xi } if !(xi >= 0.0) => Err(LsboError::invalid("EI needs ξ ≥ 0")),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionSpec {
    pub af: AfKind,
    pub burn_in: usize,
    pub cycles: usize,
    pub tolerance: f64,
    /// Search box `[lower, upper]` applied to every latent dimension.
    pub lower: f64,
    pub upper: f64,
    pub starts: usize,
    pub steps: usize,
    /// Initial pattern-search step as a fraction of the box width.
    pub initial_step: f64,
    pub min_step: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            af: AfKind::default(),
            burn_in: 50,
            cycles: 100,
            tolerance: DEFAULT_TOLERANCE,
            lower: -6.0,
            upper: 6.0,
            starts: 64,
            steps: 100,
            initial_step: 0.125,
            min_step: 1e-3,
        }
    }
}

impl AcquisitionSpec {
    /// Defaults with the cycle schedule chosen for `latent_dim`.
    pub fn for_dim(latent_dim: usize) -> Self {
        let s = CycleSchedule::for_dim(latent_dim);
        AcquisitionSpec {
            burn_in: s.burn_in,
            cycles: s.cycles,
            ..AcquisitionSpec::default()
        }
    }

    pub fn schedule(&self) -> Result<CycleSchedule> {
        CycleSchedule::new(self.burn_in, self.cycles)
    }

    pub fn validate(&self) -> Result<()> {
        self.af.validate()?;
        self.schedule()?;
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(LsboError::invalid("search box needs finite lower < upper"));
        }
        if self.starts == 0 {
            return Err(LsboError::invalid("need at least one start"));
        }
        if !(self.tolerance > 0.0) || !(self.initial_step > 0.0) || !(self.min_step > 0.0) {
            return Err(LsboError::invalid("tolerance and step sizes must be positive"));
        }
        Ok(())
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

pub fn base_af(gp: &GpSurrogate, af: AfKind, z: &[f64]) -> f64 {
    let (m, v) = gp.predict(z);
    af.evaluate(m, v, gp.y_best())
}

/// The acquisition value of a cycle trace: the base value at the final
/// iterate when converged, the mean over the retained set otherwise.
pub fn lca_af_from_trace(gp: &GpSurrogate, af: AfKind, trace: &CycleTrace) -> f64 {
    if trace.converged {
        return base_af(gp, af, trace.final_point());
    }
    let retained = trace.retained();
    retained.iter().map(|z| base_af(gp, af, z)).sum::<f64>() / retained.len() as f64
}

pub fn lca_af<C: LatentCycle + ?Sized>(
    model: &C,
    gp: &GpSurrogate,
    spec: &AcquisitionSpec,
    z: &[f64],
) -> Result<(f64, CycleTrace)> {
    let mut out = lca_af_batch(model, gp, spec, &[z.to_vec()])?;
    Ok(out.pop().expect("one candidate"))
}

pub fn lca_af_batch<C: LatentCycle + ?Sized>(
    model: &C,
    gp: &GpSurrogate,
    spec: &AcquisitionSpec,
    zs: &[Vec<f64>],
) -> Result<Vec<(f64, CycleTrace)>> {
    let traces = successive_cycles_batch(model, zs, spec.schedule()?, spec.tolerance)?;
    Ok(traces
        .into_iter()
        .map(|t| (lca_af_from_trace(gp, spec.af, &t), t))
        .collect())
}

/// Where one pattern-search start ended up.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StartOutcome {
    pub start: Vec<f64>,
    pub start_value: f64,
    pub z: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Maximum {
    pub z: Vec<f64>,
    pub value: f64,
    /// Cycle trace at `z`; absent for the base acquisition.
    pub trace: Option<CycleTrace>,
    pub starts: Vec<StartOutcome>,
}

impl Maximum {
    /// The latent that gets decoded and labeled: the consistent point of
    /// the trace, or `z` itself without one.
    pub fn query_point(&self) -> Vec<f64> {
        match &self.trace {
            Some(t) => t.consistent_point(),
            None => self.z.clone(),
        }
    }
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Multi-start coordinate pattern search, every start advanced in
/// lockstep so each round is a single batched evaluation.
fn pattern_search<R, F>(dim: usize, spec: &AcquisitionSpec, rng: &mut R, mut eval: F) -> Result<(usize, Vec<StartOutcome>)>
where
    R: Rng + ?Sized,
    F: FnMut(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    spec.validate()?;
    if dim == 0 {
        return Err(LsboError::invalid("latent dimension must be at least 1"));
    }
    let starts: Vec<Vec<f64>> = (0..spec.starts)
        .map(|_| (0..dim).map(|_| rng.gen_range(spec.lower..=spec.upper)).collect())
        .collect();
    let values: Vec<f64> = eval(&starts)?.into_iter().map(sanitize).collect();
    if values.iter().all(|v| !v.is_finite()) {
        return Err(LsboError::NonFinite {
            op: "acquisition at every start".into(),
        });
    }
    let mut out: Vec<StartOutcome> = starts
        .iter()
        .zip(&values)
        .map(|(s, &v)| StartOutcome {
            start: s.clone(),
            start_value: v,
            z: s.clone(),
            value: v,
            evaluations: 1,
        })
        .collect();
    let mut step = vec![spec.initial_step * (spec.upper - spec.lower); spec.starts];

    for _ in 0..spec.steps {
        let active: Vec<usize> = (0..spec.starts).filter(|&i| step[i] >= spec.min_step).collect();
        if active.is_empty() {
            break;
        }
        let mut polls = Vec::with_capacity(active.len() * 2 * dim);
        for &i in &active {
            for k in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut p = out[i].z.clone();
                    p[k] = (p[k] + sign * step[i]).clamp(spec.lower, spec.upper);
                    polls.push(p);
                }
            }
        }
        let vals = eval(&polls)?;
        for (a, &i) in active.iter().enumerate() {
            let block = &vals[a * 2 * dim..(a + 1) * 2 * dim];
            out[i].evaluations += block.len();
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in block.iter().enumerate() {
                let v = sanitize(v);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, v)) if v > out[i].value => {
                    out[i].z = polls[a * 2 * dim + j].clone();
                    out[i].value = v;
                }
                _ => step[i] *= 0.5,
            }
        }
    }

    let mut winner = 0;
    for (i, s) in out.iter().enumerate() {
        if s.value > out[winner].value {
            winner = i;
        }
    }
    Ok((winner, out))
}

/// Maximize `lca_af` over the search box.
pub fn maximize_lca_af<C, R>(model: &C, gp: &GpSurrogate, spec: &AcquisitionSpec, rng: &mut R) -> Result<Maximum>
where
    C: LatentCycle + ?Sized,
    R: Rng + ?Sized,
{
    let dim = model.latent_dim();
    check_dim(gp, dim)?;
    let (winner, starts) = pattern_search(dim, spec, rng, |zs| {
        Ok(lca_af_batch(model, gp, spec, zs)?.into_iter().map(|(v, _)| v).collect())
    })?;
    let z = starts[winner].z.clone();
    let (value, trace) = lca_af(model, gp, spec, &z)?;
    Ok(Maximum {
        z,
        value,
        trace: Some(trace),
        starts,
    })
}

/// Maximize the base acquisition directly, without cycling.
pub fn maximize_base_af<R: Rng + ?Sized>(gp: &GpSurrogate, spec: &AcquisitionSpec, rng: &mut R) -> Result<Maximum> {
    let dim = gp.dim();
    let (winner, starts) = pattern_search(dim, spec, rng, |zs| {
        Ok(zs.iter().map(|z| base_af(gp, spec.af, z)).collect())
    })?;
    let z = starts[winner].z.clone();
    Ok(Maximum {
        value: base_af(gp, spec.af, &z),
        z,
        trace: None,
        starts,
    })
}

fn check_dim(gp: &GpSurrogate, dim: usize) -> Result<()> {
    if gp.dim() != dim {
        return Err(LsboError::Shape {
            op: "acquisition",
            detail: format!("surrogate is {}-dimensional, model latent is {dim}", gp.dim()),
        });
    }
    Ok(())
}

/// `(|AF(z) − AF(z¹)|, ‖z − z¹‖²)` for each row of `zs`.
pub fn af_gap_vs_cycle_distance<C: LatentCycle + ?Sized>(
    model: &C,
    gp: &GpSurrogate,
    af: AfKind,
    zs: &Tensor,
) -> Result<Vec<(f64, f64)>> {
    let z1 = model.cycle_batch(zs)?;
    Ok((0..zs.rows())
        .map(|r| {
            let a = base_af(gp, af, zs.row(r));
            let b = base_af(gp, af, z1.row(r));
            ((a - b).abs(), crate::linalg::squared_distance(zs.row(r), z1.row(r)))
        })
        .collect())
}
