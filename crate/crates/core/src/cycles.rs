//! The cycle operator `z ↦ μ_φ(f_dec(z))`, successive cycling with a
//! burn-in threshold, and the consistency analyses built on top of it.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{LsboError, Result};
use crate::linalg::squared_distance;
use crate::rng;
use crate::stats::median;
use crate::vae::VaeModel;

/// Squared-delta threshold below which successive cycles count as converged.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Anything with a deterministic latent round trip.
pub trait LatentCycle {
    fn latent_dim(&self) -> usize;

    /// One cycle applied to every row of `z`. Row results must not depend
    /// on the other rows in the batch.
    fn cycle_batch(&self, z: &Tensor) -> Result<Tensor>;

    fn cycle_once(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim() {
            return Err(LsboError::Shape {
                op: "cycle_once",
                detail: format!("latent has {} entries, expected {}", z.len(), self.latent_dim()),
            });
        }
        Ok(self.cycle_batch(&Tensor::row_vector(z))?.into_data())
    }
}

impl LatentCycle for VaeModel {
    fn latent_dim(&self) -> usize {
        VaeModel::latent_dim(self)
    }

    fn cycle_batch(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != VaeModel::latent_dim(self) {
            return Err(LsboError::Shape {
                op: "cycle",
                detail: format!("latent has {} columns, expected {}", z.cols(), VaeModel::latent_dim(self)),
            });
        }
        self.encode_mean_batch(&self.decode_batch(z)?)
    }
}

/// Burn-in threshold `B` and cycle count `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub burn_in: usize,
    pub cycles: usize,
}

impl CycleSchedule {
    pub fn new(burn_in: usize, cycles: usize) -> Result<Self> {
        if burn_in == 0 || burn_in > cycles {
            return Err(LsboError::invalid(format!(
                "need 1 ≤ B ≤ M, got B = {burn_in}, M = {cycles}"
            )));
        }
        Ok(CycleSchedule { burn_in, cycles })
    }

    /// Longer schedules for wider latent spaces, which converge more slowly.
    pub fn for_dim(latent_dim: usize) -> Self {
        if latent_dim <= 16 {
            CycleSchedule {
                burn_in: 50,
                cycles: 100,
            }
        } else {
            CycleSchedule {
                burn_in: 80,
                cycles: 120,
            }
        }
    }

    /// Number of trailing deltas that must all be below tolerance:
    /// `max(5, M − B + 1)`, capped at `M`.
    pub fn window(&self) -> usize {
        (self.cycles - self.burn_in + 1).max(5).min(self.cycles)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub start: Vec<f64>,
    /// `z¹ … z^M`.
    pub points: Vec<Vec<f64>>,
    pub schedule: CycleSchedule,
    /// `‖z^j − z^{j−1}‖²` with `z⁰` the start.
    pub deltas: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
}

impl CycleTrace {
    fn from_points(start: Vec<f64>, points: Vec<Vec<f64>>, schedule: CycleSchedule, tolerance: f64) -> Self {
        let mut deltas = Vec::with_capacity(points.len());
        let mut prev = &start;
        for p in &points {
            deltas.push(squared_distance(prev, p));
            prev = p;
        }
        let window = schedule.window();
        let converged = deltas[deltas.len() - window..].iter().all(|&d| d < tolerance);
        CycleTrace {
            start,
            points,
            schedule,
            deltas,
            converged,
            tolerance,
        }
    }

    /// `{z^j : j ≥ B}`.
    pub fn retained(&self) -> &[Vec<f64>] {
        &self.points[self.schedule.burn_in - 1..]
    }

    pub fn final_point(&self) -> &[f64] {
        self.points.last().expect("M ≥ 1")
    }

    pub fn final_delta(&self) -> f64 {
        *self.deltas.last().expect("M ≥ 1")
    }

    pub fn max_window_delta(&self) -> f64 {
        let w = self.schedule.window();
        self.deltas[self.deltas.len() - w..]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// The consistent point: the last iterate when converged, otherwise the
    /// mean of the retained set.
    pub fn consistent_point(&self) -> Vec<f64> {
        if self.converged {
            return self.final_point().to_vec();
        }
        let retained = self.retained();
        let d = self.start.len();
        let mut mean = vec![0.0; d];
        for p in retained {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        let n = retained.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Cycles until the deltas stay below tolerance for good: the index of
    /// the last delta at or above tolerance, or 0 when there is none.
    pub fn iterations_to_converge(&self) -> usize {
        self.deltas
            .iter()
            .rposition(|&d| d >= self.tolerance)
            .map_or(0, |j| j + 1)
    }
}

pub fn cycle_once<C: LatentCycle + ?Sized>(model: &C, z: &[f64]) -> Result<Vec<f64>> {
    model.cycle_once(z)
}

/// Apply `M` cycles to one start, keeping every iterate.
pub fn successive_cycles<C: LatentCycle + ?Sized>(
    model: &C,
    z: &[f64],
    schedule: CycleSchedule,
    tolerance: f64,
) -> Result<CycleTrace> {
    let mut traces = successive_cycles_batch(model, &[z.to_vec()], schedule, tolerance)?;
    Ok(traces.pop().expect("one start"))
}

/// [`successive_cycles`] for many starts at once; every trace equals the one
/// computed for its start alone.
pub fn successive_cycles_batch<C: LatentCycle + ?Sized>(
    model: &C,
    starts: &[Vec<f64>],
    schedule: CycleSchedule,
    tolerance: f64,
) -> Result<Vec<CycleTrace>> {
    CycleSchedule::new(schedule.burn_in, schedule.cycles)?;
    let d = model.latent_dim();
    if let Some(bad) = starts.iter().find(|s| s.len() != d) {
        return Err(LsboError::Shape {
            op: "successive_cycles",
            detail: format!("start has {} entries, expected {d}", bad.len()),
        });
    }
    if starts.is_empty() {
        return Ok(Vec::new());
    }
    let mut current = Tensor::from_rows(starts)?;
    let mut points: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(schedule.cycles); starts.len()];
    for _ in 0..schedule.cycles {
        current = model.cycle_batch(&current)?;
        if !current.is_finite() {
            return Err(LsboError::NonFinite { op: "cycle".into() });
        }
        for (i, pts) in points.iter_mut().enumerate() {
            pts.push(current.row(i).to_vec());
        }
    }
    Ok(starts
        .iter()
        .zip(points)
        .map(|(s, p)| CycleTrace::from_points(s.clone(), p, schedule, tolerance))
        .collect())
}

/// `‖z − z¹‖²`, the one-cycle discrepancy.
pub fn consistency_score<C: LatentCycle + ?Sized>(model: &C, z: &[f64]) -> Result<f64> {
    let z1 = model.cycle_once(z)?;
    Ok(squared_distance(z, &z1))
}

pub fn consistency_scores<C: LatentCycle + ?Sized>(model: &C, zs: &Tensor) -> Result<Vec<f64>> {
    let z1 = model.cycle_batch(zs)?;
    Ok((0..zs.rows())
        .map(|r| squared_distance(zs.row(r), z1.row(r)))
        .collect())
}

/// Where a consistency field is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum MapSpec {
    /// Regular `n × n` grid over `[lower, upper]²`; 2-D latents only.
    Grid { lower: f64, upper: f64, n: usize },
    /// `n` draws from `N(0, std² I)`; any latent dimension.
    Samples { n: usize, std: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapPoint {
    pub coords: Vec<f64>,
    pub score: f64,
}

fn linspace(lower: f64, upper: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lower];
    }
    (0..n)
        .map(|i| lower + (upper - lower) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn map_points(latent_dim: usize, spec: &MapSpec) -> Result<Vec<Vec<f64>>> {
    match *spec {
        MapSpec::Grid { lower, upper, n } => {
            if latent_dim != 2 {
                return Err(LsboError::invalid(format!(
                    "grid mode needs a 2-D latent space, model has {latent_dim}"
                )));
            }
            if n == 0 || !(upper >= lower) {
                return Err(LsboError::invalid("grid needs n ≥ 1 and lower ≤ upper"));
            }
            let axis = linspace(lower, upper, n);
            Ok(axis
                .iter()
                .flat_map(|&a| axis.iter().map(move |&b| vec![a, b]))
                .collect())
        }
        MapSpec::Samples { n, std, seed } => {
            let mut r = rng::stream(seed, "consistency-map", 0);
            Ok((0..n)
                .map(|_| {
                    rng::standard_normals(&mut r, latent_dim)
                        .into_iter()
                        .map(|v| v * std)
                        .collect()
                })
                .collect())
        }
    }
}

/// Consistency score at every point of the grid or sample set.
pub fn consistency_map<C: LatentCycle + ?Sized>(model: &C, spec: &MapSpec) -> Result<Vec<MapPoint>> {
    let pts = map_points(model.latent_dim(), spec)?;
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    let scores = consistency_scores(model, &Tensor::from_rows(&pts)?)?;
    Ok(pts
        .into_iter()
        .zip(scores)
        .map(|(coords, score)| MapPoint { coords, score })
        .collect())
}

/// One model of a convergence study.
pub struct StudyModel<'a> {
    pub latent_dim: usize,
    pub model: &'a dyn LatentCycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dim: usize,
    pub radius: f64,
    pub seed: u64,
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub dim: usize,
    pub radius: f64,
    pub median_iterations: f64,
    pub median_final_delta: f64,
    pub converged: usize,
    pub starts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub summary: Vec<ConvergenceSummary>,
}

/// Cycle `n_starts` seeded starts at each radius (in prior standard
/// deviations) for every model and report iterations to convergence.
pub fn convergence_vs_dimension(
    models: &[StudyModel<'_>],
    radii: &[f64],
    n_starts: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ConvergenceStudy> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for m in models {
        if m.model.latent_dim() != m.latent_dim {
            return Err(LsboError::invalid("study model dimension mismatch"));
        }
        let schedule = CycleSchedule::for_dim(m.latent_dim);
        for &radius in radii {
            let starts: Vec<Vec<f64>> = (0..n_starts)
                .map(|i| {
                    let mut r = rng::stream(seed, &format!("convergence-start-{}", m.latent_dim), i as u64);
                    rng::unit_direction(&mut r, m.latent_dim)
                        .into_iter()
                        .map(|v| v * radius)
                        .collect()
                })
                .collect();
            let traces = successive_cycles_batch(m.model, &starts, schedule, tolerance)?;
            let mut iters = Vec::new();
            let mut finals = Vec::new();
            let mut converged = 0;
            for (i, t) in traces.iter().enumerate() {
                rows.push(ConvergenceRow {
                    dim: m.latent_dim,
                    radius,
                    seed: i as u64,
                    iterations: t.iterations_to_converge(),
                    final_delta: t.final_delta(),
                    converged: t.converged,
                });
                iters.push(t.iterations_to_converge() as f64);
                finals.push(t.final_delta());
                converged += usize::from(t.converged);
            }
            summary.push(ConvergenceSummary {
                dim: m.latent_dim,
                radius,
                median_iterations: median(&iters).unwrap_or(0.0),
                median_final_delta: median(&finals).unwrap_or(0.0),
                converged,
                starts: n_starts,
            });
        }
    }
    Ok(ConvergenceStudy { rows, summary })
}

/// Closed-form cycle maps with known fixed points.
pub mod maps {
    use super::*;

    /// Every point is a fixed point.
    pub struct Identity(pub usize);

    impl LatentCycle for Identity {
        fn latent_dim(&self) -> usize {
            self.0
        }

        fn cycle_batch(&self, z: &Tensor) -> Result<Tensor> {
            Ok(z.clone())
        }
    }

    /// `z ↦ c + rate·(z − c)`; `c` is an exact fixed point.
    pub struct Contraction {
        pub center: Vec<f64>,
        pub rate: f64,
    }

    impl LatentCycle for Contraction {
        fn latent_dim(&self) -> usize {
            self.center.len()
        }

        fn cycle_batch(&self, z: &Tensor) -> Result<Tensor> {
            let mut out = z.clone();
            for r in 0..z.rows() {
                for (v, c) in out.row_mut(r).iter_mut().zip(&self.center) {
                    *v = c + self.rate * (*v - c);
                }
            }
            Ok(out)
        }
    }

    /// `z ↦ −z`: every non-zero start oscillates forever.
    pub struct Flip(pub usize);

    impl LatentCycle for Flip {
        fn latent_dim(&self) -> usize {
            self.0
        }

        fn cycle_batch(&self, z: &Tensor) -> Result<Tensor> {
            Ok(z.map(|v| -v))
        }
    }

    /// Ignores its input and maps everything to `c`.
    pub struct Constant(pub Vec<f64>);

    impl LatentCycle for Constant {
        fn latent_dim(&self) -> usize {
            self.0.len()
        }

        fn cycle_batch(&self, z: &Tensor) -> Result<Tensor> {
            let rows = vec![self.0.clone(); z.rows()];
            Tensor::from_rows(&rows)
        }
    }
}
