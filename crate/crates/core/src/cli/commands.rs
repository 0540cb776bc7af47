//! Subcommand bodies. Each returns a report the binary turns into an exit
//! code; module errors propagate as `Err`.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{gamma_tag, ExperimentConfig, TaskConfig};
use super::output::{num, opt, read_table, Provenance, Table};
use crate::autodiff::Tensor;
use crate::cycles::{self, CycleSchedule, StudyModel};
use crate::error::{LsboError, Result};
use crate::lsbo::{LsboConfig, LsboHistory, LsboRun, LsboState, Method};
use crate::rng;
use crate::stats::median;
use crate::tasks::{self, idx, train_oracle_classifier, ClassifierOracle, Dataset};
use crate::vae::{train, Augmentation, ReferenceDistribution, TrainConfig, VaeModel};

/// Resolved configuration plus everything derived from it.
pub struct Context {
    pub config: ExperimentConfig,
    pub root: PathBuf,
    pub hash: String,
}

impl Context {
    /// `seed` replaces the root seed and restricts `run` to that one seed.
    pub fn new(mut config: ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        if let Some(s) = seed {
            config.seed = s;
            config.seeds = vec![s];
        }
        config.validate()?;
        let root = config.output_root(out);
        let hash = config.hash();
        Ok(Context { config, root, hash })
    }

    pub fn provenance(&self, seed: u64) -> Provenance {
        Provenance {
            config_hash: self.hash.clone(),
            seed,
        }
    }

    pub fn pretrain_dir(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    pub fn checkpoint(&self, tag: &str) -> PathBuf {
        self.pretrain_dir().join(tag).join("model.ckpt")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.root.join("runs").join(&self.hash)
    }

    pub fn cell_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.run_dir().join(format!("{}-{seed}", method.as_str()))
    }
}

/// The generative model's training data and the black box.
pub struct BuiltTask {
    pub train: Dataset,
    pub oracle: ClassifierOracle,
}

pub fn build_task(config: &TaskConfig) -> Result<BuiltTask> {
    match config {
        TaskConfig::ExcludedCluster(spec) => {
            let t = tasks::make_excluded_cluster_task(spec)?;
            Ok(BuiltTask {
                train: t.train,
                oracle: t.oracle,
            })
        }
        TaskConfig::Idx(c) => {
            let mut full = idx::load_idx(&c.images, &c.labels, None)?;
            if let Some(limit) = c.limit {
                if limit < full.len() {
                    let rows: Vec<Vec<f64>> = (0..limit).map(|i| full.data.row(i).to_vec()).collect();
                    let labels = full.labels.as_ref().map(|l| l[..limit].to_vec());
                    full = Dataset::new(full.name.clone(), Tensor::from_rows(&rows)?, labels)?;
                }
            }
            let oracle = train_oracle_classifier(&full, c.exclude, &c.oracle)?;
            let train = full.without_class(c.exclude)?;
            Ok(BuiltTask { train, oracle })
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LsboError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| LsboError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LsboError::io(path, e))
}

fn not_found(path: &Path, hint: &str) -> LsboError {
    LsboError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, hint.to_string()))
}

fn load_checkpoint(path: &Path, what: &str) -> Result<VaeModel> {
    if !path.exists() {
        return Err(not_found(path, &format!("{what} checkpoint missing; run `lsbo pretrain` first")));
    }
    VaeModel::load(path)
}

fn pretrain_one(ctx: &Context, data: &Tensor, latent_dim: usize, gamma: f64, tag: &str) -> Result<PathBuf> {
    let cfg = &ctx.config;
    let arch = cfg.model.arch(data.cols(), latent_dim);
    let mut init = rng::stream(cfg.seed, "vae-init", latent_dim as u64);
    let mut model = VaeModel::new(arch, cfg.model.beta, gamma, &mut init)?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.pretrain.clone()
    };
    let aug = if gamma > 0.0 {
        Augmentation::Reference(ReferenceDistribution::pretrain(latent_dim))
    } else {
        Augmentation::None
    };
    let report = train(&mut model, data, aug, &train_cfg)?;
    let path = ctx.checkpoint(tag);
    write_atomic(&path, &model.to_checkpoint().to_bytes())?;
    let mut t = Table::new(&["epoch", "elbo", "kl", "recon", "lcl_mean"]);
    for e in &report.epochs {
        t.push(vec![e.epoch.to_string(), num(e.elbo), num(e.kl), num(e.recon), num(e.lcl_mean)]);
    }
    t.write(&path.with_file_name("losses.csv"), &ctx.provenance(cfg.seed))?;
    Ok(path)
}

/// One checkpoint per γ, plus one vanilla model per convergence-study
/// dimension.
pub fn pretrain(ctx: &Context) -> Result<Vec<PathBuf>> {
    let task = build_task(&ctx.config.task)?;
    let mut out = Vec::new();
    for &gamma in &ctx.config.gammas {
        let tag = gamma_tag(gamma);
        eprintln!("pretraining {tag}");
        out.push(pretrain_one(ctx, &task.train.data, ctx.config.model.latent_dim, gamma, &tag)?);
    }
    for &d in &ctx.config.convergence.dims {
        let tag = format!("dim-{d}");
        eprintln!("pretraining {tag}");
        out.push(pretrain_one(ctx, &task.train.data, d, 0.0, &tag)?);
    }
    Ok(out)
}

fn coord_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

/// Score grid and cycle trajectories for every pretrained γ.
pub fn consistency_map(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let prov = ctx.provenance(cfg.seed);
    let dir = ctx.root.join("maps");
    let schedule = CycleSchedule::new(cfg.map.burn_in, cfg.map.cycles)?;
    let mut summary = Table::new(&["tag", "gamma", "points", "mean_score", "median_score"]);
    let mut written = Vec::new();
    for &gamma in &cfg.gammas {
        let tag = gamma_tag(gamma);
        let model = load_checkpoint(&ctx.checkpoint(&tag), &tag)?;
        let d = model.latent_dim();
        let points = cycles::consistency_map(&model, &cfg.map.spec)?;

        let mut header = coord_header("z", d);
        header.push("score".into());
        let mut t = Table::new(&header);
        for p in &points {
            let mut row: Vec<String> = p.coords.iter().map(|&v| num(v)).collect();
            row.push(num(p.score));
            t.push(row);
        }
        let path = dir.join(format!("{tag}.csv"));
        t.write(&path, &prov)?;
        written.push(path);

        let n = cfg.map.trajectories.min(points.len());
        let starts: Vec<Vec<f64>> = (0..n).map(|i| points[i * points.len() / n].coords.clone()).collect();
        let traces = cycles::successive_cycles_batch(&model, &starts, schedule, cfg.convergence.tolerance)?;
        let mut header = vec!["trajectory".to_string(), "step".to_string()];
        header.extend(coord_header("z", d));
        header.push("converged".into());
        let mut t = Table::new(&header);
        for (k, tr) in traces.iter().enumerate() {
            let pts = std::iter::once(&tr.start).chain(tr.points.iter());
            for (step, p) in pts.enumerate() {
                let mut row = vec![k.to_string(), step.to_string()];
                row.extend(p.iter().map(|&v| num(v)));
                row.push(tr.converged.to_string());
                t.push(row);
            }
        }
        let path = dir.join(format!("{tag}-trajectories.csv"));
        t.write(&path, &prov)?;
        written.push(path);

        let scores: Vec<f64> = points.iter().map(|p| p.score).collect();
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        summary.push(vec![
            tag,
            num(gamma),
            scores.len().to_string(),
            num(mean),
            opt(median(&scores)),
        ]);
    }
    let path = dir.join("summary.csv");
    summary.write(&path, &prov)?;
    written.push(path);
    Ok(written)
}

/// Pretrained model a method starts from.
pub fn model_tag(method: Method, gamma: f64) -> String {
    match method {
        Method::LcaLsbo => gamma_tag(gamma),
        _ => gamma_tag(0.0),
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub histories: Vec<LsboHistory>,
    pub failures: Vec<(Method, u64, String)>,
    /// Cells stopped early by `stop_after`.
    pub interrupted: usize,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures.is_empty())
    }
}

pub const HISTORY_COLUMNS: [&str; 8] = [
    "iteration",
    "y_star",
    "best_so_far",
    "af_value",
    "converged",
    "lcl_at_muref",
    "retrain_elbo",
    "wall_ms",
];

fn write_history(path: &Path, h: &LsboHistory, prov: &Provenance) -> Result<()> {
    let mut t = Table::new(&HISTORY_COLUMNS);
    for r in &h.records {
        t.push(vec![
            r.iteration.to_string(),
            opt(r.y_star),
            num(r.best_so_far),
            num(r.af_value),
            r.converged.to_string(),
            num(r.lcl_at_muref),
            opt(r.retrain.map(|s| s.elbo)),
            r.wall_ms.to_string(),
        ]);
    }
    t.write(path, prov)
}

fn write_generated(path: &Path, h: &LsboHistory, prov: &Provenance) -> Result<()> {
    let Some(first) = h.records.first() else {
        return Table::new(&["iteration", "y_star"]).write(path, prov);
    };
    let mut header = vec!["iteration".to_string(), "y_star".to_string()];
    header.extend(coord_header("z", first.z.len()));
    header.extend(coord_header("mu", first.mu_ref.len()));
    header.extend(coord_header("x", first.x.len()));
    let mut t = Table::new(&header);
    for r in &h.records {
        let mut row = vec![r.iteration.to_string(), opt(r.y_star)];
        row.extend(r.z.iter().chain(&r.mu_ref).chain(&r.x).map(|&v| num(v)));
        t.push(row);
    }
    t.write(path, prov)
}

fn state_path(dir: &Path) -> PathBuf {
    dir.join("state.json")
}

fn iteration_checkpoint(dir: &Path, j: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("iter-{j:04}.ckpt"))
}

/// Run or resume one (method, seed) cell, performing at most `stop_after`
/// new iterations.
pub fn run_cell(
    ctx: &Context,
    task: &BuiltTask,
    method: Method,
    seed: u64,
    stop_after: Option<usize>,
) -> Result<(LsboHistory, bool)> {
    let dir = ctx.cell_dir(method, seed);
    let prov = ctx.provenance(seed);
    let lsbo = LsboConfig {
        method,
        seed,
        ..ctx.config.lsbo.clone()
    };
    let sp = state_path(&dir);
    let mut run = if sp.exists() {
        let text = fs::read_to_string(&sp).map_err(|e| LsboError::io(&sp, e))?;
        let state: LsboState = serde_json::from_str(&text).map_err(|e| LsboError::Format {
            path: sp.clone(),
            detail: e.to_string(),
        })?;
        let done = state.history.records.len();
        let model = if done == 0 {
            load_checkpoint(&ctx.checkpoint(&model_tag(method, ctx.config.model.gamma)), method.as_str())?
        } else {
            load_checkpoint(&iteration_checkpoint(&dir, done), "iteration")?
        };
        LsboRun::resume(lsbo, model, &task.train.data, &task.oracle, state)?
    } else {
        let model = load_checkpoint(&ctx.checkpoint(&model_tag(method, ctx.config.model.gamma)), method.as_str())?;
        let mut r = rng::stream(seed, "seed-set", 0);
        let seeds = tasks::seed_instances(&task.train, &task.oracle, lsbo.seed_instances, &mut r)?;
        LsboRun::new(lsbo, model, &task.train.data, &task.oracle, &seeds)?
    };

    let mut steps = 0;
    let mut interrupted = false;
    loop {
        if stop_after.is_some_and(|n| steps >= n) && !run.is_finished() {
            interrupted = true;
            break;
        }
        let j = match run.step()? {
            Some(rec) => rec.iteration,
            None => break,
        };
        steps += 1;
        write_atomic(&iteration_checkpoint(&dir, j), &run.model().to_checkpoint().to_bytes())?;
        if j > 1 {
            let old = iteration_checkpoint(&dir, j - 1);
            let _ = fs::remove_file(old);
        }
        save_state(&sp, run.state())?;
    }
    save_state(&sp, run.state())?;
    let history = run.history().clone();
    write_history(&dir.join("history.csv"), &history, &prov)?;
    write_generated(&dir.join("generated.csv"), &history, &prov)?;
    Ok((history, interrupted))
}

fn save_state(path: &Path, state: &LsboState) -> Result<()> {
    let text = serde_json::to_string_pretty(state).map_err(|e| LsboError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

/// Median best-so-far per iteration over seeds, carrying each history's
/// last value forward past its end.
pub fn median_best_so_far(histories: &[&LsboHistory]) -> Vec<f64> {
    let len = histories.iter().map(|h| h.records.len()).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = histories
                .iter()
                .filter_map(|h| h.records.get(i).or(h.records.last()).map(|r| r.best_so_far))
                .collect();
            median(&vals).unwrap_or(f64::NAN)
        })
        .collect()
}

/// Every (method, seed) cell, then the per-method summary. A failing cell
/// is recorded and the rest still run.
pub fn run(ctx: &Context, stop_after: Option<usize>) -> Result<RunReport> {
    let task = build_task(&ctx.config.task)?;
    let mut report = RunReport::default();
    for &method in &ctx.config.methods {
        for &seed in &ctx.config.seeds {
            eprintln!("run {}-{seed}", method.as_str());
            match run_cell(ctx, &task, method, seed, stop_after) {
                Ok((h, interrupted)) => {
                    report.interrupted += usize::from(interrupted);
                    report.histories.push(h);
                }
                Err(e) => {
                    eprintln!("cell {}-{seed} failed: {e}", method.as_str());
                    report.failures.push((method, seed, e.to_string()));
                }
            }
        }
    }
    let prov = ctx.provenance(ctx.config.seed);
    let mut t = Table::new(&["method", "iteration", "median_best_so_far", "seeds"]);
    for &method in &ctx.config.methods {
        let hs: Vec<&LsboHistory> = report.histories.iter().filter(|h| h.method == method).collect();
        for (i, m) in median_best_so_far(&hs).into_iter().enumerate() {
            t.push(vec![method.as_str().into(), (i + 1).to_string(), num(m), hs.len().to_string()]);
        }
    }
    t.write(&ctx.run_dir().join("summary.csv"), &prov)?;
    let mut f = Table::new(&["method", "seed", "error"]);
    for (m, s, e) in &report.failures {
        f.push(vec![m.as_str().into(), s.to_string(), e.clone()]);
    }
    f.write(&ctx.run_dir().join("failures.csv"), &prov)?;
    Ok(report)
}

/// Cycles-to-convergence against latent dimension.
pub fn convergence_study(ctx: &Context) -> Result<cycles::ConvergenceStudy> {
    let cfg = &ctx.config;
    let models = cfg
        .convergence
        .dims
        .iter()
        .map(|&d| {
            let m = load_checkpoint(&ctx.checkpoint(&format!("dim-{d}")), &format!("dim-{d}"))?;
            if m.latent_dim() != d {
                return Err(LsboError::invalid(format!("dim-{d} checkpoint has latent dim {}", m.latent_dim())));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let study_models: Vec<StudyModel<'_>> = models
        .iter()
        .map(|m| StudyModel {
            latent_dim: m.latent_dim(),
            model: m,
        })
        .collect();
    let study = cycles::convergence_vs_dimension(
        &study_models,
        &cfg.convergence.radii,
        cfg.convergence.starts,
        cfg.seed,
        cfg.convergence.tolerance,
    )?;
    let prov = ctx.provenance(cfg.seed);
    let dir = ctx.root.join("convergence");
    let mut t = Table::new(&["dim", "radius", "start", "iterations", "final_delta", "converged"]);
    for r in &study.rows {
        t.push(vec![
            r.dim.to_string(),
            num(r.radius),
            r.seed.to_string(),
            r.iterations.to_string(),
            num(r.final_delta),
            r.converged.to_string(),
        ]);
    }
    t.write(&dir.join("convergence.csv"), &prov)?;
    let mut s = Table::new(&["dim", "radius", "median_iterations", "median_final_delta", "converged", "starts"]);
    for r in &study.summary {
        s.push(vec![
            r.dim.to_string(),
            num(r.radius),
            num(r.median_iterations),
            num(r.median_final_delta),
            r.converged.to_string(),
            r.starts.to_string(),
        ]);
    }
    s.write(&dir.join("summary.csv"), &prov)?;
    Ok(study)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityRow {
    pub method: Method,
    /// `None` for the pooled row.
    pub seed: Option<u64>,
    pub generated: usize,
    pub diversity: f64,
}

/// Fraction of distinct generated instances per finished cell and pooled
/// per method.
pub fn diversity(ctx: &Context) -> Result<Vec<DiversityRow>> {
    let cfg = &ctx.config;
    let tol = cfg.diversity.tolerance;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let mut pooled = Vec::new();
        for &seed in &cfg.seeds {
            let path = ctx.cell_dir(method, seed).join("generated.csv");
            if !path.exists() {
                return Err(not_found(&path, "cell output missing; run `lsbo run` first"));
            }
            let (header, table) = read_table(&path)?;
            let xcols: Vec<usize> = header
                .iter()
                .enumerate()
                .filter(|(_, h)| h.starts_with('x'))
                .map(|(i, _)| i)
                .collect();
            let xs = table
                .iter()
                .map(|r| {
                    xcols
                        .iter()
                        .map(|&i| {
                            r[i].parse::<f64>().map_err(|e| LsboError::Format {
                                path: path.clone(),
                                detail: e.to_string(),
                            })
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            if xs.is_empty() {
                continue;
            }
            rows.push(DiversityRow {
                method,
                seed: Some(seed),
                generated: xs.len(),
                diversity: tasks::diversity(&xs, tol)?,
            });
            pooled.extend(xs);
        }
        if !pooled.is_empty() {
            rows.push(DiversityRow {
                method,
                seed: None,
                generated: pooled.len(),
                diversity: tasks::diversity(&pooled, tol)?,
            });
        }
    }
    let mut t = Table::new(&["method", "seed", "generated", "diversity"]);
    for r in &rows {
        t.push(vec![
            r.method.as_str().into(),
            r.seed.map_or_else(|| "all".to_string(), |s| s.to_string()),
            r.generated.to_string(),
            num(r.diversity),
        ]);
    }
    t.write(&ctx.run_dir().join("diversity.csv"), &ctx.provenance(cfg.seed))?;
    Ok(rows)
}

