//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lsbo_core::acquisition::{self, AcquisitionSpec, AfKind};
use lsbo_core::autodiff::{Graph, NodeId, ParamSet, Tensor};
use lsbo_core::cycles::{self, maps, LatentCycle, StudyModel};
use lsbo_core::gp::{GpFitConfig, GpHyper, GpSurrogate};
use lsbo_core::linalg::squared_distance;
use lsbo_core::lsbo::{LsboConfig, LsboRun, Method};
use lsbo_core::nn::{Activation, Mlp};
use lsbo_core::rng;
use lsbo_core::tasks::{make_excluded_cluster_task, seed_instances, ClusterTaskSpec, ExcludedClusterTask};
use lsbo_core::vae::{kl_diag_gaussian, lcl_batch, ObjectiveGraph, train, Augmentation, ReferenceDistribution, TrainConfig, VaeArch, VaeModel};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- oracles

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between analytic and central-difference
/// gradients of `loss` over every parameter entry.
fn fd_check(params: &mut ParamSet, analytic: &[Tensor], mut loss: impl FnMut(&ParamSet) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        for i in 0..params.tensors()[k].len() {
            let orig = params.tensors()[k].data()[i];
            params.tensors_mut()[k].data_mut()[i] = orig + h;
            let up = loss(params);
            params.tensors_mut()[k].data_mut()[i] = orig - h;
            let down = loss(params);
            params.tensors_mut()[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[k].data()[i], fd));
        }
    }
    worst
}

fn invert(a: &[f64], n: usize) -> Vec<f64> {
    // Gauss-Jordan with partial pivoting
    let mut m = a.to_vec();
    let mut inv: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs())).unwrap();
        for k in 0..n {
            m.swap(c * n + k, p * n + k);
            inv.swap(c * n + k, p * n + k);
        }
        let d = m[c * n + c];
        for k in 0..n {
            m[c * n + k] /= d;
            inv[c * n + k] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r * n + c];
                for k in 0..n {
                    m[r * n + k] -= f * m[c * n + k];
                    inv[r * n + k] -= f * inv[c * n + k];
                }
            }
        }
    }
    inv
}

fn determinant(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i * n + c].abs().total_cmp(&m[j * n + c].abs())).unwrap();
        if p != c {
            for k in 0..n {
                m.swap(c * n + k, p * n + k);
            }
            det = -det;
        }
        det *= m[c * n + c];
        for r in c + 1..n {
            let f = m[r * n + c] / m[c * n + c];
            for k in c..n {
                m[r * n + k] -= f * m[c * n + k];
            }
        }
    }
    det
}

fn rank_vector(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&rank_vector(x), &rank_vector(y))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

// ------------------------------------------------------------------ setup

fn toy_task() -> ExcludedClusterTask {
    make_excluded_cluster_task(&ClusterTaskSpec::default()).unwrap()
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 64,
        learning_rate: 3e-3,
        n_star: None,
        seed: 0,
    }
}

fn toy_vae(data: &Tensor, latent_dim: usize, gamma: f64) -> VaeModel {
    let arch = VaeArch::new(data.cols(), latent_dim, vec![32]);
    let mut model = VaeModel::new(arch, 1.0, gamma, &mut rng::stream(0, "vae-init", latent_dim as u64)).unwrap();
    let aug = if gamma > 0.0 {
        Augmentation::Reference(ReferenceDistribution::pretrain(latent_dim))
    } else {
        Augmentation::None
    };
    train(&mut model, data, aug, &toy_train_config()).unwrap();
    model
}

fn prior_draws(n: usize, d: usize, std: f64, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "acceptance-draws", 0);
    let v: Vec<f64> = rng::standard_normals(&mut r, n * d).into_iter().map(|x| x * std).collect();
    Tensor::matrix(n, d, v)
}

// -------------------------------------------------------------- criteria

fn c1_autodiff() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(1, "acceptance-nets", 0);
    let mut worst: f64 = 0.0;
    for net in 0..100 {
        let depth = r.gen_range(1..=3);
        let mut sizes = vec![r.gen_range(1..=4)];
        for _ in 0..depth {
            sizes.push(r.gen_range(1..=5));
        }
        let act = if net % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let mut params = ParamSet::new();
        let mlp = Mlp::new(&mut params, "net", &sizes, act, &mut r);
        // non-zero biases so every path is exercised
        for t in params.tensors_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.3..0.3);
            }
        }
        let rows = r.gen_range(1..=4);
        let x = Tensor::matrix(rows, sizes[0], (0..rows * sizes[0]).map(|_| r.gen_range(-1.0..1.0)).collect());
        let head = net % 4;
        let build = |g: &mut Graph| -> NodeId {
            let xi = g.input("x");
            let out = mlp.build(g, xi);
            match head {
                0 => {
                    let s = g.square(out);
                    g.sum(s)
                }
                1 => {
                    let s = g.softplus(out);
                    g.mean(s)
                }
                2 => {
                    let s = g.sigmoid(out);
                    let p = g.mul(s, out);
                    let rs = g.sum_rows(p);
                    g.mean(rs)
                }
                _ => {
                    let t = g.tanh(out);
                    let e = g.exp(t);
                    let l = g.log(e);
                    let c = g.concat(l, out);
                    let s = g.scale(c, 0.7);
                    g.sum(s)
                }
            }
        };
        let mut g = Graph::new();
        let loss = build(&mut g);
        g.forward(&params, &[("x", &x)]).unwrap();
        let grads = g.backward(loss, &params).unwrap();
        let analytic = grads.as_slice().to_vec();
        let err = fd_check(&mut params, &analytic, |p| {
            let mut g = Graph::new();
            let l = build(&mut g);
            g.forward(p, &[("x", &x)]).unwrap();
            g.value(l).unwrap().data()[0]
        });
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} over 100 networks in {secs:.1}s"),
    )
}

fn c2_lcl_gradient() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut r = rng::stream(seed, "acceptance-lcl", 0);
        let arch = VaeArch::new(6, 2, vec![5]);
        let mut model = VaeModel::new(arch, 1.0, 1.0, &mut r).unwrap();
        let x = Tensor::matrix(3, 6, (0..18).map(|_| r.gen_range(0.0..1.0)).collect());
        let eps = Tensor::matrix(3, 2, rng::standard_normals(&mut r, 6));
        let zhat = Tensor::matrix(4, 2, rng::standard_normals(&mut r, 8).into_iter().map(|v| 2.0 * v).collect());

        let grad = |m: &VaeModel, gamma: f64| {
            let mut obj = ObjectiveGraph::new(m, 1.0, gamma, true);
            obj.evaluate(m, &x, &eps, Some(&zhat)).unwrap();
            obj.gradients(m).unwrap()
        };
        let g1 = grad(&model, 1.0);
        let g0 = grad(&model, 0.0);
        // gradient of the LCL term alone
        let analytic: Vec<Tensor> = g1
            .as_slice()
            .iter()
            .zip(g0.as_slice())
            .map(|(a, b)| {
                let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(p, q)| p - q).collect();
                Tensor::new(a.shape().to_vec(), d).unwrap()
            })
            .collect();
        // the oracle evaluates the LCL through the model's plain forward path
        let mut params = model.params().clone();
        let err = fd_check(&mut params, &analytic, |p| {
            model.params_mut().assign_from(p).unwrap();
            let v = lcl_batch(&model, &zhat).unwrap();
            v.iter().sum::<f64>() / v.len() as f64
        });
        worst = worst.max(err);
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} on the decode→encode LCL"))
}

fn c3_gp_oracle() -> Outcome {
    let mut r = rng::stream(3, "acceptance-gp", 0);
    let mut worst: f64 = 0.0;
    let mut min_var = f64::INFINITY;
    for trial in 0..20 {
        let n = 1 + trial % 5;
        let d = 1 + trial % 3;
        let z: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let h = GpHyper {
            signal_var: r.gen_range(0.5..2.0),
            lengthscale: r.gen_range(0.3..2.0),
            noise_var: r.gen_range(1e-3..1e-1),
        };
        let gp = GpSurrogate::with_hyper(&z, &y, h).unwrap();
        let k = |a: &[f64], b: &[f64]| h.signal_var * (-0.5 * squared_distance(a, b) / (h.lengthscale * h.lengthscale)).exp();
        let mut kmat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                kmat[i * n + j] = k(&z[i], &z[j]) + if i == j { h.noise_var + gp.jitter() } else { 0.0 };
            }
        }
        let kinv = invert(&kmat, n);
        let alpha: Vec<f64> = (0..n).map(|i| (0..n).map(|j| kinv[i * n + j] * y[j]).sum()).collect();
        let lml = -0.5 * y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>()
            - 0.5 * determinant(&kmat, n).ln()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        worst = worst.max((lml - gp.log_marginal_likelihood()).abs());
        for _ in 0..20 {
            let q: Vec<f64> = (0..d).map(|_| r.gen_range(-3.0..3.0)).collect();
            let ks: Vec<f64> = z.iter().map(|zi| k(&q, zi)).collect();
            let mean: f64 = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let quad: f64 = (0..n).map(|i| (0..n).map(|j| ks[i] * kinv[i * n + j] * ks[j]).sum::<f64>()).sum();
            let var = h.signal_var + h.noise_var - quad;
            let (m, v) = gp.predict(&q);
            worst = worst.max((m - mean).abs()).max((v - var).abs());
        }
    }
    // variance stays non-negative on a fitted surrogate
    let z: Vec<Vec<f64>> = (0..5).map(|_| (0..2).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = (0..5).map(|_| r.gen_range(0.0..1.0)).collect();
    let gp = GpSurrogate::fit(&z, &y, GpHyper::default(), &GpFitConfig::default()).unwrap();
    for _ in 0..10_000 {
        let q: Vec<f64> = (0..2).map(|_| r.gen_range(-6.0..6.0)).collect();
        min_var = min_var.min(gp.predict(&q).1);
    }
    outcome(
        worst < 1e-8 && min_var >= 0.0,
        format!("max deviation from dense inversion {worst:.2e}; min variance over 1e4 queries {min_var:.2e}"),
    )
}

fn c4_kl_quadrature() -> Outcome {
    let mut r = rng::stream(4, "acceptance-kl", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mu: f64 = r.gen_range(-3.0..3.0);
        let sigma: f64 = r.gen_range(0.1..3.0);
        // Simpson's rule on q·(log q − log p) over ±12σ
        let (a, b) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let lq = -0.5 * ((x - mu) / sigma).powi(2) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let lp = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
            lq.exp() * (lq - lp)
        };
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * h / 3.0;
        worst = worst.max((quad - kl_diag_gaussian(&[mu], &[sigma])).abs());
    }
    outcome(worst < 1e-6, format!("max abs error {worst:.2e} over 50 (μ, σ)"))
}

fn c5_ei_monte_carlo() -> Outcome {
    let mut r = rng::stream(5, "acceptance-ei", 0);
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let mean: f64 = r.gen_range(-1.0..1.0);
        let var: f64 = r.gen_range(0.01..2.0);
        let best: f64 = r.gen_range(-1.0..1.0);
        let xi: f64 = r.gen_range(0.0..0.1);
        let n = 1_000_000;
        let draws = rng::standard_normals(&mut r, n);
        let (mut s, mut s2) = (0.0, 0.0);
        for e in draws {
            let imp = (mean + var.sqrt() * e - best - xi).max(0.0);
            s += imp;
            s2 += imp * imp;
        }
        let m = s / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        let closed = acquisition::ei(mean, var, best, xi);
        worst_z = worst_z.max((closed - m).abs() / se);
    }
    outcome(worst_z < 3.0, format!("max deviation {worst_z:.2} standard errors over 20 configurations"))
}

fn c6_density_vs_cycle(vanilla: &VaeModel, trained_in: f64) -> Outcome {
    let start = Instant::now();
    let z = prior_draws(500, 2, 2.0, 6);
    let z1 = vanilla.cycle_batch(&z).unwrap();
    let mut dens = Vec::new();
    let mut dist = Vec::new();
    for i in 0..500 {
        let zi = z.row(i);
        dens.push((-0.5 * zi.iter().map(|v| v * v).sum::<f64>()).exp() / (2.0 * std::f64::consts::PI));
        dist.push(squared_distance(zi, z1.row(i)));
    }
    let rho = spearman(&dens, &dist);
    let secs = trained_in + start.elapsed().as_secs_f64();
    outcome(rho < -0.3 && secs < 300.0, format!("Spearman ρ = {rho:.3} ({secs:.1}s incl. training)"))
}

fn c7_lcl_reduction(data: &Tensor, vanilla: &VaeModel, vanilla_secs: f64) -> Outcome {
    let start = Instant::now();
    let lca = toy_vae(data, 2, 0.01);
    let z = prior_draws(1000, 2, 2.0, 7);
    let mean = |m: &VaeModel| {
        let v = lcl_batch(m, &z).unwrap();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (lv, ll) = (mean(vanilla), mean(&lca));
    let reduction = 1.0 - ll / lv;
    let secs = vanilla_secs + start.elapsed().as_secs_f64();
    outcome(
        reduction >= 0.5 && secs < 600.0,
        format!("mean LCL vanilla {lv:.4}, γ=0.01 {ll:.4}: reduction {:.1}% ({secs:.1}s)", 100.0 * reduction),
    )
}

fn c8_ucb_gap(task: &ExcludedClusterTask, vanilla: &VaeModel) -> Outcome {
    // surrogate over encoded training rows, labeled by closeness to the
    // hidden prototype (a smooth stand-in for the black box)
    let mut r = rng::stream(8, "acceptance-ucb", 0);
    let idx = rand::seq::index::sample(&mut r, task.train.len(), 100).into_vec();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| task.train.data.row(i).to_vec()).collect();
    let z = vanilla.encode_mean_batch(&Tensor::from_rows(&rows).unwrap()).unwrap().to_rows();
    let target = &task.prototypes[task.spec.excluded];
    let y: Vec<f64> = rows.iter().map(|x| -squared_distance(x, target)).collect();
    let gp = GpSurrogate::fit(&z, &y, GpHyper::default(), &GpFitConfig::default()).unwrap();
    let draws = prior_draws(500, 2, 2.0, 8);
    let pairs = acquisition::af_gap_vs_cycle_distance(vanilla, &gp, AfKind::Ucb { kappa: 2.0 }, &draws).unwrap();
    let gap: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let dist: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rho = pearson(&gap, &dist);
    outcome(rho > 0.3, format!("Pearson r(|ΔUCB|, ‖z − z¹‖²) = {rho:.3} over {} draws", pairs.len()))
}

fn c9_convergence(data: &Tensor) -> Outcome {
    let start = Instant::now();
    let dims = [2usize, 8, 16];
    let models: Vec<VaeModel> = dims.iter().map(|&d| toy_vae(data, d, 0.0)).collect();
    let study_models: Vec<StudyModel<'_>> = models
        .iter()
        .zip(dims)
        .map(|(m, d)| StudyModel {
            latent_dim: d,
            model: m,
        })
        .collect();
    let study = cycles::convergence_vs_dimension(&study_models, &[3.0], 20, 9, cycles::DEFAULT_TOLERANCE).unwrap();
    let mut medians = Vec::new();
    for &d in &dims {
        let it: Vec<f64> = study.rows.iter().filter(|r| r.dim == d).map(|r| r.iterations as f64).collect();
        medians.push(median(&it));
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let worst_converged = study
        .rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| r.final_delta)
        .fold(0.0, f64::max);
    let converged = study.rows.iter().filter(|r| r.converged).count();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        monotone && worst_converged < 1e-3 && secs < 900.0,
        format!(
            "median cycles {:?} for d = {dims:?}; {converged}/{} converged, max trailing delta {worst_converged:.1e} ({secs:.1}s)",
            medians,
            study.rows.len()
        ),
    )
}

fn c10_end_to_end(task: &ExcludedClusterTask, vanilla: &VaeModel, data: &Tensor) -> Outcome {
    let start = Instant::now();
    let lca = toy_vae(data, 2, 0.1);
    let cap = 50;
    let mut reach: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (method, model) in [(Method::LcaLsbo, &lca), (Method::VanillaRt, vanilla)] {
        for seed in 0..10u64 {
            let seeds = seed_instances(&task.train, &task.oracle, 10, &mut rng::stream(seed, "seed-set", 0)).unwrap();
            let cfg = LsboConfig {
                method,
                seed,
                iterations: cap,
                stop_at: Some(0.9),
                train: TrainConfig {
                    learning_rate: 3e-3,
                    ..TrainConfig::default()
                },
                ..LsboConfig::default()
            };
            let mut run = LsboRun::new(cfg, model.clone(), &task.train.data, &task.oracle, &seeds).unwrap();
            run.run_to_end().unwrap();
            let n = run.history().evaluations_to_reach(0.9).map_or(f64::INFINITY, |n| n as f64);
            reach.entry(method.as_str()).or_default().push(n);
        }
    }
    let lca_med = median(&reach["lca-lsbo"]);
    let van_med = median(&reach["vanilla-rt"]);
    let secs = start.elapsed().as_secs_f64();
    let show = |v: &[f64]| v.iter().map(|x| if x.is_finite() { format!("{x}") } else { "-".into() }).collect::<Vec<_>>().join(",");
    outcome(
        lca_med <= 20.0 && lca_med < van_med && secs < 2700.0,
        format!(
            "median evaluations to BB ≥ 0.9: lca-lsbo {lca_med} [{}], vanilla-rt {van_med} [{}] ({secs:.0}s)",
            show(&reach["lca-lsbo"]),
            show(&reach["vanilla-rt"])
        ),
    )
}

fn c11_reductions(task: &ExcludedClusterTask, vanilla: &VaeModel) -> Outcome {
    // lca-lsbo with γ = 0 and no augmentation replays lca-af-rt
    let small_spec = AcquisitionSpec {
        starts: 8,
        steps: 20,
        ..AcquisitionSpec::default()
    };
    let seeds = seed_instances(&task.train, &task.oracle, 10, &mut rng::stream(11, "seed-set", 0)).unwrap();
    let run = |method: Method| {
        let mut model = vanilla.clone();
        model.set_gamma(0.0).unwrap();
        let cfg = LsboConfig {
            method,
            seed: 11,
            iterations: 4,
            n_star: Some(0),
            acquisition: small_spec.clone(),
            ..LsboConfig::default()
        };
        let mut r = LsboRun::new(cfg, model, &task.train.data, &task.oracle, &seeds).unwrap();
        r.run_to_end().unwrap();
        let mut h = r.history().clone();
        h.records.iter_mut().for_each(|rec| rec.wall_ms = 0);
        (h.records, r.into_model().to_checkpoint().to_bytes())
    };
    let (ha, ma) = run(Method::LcaLsbo);
    let (hb, mb) = run(Method::LcaAfRt);
    let replay = ha == hb && ma == mb;

    // lca_af equals the base AF at fixed points
    let mut r = rng::stream(11, "acceptance-fixed", 0);
    let z: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let y: Vec<f64> = (0..6).map(|_| r.gen_range(0.0..1.0)).collect();
    let gp = GpSurrogate::fit(&z, &y, GpHyper::default(), &GpFitConfig::default()).unwrap();
    let spec = AcquisitionSpec::for_dim(2);
    let mut worst: f64 = 0.0;
    for af in [AfKind::Ucb { kappa: 2.0 }, AfKind::Ei { xi: 0.01 }] {
        let spec = AcquisitionSpec { af, ..spec.clone() };
        for _ in 0..50 {
            let p: Vec<f64> = (0..2).map(|_| r.gen_range(-6.0..6.0)).collect();
            let id = acquisition::lca_af(&maps::Identity(2), &gp, &spec, &p).unwrap().0;
            let contraction = maps::Contraction {
                center: p.clone(),
                rate: 0.5,
            };
            let ct = acquisition::lca_af(&contraction, &gp, &spec, &p).unwrap().0;
            let base = acquisition::base_af(&gp, af, &p);
            worst = worst.max((id - base).abs()).max((ct - base).abs());
        }
        // exact fixed points of the trained decoder/encoder pair
        let starts = prior_draws(10, 2, 1.0, 11).to_rows();
        for s in starts {
            let mut p = s;
            for _ in 0..20_000 {
                let q = vanilla.cycle_once(&p).unwrap();
                if q == p {
                    break;
                }
                p = q;
            }
            if vanilla.cycle_once(&p).unwrap() == p {
                let l = acquisition::lca_af(vanilla, &gp, &spec, &p).unwrap().0;
                worst = worst.max((l - acquisition::base_af(&gp, af, &p)).abs());
            }
        }
    }
    outcome(
        replay && worst <= 1e-9,
        format!("bit-identical replay: {replay}; max |lca_af − base_af| at fixed points {worst:.1e}"),
    )
}

fn read_without_wall(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let mut out = String::new();
    let mut drop_col = None;
    for line in lines.by_ref() {
        out.push_str(line);
        out.push('\n');
        if !line.starts_with('#') {
            drop_col = line.split(',').position(|h| h == "wall_ms");
            break;
        }
    }
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let kept: Vec<&str> = cells
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != drop_col)
            .map(|(_, c)| *c)
            .collect();
        out.push_str(&kept.join(","));
        out.push('\n');
    }
    out
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        r#"seeds = [0, 1]
methods = ["vanilla-rt", "lca-lsbo"]
gammas = [0.0, 0.5]
[model]
hidden = [16]
gamma = 0.5
[pretrain]
epochs = 5
[lsbo]
iterations = 3
retrain_epochs = 1
[lsbo.acquisition]
starts = 6
steps = 10
[map.spec]
mode = "grid"
lower = -4.0
upper = 4.0
n = 8
[map]
trajectories = 3
[convergence]
dims = [2, 3]
starts = 3
"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_lsbo");
    let mut failures = Vec::new();
    for out in ["a", "b"] {
        for cmd in ["pretrain", "consistency-map", "run", "convergence-study", "diversity"] {
            let st = Command::new(bin)
                .args([cmd, "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(dir.path().join(out))
                .output()
                .unwrap();
            if !st.status.success() {
                failures.push(format!("{cmd} exited {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr)));
            }
        }
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let files = csv_files(&a);
    let same_set = files == csv_files(&b);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| read_without_wall(&a.join(f)) != read_without_wall(&b.join(f)))
        .map(|f| f.display().to_string())
        .collect();
    let ckpt_same = std::fs::read(a.join("pretrain/vanilla/model.ckpt")).ok() == std::fs::read(b.join("pretrain/vanilla/model.ckpt")).ok();
    outcome(
        failures.is_empty() && same_set && differing.is_empty() && ckpt_same && !files.is_empty(),
        format!(
            "{} CSVs compared across two runs of all five subcommands; differing: {:?}; failures: {:?}",
            files.len(),
            differing,
            failures
        ),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filter.is_empty() || filter.iter().any(|f| f == &n.to_string() || f == &format!("c{n}"));
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };

    if wanted(1) {
        record(1, "autodiff vs finite differences", c1_autodiff());
    }
    if wanted(2) {
        record(2, "LCL gradient through decode→encode", c2_lcl_gradient());
    }
    if wanted(3) {
        record(3, "GP vs dense inversion", c3_gp_oracle());
    }
    if wanted(4) {
        record(4, "KL closed form vs quadrature", c4_kl_quadrature());
    }
    if wanted(5) {
        record(5, "EI closed form vs Monte Carlo", c5_ei_monte_carlo());
    }

    let needs_toy = (6..=11).any(&wanted);
    if needs_toy {
        let task = toy_task();
        let data = task.train.data.clone();
        let t = Instant::now();
        let vanilla = toy_vae(&data, 2, 0.0);
        let vanilla_secs = t.elapsed().as_secs_f64();
        if wanted(6) {
            record(6, "prior density vs cycle distance", c6_density_vs_cycle(&vanilla, vanilla_secs));
        }
        if wanted(7) {
            record(7, "LCA-VAE mean LCL reduction at γ = 0.01", c7_lcl_reduction(&data, &vanilla, vanilla_secs));
        }
        if wanted(8) {
            record(8, "UCB gap vs cycle distance", c8_ucb_gap(&task, &vanilla));
        }
        if wanted(9) {
            record(9, "cycles to convergence vs dimension", c9_convergence(&data));
        }
        if wanted(10) {
            record(10, "end-to-end sample efficiency", c10_end_to_end(&task, &vanilla, &data));
        }
        if wanted(11) {
            record(11, "reduction identities", c11_reductions(&task, &vanilla));
        }
    }
    if wanted(12) {
        record(12, "subcommand determinism", c12_determinism());
    }

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
