use lsbo_core::acquisition::AcquisitionSpec;
use lsbo_core::autodiff::Tensor;
use lsbo_core::cycles::LatentCycle;
use lsbo_core::lsbo::{LatentModel, LsboConfig, LsboRun, Method, Provenance, RetrainSummary};
use lsbo_core::rng;
use lsbo_core::tasks::{make_excluded_cluster_task, seed_instances, BlackBox, ClusterTaskSpec, ExcludedClusterTask};
use lsbo_core::vae::{train, Augmentation, TrainConfig, VaeArch, VaeModel};
use lsbo_core::Result;

fn setup() -> (ExcludedClusterTask, VaeModel, Vec<(Vec<f64>, f64)>) {
    let task = make_excluded_cluster_task(&ClusterTaskSpec {
        per_cluster: 40,
        ..ClusterTaskSpec::default()
    })
    .unwrap();
    let mut model = VaeModel::new(VaeArch::new(64, 2, vec![16]), 1.0, 0.5, &mut rng::stream(0, "vae-init", 2)).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    train(&mut model, &task.train.data, Augmentation::None, &cfg).unwrap();
    let seeds = seed_instances(&task.train, &task.oracle, 5, &mut rng::stream(0, "seed-set", 0)).unwrap();
    (task, model, seeds)
}

fn config(method: Method) -> LsboConfig {
    LsboConfig {
        method,
        iterations: 4,
        retrain_epochs: 1,
        lcl_probe: 16,
        seed: 3,
        acquisition: AcquisitionSpec {
            starts: 6,
            steps: 12,
            ..AcquisitionSpec::default()
        },
        ..LsboConfig::default()
    }
}

fn without_wall(mut records: Vec<lsbo_core::lsbo::IterationRecord>) -> Vec<lsbo_core::lsbo::IterationRecord> {
    records.iter_mut().for_each(|r| r.wall_ms = 0);
    records
}

#[test]
fn histories_satisfy_loop_invariants() {
    let (task, model, seeds) = setup();
    for method in Method::ALL {
        let mut run = LsboRun::new(config(method), model.clone(), &task.train.data, &task.oracle, &seeds).unwrap();
        let mut prev_len = run.labeled().len();
        let mut prev_best = f64::NEG_INFINITY;
        while let Some(rec) = run.step().unwrap() {
            let rec = rec.clone();
            assert!(rec.best_so_far >= prev_best, "{method}: best-so-far decreased");
            prev_best = rec.best_so_far;
            let grown = run.labeled().len() - prev_len;
            assert_eq!(grown, usize::from(rec.y_star.is_some()), "{method}");
            prev_len = run.labeled().len();
            let last = run.labeled().entries.last().unwrap();
            assert_eq!(last.provenance, Provenance::Generated);
            assert_eq!(last.x, rec.x, "{method}: stored input differs from the evaluated one");
            assert_eq!(task.oracle.evaluate(&rec.x).unwrap().to_bits(), rec.y_star.unwrap().to_bits());
            assert_eq!(rec.retrain.is_some(), method.retrains());
        }
        assert!(run.history().records.len() <= 4);
        let seeds_kept = run.labeled().entries.iter().filter(|e| e.provenance == Provenance::Seed).count();
        assert_eq!(seeds_kept, seeds.len());
    }
}

#[test]
fn replay_is_bitwise() {
    let (task, model, seeds) = setup();
    for method in [Method::VanillaRt, Method::LcaLsbo] {
        let go = || {
            let mut run = LsboRun::new(config(method), model.clone(), &task.train.data, &task.oracle, &seeds).unwrap();
            run.run_to_end().unwrap();
            let h = without_wall(run.history().records.clone());
            (h, run.into_model().to_checkpoint().to_bytes())
        };
        assert_eq!(go(), go(), "{method}");
    }
}

#[test]
fn resume_continues_identically() {
    let (task, model, seeds) = setup();
    let cfg = config(Method::LcaLsbo);
    let mut straight = LsboRun::new(cfg.clone(), model.clone(), &task.train.data, &task.oracle, &seeds).unwrap();
    straight.run_to_end().unwrap();

    let mut first = LsboRun::new(cfg.clone(), model, &task.train.data, &task.oracle, &seeds).unwrap();
    first.step().unwrap();
    first.step().unwrap();
    let state = serde_json::from_str(&serde_json::to_string(first.state()).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    first.into_model().save(&ck).unwrap();

    let mut resumed = LsboRun::resume(cfg, VaeModel::load(&ck).unwrap(), &task.train.data, &task.oracle, state).unwrap();
    resumed.run_to_end().unwrap();
    assert_eq!(
        without_wall(resumed.history().records.clone()),
        without_wall(straight.history().records.clone())
    );
    assert_eq!(resumed.labeled(), straight.labeled());
}

#[test]
fn resume_rejects_foreign_state() {
    let (task, model, seeds) = setup();
    let run = LsboRun::new(config(Method::Vanilla), model.clone(), &task.train.data, &task.oracle, &seeds).unwrap();
    let state = run.state().clone();
    assert!(LsboRun::resume(config(Method::LcaAf), model, &task.train.data, &task.oracle, state).is_err());
}

/// A model whose every latent is already a fixed point of the cycle.
#[derive(Clone)]
struct Consistent(VaeModel);

impl LatentCycle for Consistent {
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    fn cycle_batch(&self, z: &Tensor) -> Result<Tensor> {
        Ok(z.clone())
    }
}

impl LatentModel for Consistent {
    fn encode_latents(&self, x: &Tensor) -> Result<Tensor> {
        self.0.encode_latents(x)
    }

    fn decode_latents(&self, z: &Tensor) -> Result<Tensor> {
        self.0.decode_latents(z)
    }

    fn mean_lcl(&self, _z: &Tensor) -> Result<f64> {
        Ok(0.0)
    }

    fn retrain(&mut self, data: &Tensor, augmented: Option<&Tensor>, config: &TrainConfig) -> Result<RetrainSummary> {
        self.0.retrain(data, augmented, config)
    }

    fn fingerprint(&self) -> String {
        LatentModel::fingerprint(&self.0)
    }
}

#[test]
fn lca_af_on_consistent_model_is_vanilla() {
    let (task, model, seeds) = setup();
    let run = |method| {
        let mut r = LsboRun::new(config(method), Consistent(model.clone()), &task.train.data, &task.oracle, &seeds).unwrap();
        r.run_to_end().unwrap();
        r.history()
            .records
            .iter()
            .map(|rec| (rec.z.clone(), rec.x.clone(), rec.y_star, rec.af_value))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(Method::LcaAf), run(Method::Vanilla));
    assert_eq!(run(Method::LcaAfRt), run(Method::VanillaRt));
}

#[test]
fn stop_at_ends_the_run() {
    let (task, model, seeds) = setup();
    let cfg = LsboConfig {
        stop_at: Some(0.0),
        ..config(Method::Vanilla)
    };
    let mut run = LsboRun::new(cfg, model, &task.train.data, &task.oracle, &seeds).unwrap();
    run.run_to_end().unwrap();
    assert_eq!(run.history().records.len(), 1);
    assert!(run.is_finished());
}
