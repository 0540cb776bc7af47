//! The experiment configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cycles::{MapSpec, DEFAULT_TOLERANCE};
use crate::error::{LsboError, Result};
use crate::lsbo::{LsboConfig, Method};
use crate::nn::Activation;
use crate::tasks::{ClusterTaskSpec, OracleConfig};
use crate::vae::{Likelihood, TrainConfig, VaeArch, DEFAULT_BETA, DEFAULT_GAMMA};

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "LSBO_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskConfig {
    ExcludedCluster(ClusterTaskSpec),
    Idx(IdxTaskConfig),
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::ExcludedCluster(ClusterTaskSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxTaskConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Class withheld from the generative model; the black box scores it.
    pub exclude: u8,
    /// Keep only the first `limit` rows.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub likelihood: Likelihood,
    pub beta: f64,
    /// Consistency weight of the model used by `lca-lsbo`.
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 2,
            hidden: vec![256, 256],
            activation: Activation::Tanh,
            likelihood: Likelihood::Bernoulli,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, input_dim: usize, latent_dim: usize) -> VaeArch {
        VaeArch {
            activation: self.activation,
            likelihood: self.likelihood,
            ..VaeArch::new(input_dim, latent_dim, self.hidden.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub spec: MapSpec,
    /// Starts whose full cycle trajectories are written out.
    pub trajectories: usize,
    pub burn_in: usize,
    pub cycles: usize,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            spec: MapSpec::Grid {
                lower: -4.0,
                upper: 4.0,
                n: 50,
            },
            trajectories: 24,
            burn_in: 50,
            cycles: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub dims: Vec<usize>,
    /// Starts are drawn on spheres of radius `r · σ` around the origin.
    pub radii: Vec<f64>,
    pub starts: usize,
    pub tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            dims: vec![2, 8, 16],
            radii: vec![3.0],
            starts: 20,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiversityConfig {
    pub tolerance: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig { tolerance: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub out: Option<PathBuf>,
    /// Root seed for pretraining, maps and studies.
    pub seed: u64,
    /// One optimization run per (method, seed).
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Consistency weights to pretrain; 0 is the vanilla model.
    pub gammas: Vec<f64>,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub lsbo: LsboConfig,
    pub map: MapConfig,
    pub convergence: ConvergenceConfig,
    pub diversity: DiversityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: None,
            seed: 0,
            seeds: vec![0],
            methods: vec![Method::VanillaRt, Method::LcaLsbo],
            gammas: vec![0.0, DEFAULT_GAMMA],
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            lsbo: LsboConfig::default(),
            map: MapConfig::default(),
            convergence: ConvergenceConfig::default(),
            diversity: DiversityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LsboError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LsboError::Config(e.to_string()))
    }

    /// Parse `path`, resolve relative paths against its directory, and check
    /// that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LsboError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TaskConfig::Idx(idx) = &mut self.task {
            fix(&mut idx.images);
            fix(&mut idx.labels);
        }
        if let Some(out) = &mut self.out {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TaskConfig::Idx(idx) = &self.task {
            for p in [&idx.images, &idx.labels] {
                if !p.exists() {
                    return Err(LsboError::Config(format!("referenced file {} does not exist", p.display())));
                }
            }
        }
        if self.model.latent_dim == 0 {
            return Err(LsboError::Config("latent_dim must be at least 1".into()));
        }
        if self.gammas.iter().any(|g| !(*g >= 0.0)) {
            return Err(LsboError::Config("γ values must be non-negative".into()));
        }
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(LsboError::Config("need at least one seed and one method".into()));
        }
        self.pretrain.validate()?;
        self.lsbo.validate()
    }

    /// Short digest of everything that influences results (the output
    /// root and seed list excluded).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = None;
        canon.seeds.clear();
        let json = serde_json::to_string(&canon).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `--out`, then the environment, then the config file, then `./out`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_ENV) {
            return PathBuf::from(p);
        }
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Directory tag of a pretrained model.
pub fn gamma_tag(gamma: f64) -> String {
    if gamma == 0.0 {
        "vanilla".to_string()
    } else {
        format!("lca-gamma-{gamma}")
    }
}
