//! Experiment configuration as read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{SyntheticSpec, TransformDistribution};
use crate::diffcore::ScheduleKind;
use crate::error::{Error, Result};
use crate::losses::ClConfig;
use crate::model::ModelConfig;
use crate::theory::TheoryConfig;
use crate::unlearn::{Method, MethodConfig, TrainConfig, EPOCHS_PER_STAGE};

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ScenarioConfig {
    Random {
        ratio: f64,
    },
    Classwise {
        class: usize,
    },
    Sequential {
        step_ratio: f64,
        stages: usize,
        #[serde(default = "default_epochs_per_stage")]
        epochs_per_stage: usize,
    },
}

fn default_epochs_per_stage() -> usize {
    EPOCHS_PER_STAGE
}

/// A named transform family or an explicit op list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransformSpec {
    Named(String),
    Custom(TransformDistribution),
}

impl TransformSpec {
    pub fn resolve(&self) -> Result<TransformDistribution> {
        match self {
            TransformSpec::Named(n) => TransformDistribution::by_name(n).map_err(config_err),
            TransformSpec::Custom(t) => {
                t.validate().map_err(config_err)?;
                Ok(t.clone())
            }
        }
    }
}

/// Partial [`TrainConfig`]; absent fields keep the recipe default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub transform_ce: Option<TransformSpec>,
    pub transform_cl: Option<TransformSpec>,
}

impl TrainOverrides {
    pub fn apply(&self, mut base: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = self.epochs {
            base.epochs = v;
        }
        if let Some(v) = self.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = self.base_lr {
            base.base_lr = v;
        }
        if let Some(v) = self.schedule {
            base.schedule = v;
        }
        if let Some(v) = self.momentum {
            base.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            base.weight_decay = v;
        }
        if let Some(t) = &self.transform_ce {
            base.transform_ce = t.resolve()?;
        }
        if let Some(t) = &self.transform_cl {
            base.transform_cl = t.resolve()?;
        }
        base.validate().map_err(config_err)?;
        Ok(base)
    }
}

/// One `[[methods]]` entry. Parameters a method does not take are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub name: String,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub l1_epochs: Option<usize>,
    pub mask_threshold: Option<f64>,
    pub layers: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub cl_module: Option<ClConfig>,
}

impl MethodEntry {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<MethodConfig> {
        let e = self;
        let allowed: &[&str] = match e.name.as_str() {
            "ft" | "retrain" => &[],
            "coun" => &["lambda", "tau"],
            "neggrad" => &["epochs", "lr"],
            "neggrad_plus" => &["beta"],
            "l1_sparse" => &["gamma", "l1_epochs"],
            "salun" => &["mask_threshold"],
            "not" => &["layers"],
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        };
        let given = [
            ("lambda", e.lambda.is_some()),
            ("tau", e.tau.is_some()),
            ("beta", e.beta.is_some()),
            ("gamma", e.gamma.is_some()),
            ("l1_epochs", e.l1_epochs.is_some()),
            ("mask_threshold", e.mask_threshold.is_some()),
            ("layers", e.layers.is_some()),
            ("epochs", e.epochs.is_some()),
            ("lr", e.lr.is_some()),
        ];
        if let Some((k, _)) = given.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            return Err(Error::Config(format!("method {} does not take {k}", e.name)));
        }
        let method = match e.name.as_str() {
            "ft" => Method::Ft,
            "retrain" => Method::Retrain,
            "coun" => {
                let d = ClConfig::default();
                Method::Coun {
                    lambda: e.lambda.unwrap_or(d.lambda),
                    tau: e.tau.unwrap_or(d.tau),
                }
            }
            "neggrad" => match Method::neggrad() {
                Method::NegGrad { epochs, lr } => Method::NegGrad {
                    epochs: e.epochs.unwrap_or(epochs),
                    lr: e.lr.unwrap_or(lr),
                },
                _ => unreachable!(),
            },
            "neggrad_plus" => match Method::neggrad_plus() {
                Method::NegGradPlus { beta } => Method::NegGradPlus {
                    beta: e.beta.unwrap_or(beta),
                },
                _ => unreachable!(),
            },
            "l1_sparse" => match Method::l1_sparse() {
                Method::L1Sparse { gamma, l1_epochs } => Method::L1Sparse {
                    gamma: e.gamma.unwrap_or(gamma),
                    l1_epochs: e.l1_epochs.unwrap_or(l1_epochs),
                },
                _ => unreachable!(),
            },
            "salun" => match Method::salun() {
                Method::Salun { mask_threshold } => Method::Salun {
                    mask_threshold: e.mask_threshold.unwrap_or(mask_threshold),
                },
                _ => unreachable!(),
            },
            "not" => Method::Not {
                layers: e.layers.clone().unwrap_or_else(|| vec![0]),
            },
            _ => unreachable!(),
        };
        let cfg = MethodConfig {
            method,
            cl_module: e.cl_module.clone(),
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output root; `MULAB_OUT` and `--out` take precedence.
    #[serde(default)]
    pub dir: Option<String>,
    /// Save final models of every cell under `ckpt/`.
    #[serde(default)]
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            checkpoints: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset label written to the `dataset` column.
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: SyntheticSpec,
    pub scenario: ScenarioConfig,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub model: ModelSection,
    /// Overrides of the Original/Retrain recipe.
    #[serde(default)]
    pub train: TrainOverrides,
    /// Overrides of the unlearning recipe.
    #[serde(default)]
    pub unlearn: TrainOverrides,
    /// Theory estimates for Retrain and CoUn cells when present.
    #[serde(default)]
    pub theory: Option<TheorySection>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "ring".into()
}

/// [`ModelConfig`] without the seed, which comes from the trial seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_repr")]
    pub repr_dim: usize,
    #[serde(default = "default_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub projection: Option<(usize, usize)>,
}

fn default_hidden() -> Vec<usize> {
    ModelConfig::default().hidden_dims
}

fn default_repr() -> usize {
    ModelConfig::default().repr_dim
}

fn default_scale() -> f64 {
    ModelConfig::default().init_scale
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
            repr_dim: default_repr(),
            init_scale: default_scale(),
            projection: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_sigma_pairs")]
    pub sigma_pairs: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_pairs() -> usize {
    TheoryConfig::default().pairs
}

fn default_sigma_pairs() -> usize {
    TheoryConfig::default().sigma_pairs
}

fn default_delta() -> f64 {
    TheoryConfig::default().delta
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            pairs: default_pairs(),
            sigma_pairs: default_sigma_pairs(),
            delta: default_delta(),
            epsilon: None,
        }
    }
}

impl TheorySection {
    pub fn for_seed(&self, seed: u64) -> TheoryConfig {
        TheoryConfig {
            pairs: self.pairs,
            sigma_pairs: self.sigma_pairs,
            delta: self.delta,
            epsilon: self.epsilon,
            seed,
        }
    }
}

impl ExperimentConfig {
    /// The 4-class ring benchmark at 10% random forgetting over 10 seeds,
    /// with theory estimates on Retrain and CoUn cells.
    pub fn benchmark() -> Self {
        Self {
            name: default_name(),
            dataset: SyntheticSpec::ring_benchmark(0),
            scenario: ScenarioConfig::Random { ratio: 0.1 },
            seeds: (0..10).collect(),
            methods: Self::benchmark_methods(),
            model: ModelSection::default(),
            train: TrainOverrides::default(),
            unlearn: TrainOverrides::default(),
            theory: Some(TheorySection::default()),
            output: OutputConfig::default(),
        }
    }

    /// FT, CoUn and the three other CL-wrappable baselines, each with and
    /// without the CL module.
    pub fn benchmark_methods() -> Vec<MethodEntry> {
        let cl = Some(ClConfig::default());
        let mut out = vec![MethodEntry::named("ft"), MethodEntry::named("coun")];
        for base in ["neggrad_plus", "l1_sparse", "not"] {
            out.push(MethodEntry::named(base));
            out.push(MethodEntry {
                cl_module: cl,
                ..MethodEntry::named(base)
            });
        }
        out
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        self.dataset.validate().map_err(config_err)?;
        for m in &self.methods {
            m.resolve()?;
        }
        self.model_config(0).validate().map_err(config_err)?;
        self.original_recipe(0)?;
        self.unlearn_recipe(0)?;
        match &self.scenario {
            ScenarioConfig::Random { ratio } if !(*ratio > 0.0 && *ratio < 1.0) => {
                Err(Error::Config(format!("forget ratio {ratio} outside (0,1)")))
            }
            ScenarioConfig::Classwise { class } if *class >= self.dataset.num_classes => {
                Err(Error::Config(format!("class {class} out of range")))
            }
            ScenarioConfig::Sequential {
                step_ratio,
                stages,
                epochs_per_stage,
            } if !(*step_ratio > 0.0 && step_ratio * *stages as f64 <= 1.0)
                || *stages == 0
                || *epochs_per_stage == 0 =>
            {
                Err(Error::Config("invalid sequential schedule".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn methods(&self) -> Result<Vec<MethodConfig>> {
        self.methods.iter().map(MethodEntry::resolve).collect()
    }

    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            hidden_dims: self.model.hidden_dims.clone(),
            repr_dim: self.model.repr_dim,
            init_scale: self.model.init_scale,
            seed,
            projection: self.model.projection,
        }
    }

    pub fn original_recipe(&self, seed: u64) -> Result<TrainConfig> {
        self.train.apply(TrainConfig::original(seed))
    }

    pub fn unlearn_recipe(&self, seed: u64) -> Result<TrainConfig> {
        self.unlearn.apply(TrainConfig::unlearning(seed))
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output section.
    ///
    /// `serde_json` maps keep keys sorted, so key order in the source file
    /// does not matter.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let value = serde_json::to_value(&c).expect("config serialises");
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}
