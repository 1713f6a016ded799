//! Original training, Retrain, CoUn and the baseline unlearning methods.
//!
//! Every method runs through one training loop ([`engine`]) that draws
//! batches through an instrumented loader, so each run carries a log of the
//! training indices it read.

mod engine;
pub mod flops;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datagen::{is_nested, Dataset, Split, TransformDistribution};
use crate::diffcore::ScheduleKind;
use crate::error::{invalid, Error, Result};
use crate::losses::ClConfig;
use crate::model::{init_model, Model, ModelConfig};
use crate::rng;

pub use engine::{saliency_mask, salun_relabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: ScheduleKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub transform_ce: TransformDistribution,
    pub transform_cl: TransformDistribution,
    pub seed: u64,
}

impl TrainConfig {
    /// Recipe for the Original model and for Retrain.
    pub fn original(seed: u64) -> Self {
        Self {
            epochs: 60,
            batch_size: 64,
            base_lr: 0.1,
            schedule: ScheduleKind::Multistep,
            momentum: 0.9,
            weight_decay: 5e-4,
            transform_ce: TransformDistribution::simple(),
            transform_cl: TransformDistribution::simple(),
            seed,
        }
    }

    /// Recipe shared by the approximate unlearning methods.
    pub fn unlearning(seed: u64) -> Self {
        Self {
            epochs: 50,
            base_lr: 0.05,
            schedule: ScheduleKind::Cosine,
            ..Self::original(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(self.base_lr >= 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("lr, momentum and weight decay must be >= 0"));
        }
        self.transform_ce.validate()?;
        self.transform_cl.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name", deny_unknown_fields)]
pub enum Method {
    Retrain,
    Ft,
    /// Gradient ascent on the forget set with its own short schedule.
    #[serde(rename = "neggrad")]
    NegGrad {
        epochs: usize,
        lr: f64,
    },
    #[serde(rename = "neggrad_plus")]
    NegGradPlus {
        beta: f64,
    },
    L1Sparse {
        gamma: f64,
        l1_epochs: usize,
    },
    Salun {
        mask_threshold: f64,
    },
    Not {
        layers: Vec<usize>,
    },
    Coun {
        lambda: f64,
        tau: f64,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Ft => "ft",
            Method::NegGrad { .. } => "neggrad",
            Method::NegGradPlus { .. } => "neggrad_plus",
            Method::L1Sparse { .. } => "l1_sparse",
            Method::Salun { .. } => "salun",
            Method::Not { .. } => "not",
            Method::Coun { .. } => "coun",
        }
    }

    pub fn neggrad() -> Self {
        Method::NegGrad { epochs: 5, lr: 0.01 }
    }

    pub fn neggrad_plus() -> Self {
        Method::NegGradPlus { beta: 0.99 }
    }

    pub fn l1_sparse() -> Self {
        Method::L1Sparse {
            gamma: 1e-3,
            l1_epochs: 4,
        }
    }

    pub fn salun() -> Self {
        Method::Salun { mask_threshold: 0.5 }
    }

    pub fn not() -> Self {
        Method::Not { layers: vec![0] }
    }

    pub fn coun() -> Self {
        let cl = ClConfig::default();
        Method::Coun {
            lambda: cl.lambda,
            tau: cl.tau,
        }
    }
}

/// A method plus an optional contrastive add-on applied to retain batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default)]
    pub cl_module: Option<ClConfig>,
}

impl From<Method> for MethodConfig {
    fn from(method: Method) -> Self {
        Self {
            method,
            cl_module: None,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.method {
            Method::NegGrad { epochs, lr } => {
                if *epochs == 0 || !(*lr >= 0.0) {
                    return Err(invalid("neggrad needs epochs >= 1 and lr >= 0"));
                }
            }
            // β = 1 is accepted: the forget term vanishes and the method is FT.
            Method::NegGradPlus { beta } => {
                if !(*beta > 0.0 && *beta <= 1.0) {
                    return Err(invalid(format!("beta {beta} outside (0,1]")));
                }
            }
            Method::L1Sparse { gamma, .. } => {
                if !(*gamma >= 0.0) {
                    return Err(invalid("gamma must be >= 0"));
                }
            }
            Method::Salun { mask_threshold } => {
                if !(*mask_threshold > 0.0 && *mask_threshold <= 1.0) {
                    return Err(invalid(format!("mask threshold {mask_threshold} outside (0,1]")));
                }
            }
            Method::Coun { lambda, tau } => ClConfig {
                lambda: *lambda,
                tau: *tau,
            }
            .validate()?,
            Method::Retrain | Method::Ft | Method::Not { .. } => {}
        }
        if let Some(cl) = &self.cl_module {
            cl.validate()?;
            if !matches!(
                self.method,
                Method::Ft | Method::NegGradPlus { .. } | Method::L1Sparse { .. } | Method::Not { .. }
            ) {
                return Err(invalid(format!("the CL module cannot wrap {}", self.method.name())));
            }
        }
        Ok(())
    }

    /// Label for the `cl_module` results column.
    pub fn cl_label(&self) -> String {
        match &self.cl_module {
            None => "none".into(),
            Some(c) => format!("lambda={};tau={}", c.lambda, c.tau),
        }
    }

    /// Contrastive term the training loop applies, from either CoUn or the add-on.
    fn contrastive(&self) -> Option<ClConfig> {
        match (&self.method, &self.cl_module) {
            (Method::Coun { lambda, tau }, _) => Some(ClConfig {
                lambda: *lambda,
                tau: *tau,
            }),
            (_, Some(c)) => Some(c.clone()),
            _ => None,
        }
        .filter(|c| c.lambda != 0.0)
    }
}

/// Adds `λ·L_CL` over retain batches to `base`.
pub fn with_cl_module(base: MethodConfig, lambda: f64, tau: f64) -> Result<MethodConfig> {
    let cfg = MethodConfig {
        cl_module: Some(ClConfig { lambda, tau }),
        ..base
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Sorted set of training indices a run read.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccessLog {
    pub reads: BTreeSet<usize>,
}

impl AccessLog {
    pub fn record(&mut self, idx: &[usize]) {
        self.reads.extend(idx.iter().copied());
    }

    /// How many of `indices` were read.
    pub fn reads_among(&self, indices: &[usize]) -> usize {
        indices.iter().filter(|i| self.reads.contains(i)).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// One execution of a method.
#[derive(Clone, Debug)]
pub struct UnlearnRun {
    pub method: MethodConfig,
    pub seed: u64,
    pub initial_model: Model,
    pub final_model: Model,
    pub split: Split,
    /// Dense-layer FLOPs (forward and backward) spent producing `final_model`.
    pub flops: u128,
    /// Loss-term FLOPs, tallied apart from `flops`.
    pub loss_flops: u128,
    pub per_epoch_log: Vec<EpochLog>,
    pub access_log: AccessLog,
}

/// JSON manifest of one run: configs, cost, losses and checkpoint paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: MethodConfig,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub scenario: String,
    pub forget_ratio: f64,
    pub retain_size: usize,
    pub forget_size: usize,
    pub flops: u128,
    pub loss_flops: u128,
    pub per_epoch_log: Vec<EpochLog>,
    pub forget_reads: usize,
    pub checkpoints: Vec<String>,
}

impl UnlearnRun {
    pub fn record(&self, cfg: &TrainConfig, checkpoints: Vec<String>) -> RunRecord {
        RunRecord {
            method: self.method.clone(),
            train_config: cfg.clone(),
            seed: self.seed,
            scenario: self.split.scenario.label(),
            forget_ratio: self.split.forget_ratio,
            retain_size: self.split.retain_idx.len(),
            forget_size: self.split.forget_idx.len(),
            flops: self.flops,
            loss_flops: self.loss_flops,
            per_epoch_log: self.per_epoch_log.clone(),
            forget_reads: self.access_log.reads_among(&self.split.forget_idx),
            checkpoints,
        }
    }
}

fn check_split(train: &Dataset, split: &Split) -> Result<()> {
    split.check_partition(train.len())?;
    if split.retain_idx.is_empty() {
        return Err(invalid("retain set is empty"));
    }
    Ok(())
}

/// Supervised training of θ_o on every training sample.
pub fn train_original(train: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let init = init_model(model_cfg, train.input_dim(), train.num_classes)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let out = engine::run(init, train, None, &all, &engine::Objective::ce(), cfg)?;
    Ok(out.model)
}

/// Exact unlearning: a fresh model trained only on the retain set.
pub fn retrain(train: &Dataset, split: &Split, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<UnlearnRun> {
    cfg.validate()?;
    check_split(train, split)?;
    let fresh = ModelConfig {
        seed: rng::derive(model_cfg.seed, &[rng::tag("retrain")]),
        ..model_cfg.clone()
    };
    let init = init_model(&fresh, train.input_dim(), train.num_classes)?;
    let out = engine::run(
        init.clone(),
        train,
        None,
        &split.retain_idx,
        &engine::Objective::ce(),
        cfg,
    )?;
    Ok(out.into_run(Method::Retrain.into(), cfg.seed, init, split))
}

/// Runs an approximate unlearning method starting from `theta_o`.
pub fn run_method(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    method: &MethodConfig,
    cfg: &TrainConfig,
) -> Result<UnlearnRun> {
    method.validate()?;
    cfg.validate()?;
    check_split(train, split)?;
    if theta_o.input_dim() != train.input_dim() || theta_o.num_classes() != train.num_classes {
        return Err(invalid("model does not match the dataset"));
    }
    let mut obj = engine::Objective::ce();
    obj.cl = method.contrastive();
    let mut start = theta_o.clone();
    let mut cfg = cfg.clone();
    let mut primary = split.retain_idx.clone();
    let mut relabel = None;
    let mut mask = None;
    let mut pre_flops = 0;
    match &method.method {
        Method::Retrain => {
            return Err(invalid("retrain is the reference; call retrain()"));
        }
        Method::Ft | Method::Coun { .. } => {}
        Method::NegGrad { epochs, lr } => {
            if split.forget_idx.is_empty() {
                return Err(invalid("neggrad needs a forget set"));
            }
            cfg.epochs = *epochs;
            cfg.base_lr = *lr;
            obj.ce_weight = -1.0;
            primary = split.forget_idx.clone();
        }
        Method::NegGradPlus { beta } => {
            obj.ce_weight = *beta;
            if *beta < 1.0 && !split.forget_idx.is_empty() {
                obj.ascent = Some(1.0 - beta);
            }
        }
        Method::L1Sparse { gamma, l1_epochs } => {
            obj.l1 = *gamma;
            obj.l1_epochs = *l1_epochs;
        }
        Method::Salun { mask_threshold } => {
            let forget = train.subset(&split.forget_idx);
            let (m, f) = saliency_mask(theta_o, &forget, *mask_threshold)?;
            mask = Some(m);
            pre_flops = f;
            relabel = Some(salun_relabel(train, &split.forget_idx, cfg.seed));
            primary = split.retain_idx.iter().chain(&split.forget_idx).copied().collect();
            primary.sort_unstable();
        }
        Method::Not { layers } => {
            for &l in layers {
                start = start.negate_layer(l)?;
            }
        }
    }
    obj.mask = mask;
    let forget = obj.ascent.map(|_| split.forget_idx.as_slice());
    let out = engine::run_with(start.clone(), train, relabel.as_deref(), &primary, forget, &obj, &cfg)?;
    let mut run = out.into_run(method.clone(), cfg.seed, theta_o.clone(), split);
    run.flops += pre_flops;
    if matches!(method.method, Method::Salun { .. }) {
        run.access_log.record(&split.forget_idx);
    }
    Ok(run)
}

pub fn ft(theta_o: &Model, train: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<UnlearnRun> {
    run_method(theta_o, train, split, &Method::Ft.into(), cfg)
}

pub fn coun(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    lambda: f64,
    tau: f64,
) -> Result<UnlearnRun> {
    run_method(theta_o, train, split, &Method::Coun { lambda, tau }.into(), cfg)
}

pub fn neggrad(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    epochs: usize,
    lr: f64,
) -> Result<UnlearnRun> {
    run_method(theta_o, train, split, &Method::NegGrad { epochs, lr }.into(), cfg)
}

pub fn neggrad_plus(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    beta: f64,
    cfg: &TrainConfig,
) -> Result<UnlearnRun> {
    run_method(theta_o, train, split, &Method::NegGradPlus { beta }.into(), cfg)
}

pub fn l1_sparse(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    gamma: f64,
    l1_epochs: usize,
    cfg: &TrainConfig,
) -> Result<UnlearnRun> {
    run_method(
        theta_o,
        train,
        split,
        &Method::L1Sparse { gamma, l1_epochs }.into(),
        cfg,
    )
}

pub fn salun(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    mask_threshold: f64,
    cfg: &TrainConfig,
) -> Result<UnlearnRun> {
    run_method(theta_o, train, split, &Method::Salun { mask_threshold }.into(), cfg)
}

pub fn not_unlearn(
    theta_o: &Model,
    train: &Dataset,
    split: &Split,
    layers: &[usize],
    cfg: &TrainConfig,
) -> Result<UnlearnRun> {
    run_method(
        theta_o,
        train,
        split,
        &Method::Not {
            layers: layers.to_vec(),
        }
        .into(),
        cfg,
    )
}

/// Default stage length for sequential unlearning.
pub const EPOCHS_PER_STAGE: usize = 10;

/// Seed for sequential stage `stage` (1-based).
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    rng::derive(seed, &[rng::tag("stage"), stage as u64])
}

/// Applies `method` stage by stage; each stage starts from the previous output.
pub fn sequential_unlearn(
    theta_o: &Model,
    train: &Dataset,
    schedule: &[Split],
    method: &MethodConfig,
    cfg: &TrainConfig,
    epochs_per_stage: usize,
) -> Result<Vec<UnlearnRun>> {
    if schedule.is_empty() {
        return Err(invalid("empty schedule"));
    }
    if !is_nested(schedule) {
        return Err(Error::InvalidArgument("schedule is not nested".into()));
    }
    let mut current = theta_o.clone();
    let mut runs = Vec::with_capacity(schedule.len());
    for (s, split) in schedule.iter().enumerate() {
        let stage_cfg = TrainConfig {
            epochs: epochs_per_stage,
            seed: stage_seed(cfg.seed, s + 1),
            ..cfg.clone()
        };
        let run = run_method(&current, train, split, method, &stage_cfg)?;
        current = run.final_model.clone();
        runs.push(run);
    }
    Ok(runs)
}
