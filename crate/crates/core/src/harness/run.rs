//! Grid execution with on-disk cell caching.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{make_synthetic, sequential_schedule, split_classwise, split_random, Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate, prediction_distribution, MetricsRecord, PredictionDistribution};
use crate::model::{read_checkpoint, write_checkpoint, Model};
use crate::theory::{lemma1_check, theory_report, Lemma1Check, TheoryEstimates};
use crate::unlearn::{
    retrain, run_method, sequential_unlearn, train_original, EpochLog, Method, MethodConfig, UnlearnRun,
};

use super::config::{ExperimentConfig, ScenarioConfig};
use super::report::{aggregate, write_tables, Aggregate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum CellStatus {
    Ok,
    Failed { error: String },
}

/// One (stage, method, seed) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub method: String,
    pub cl_module: String,
    pub seed: u64,
    pub forget_ratio: f64,
    pub scenario: String,
    pub stage: usize,
    /// Position of the method in the config; Retrain is 0.
    pub method_index: usize,
    pub status: CellStatus,
    pub metrics: Option<MetricsRecord>,
    pub loss_flops: u128,
    pub predictions: Option<PredictionDistribution>,
    /// Forget-set indices the run read; zero for retain-only methods.
    pub forget_reads: usize,
    pub epochs: Vec<EpochLog>,
    pub method_config: MethodConfig,
    pub checkpoint: Option<String>,
    pub theory: Option<TheoryEstimates>,
    pub lemma1: Option<Lemma1Check>,
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Seconds since the Unix epoch when the manifest was written.
    pub written_at: u64,
    /// Training runs executed by this invocation (0 when fully cached).
    pub fresh_runs: usize,
    pub mia_attacker: String,
    /// θ_o per seed, shared by every method of that seed.
    pub originals: Vec<OriginalRecord>,
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_ok()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginalRecord {
    pub seed: u64,
    pub checkpoint: String,
}

fn original_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("ckpt").join(format!("original-s{seed}.mulab"))
}

pub const MIA_ATTACKER: &str = "max-softmax threshold, balanced accuracy on retain vs test";

/// Output directory `<root>/<config-hash>`.
pub fn experiment_dir(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    root.join(cfg.hash())
}

/// Train/test data for the configured dataset.
pub fn dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    make_synthetic(&cfg.dataset)
}

/// Forget/retain splits for `seed`: one for random/classwise, one per stage
/// for sequential.
pub fn splits(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, seed: u64) -> Result<Vec<Split>> {
    let n_test = test.len();
    Ok(match &cfg.scenario {
        ScenarioConfig::Random { ratio } => vec![split_random(train, n_test, *ratio, seed)?],
        ScenarioConfig::Classwise { class } => vec![split_classwise(train, n_test, *class)?],
        ScenarioConfig::Sequential { step_ratio, stages, .. } => {
            sequential_schedule(train, n_test, *step_ratio, *stages, seed)?
        }
    })
}

/// Loads θ_o for `seed` from `ckpt/`, training and saving it when absent.
pub fn original_model(
    cfg: &ExperimentConfig,
    dir: &Path,
    train: &Dataset,
    seed: u64,
    fresh: &AtomicUsize,
) -> Result<Model> {
    let path = original_path(dir, seed);
    if path.exists() {
        return read_checkpoint(fs::File::open(&path)?);
    }
    let m = train_original(train, &cfg.model_config(seed), &cfg.original_recipe(seed)?)?;
    fresh.fetch_add(1, Ordering::Relaxed);
    fs::create_dir_all(path.parent().expect("ckpt dir"))?;
    write_checkpoint(&m, std::io::BufWriter::new(fs::File::create(&path)?))?;
    Ok(m)
}

fn cell_path(dir: &Path, seed: u64, stage: usize, index: usize, name: &str) -> PathBuf {
    dir.join("cells")
        .join(format!("s{seed}-st{stage}-m{index}-{name}.json"))
}

fn read_cell(path: &Path) -> Option<CellRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// What a cell's gap is measured against.
enum Reference<'a> {
    /// The cell is the Retrain reference.
    Itself,
    /// The matching Retrain cell failed.
    Missing,
    Of(&'a MetricsRecord, &'a PredictionDistribution),
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    train: &'a Dataset,
    test: &'a Dataset,
    seed: u64,
    fresh: &'a AtomicUsize,
}

impl SeedContext<'_> {
    fn base_record(&self, split: &Split, stage: usize, index: usize, method: &MethodConfig) -> CellRecord {
        CellRecord {
            dataset: self.cfg.name.clone(),
            method: method.method.name().into(),
            cl_module: method.cl_label(),
            seed: self.seed,
            forget_ratio: split.forget_ratio,
            scenario: split.scenario.label(),
            stage,
            method_index: index,
            status: CellStatus::Ok,
            metrics: None,
            loss_flops: 0,
            predictions: None,
            forget_reads: 0,
            epochs: Vec::new(),
            method_config: method.clone(),
            checkpoint: None,
            theory: None,
            lemma1: None,
        }
    }

    /// Scores a finished run and writes its cell file.
    fn finish(&self, mut rec: CellRecord, run: &UnlearnRun, reference: Reference<'_>) -> Result<CellRecord> {
        let split = &run.split;
        let mut metrics = evaluate(&run.final_model, self.train, split, self.test, run.flops)?;
        let forget = self.train.subset(&split.forget_idx);
        let preds = if forget.is_empty() {
            None
        } else {
            let against = match reference {
                Reference::Of(_, p) => Some(p),
                _ => None,
            };
            Some(prediction_distribution(&run.final_model, &forget, against, None)?)
        };
        metrics.avg_gap = match reference {
            Reference::Itself => Some(0.0),
            Reference::Missing => None,
            Reference::Of(r, _) => Some(metrics.gap_to(r)),
        };
        rec.metrics = Some(metrics);
        rec.predictions = preds;
        rec.loss_flops = run.loss_flops;
        rec.forget_reads = run.access_log.reads_among(&split.forget_idx);
        rec.epochs = run.per_epoch_log.clone();
        let is_theory_target = matches!(run.method.method, Method::Retrain | Method::Coun { .. });
        if let (Some(t), true, false) = (&self.cfg.theory, is_theory_target, forget.is_empty()) {
            let tc = t.for_seed(self.seed);
            let transform = &self.cfg.unlearn_recipe(self.seed)?.transform_cl;
            rec.theory = Some(theory_report(&run.final_model, self.train, split, transform, &tc)?);
            rec.lemma1 = Some(lemma1_check(
                &run.final_model,
                self.train,
                split,
                transform,
                tc.epsilon,
                tc.pairs,
                self.seed,
            )?);
        }
        if self.cfg.output.checkpoints {
            let name = format!(
                "s{}-st{}-m{}-{}.mulab",
                self.seed, rec.stage, rec.method_index, rec.method
            );
            let path = self.dir.join("ckpt").join(&name);
            write_checkpoint(&run.final_model, std::io::BufWriter::new(fs::File::create(&path)?))?;
            rec.checkpoint = Some(format!("ckpt/{name}"));
        }
        self.store(&rec)?;
        Ok(rec)
    }

    fn store(&self, rec: &CellRecord) -> Result<()> {
        let path = cell_path(self.dir, rec.seed, rec.stage, rec.method_index, &rec.method);
        fs::write(path, serde_json::to_string_pretty(rec)?)?;
        Ok(())
    }

    fn failed(&self, mut rec: CellRecord, e: &Error) -> CellRecord {
        log::error!("seed {} {} failed: {e}", self.seed, rec.method);
        rec.status = CellStatus::Failed { error: e.to_string() };
        rec
    }

    fn run(&self) -> Result<Vec<CellRecord>> {
        let cfg = self.cfg;
        let seed = self.seed;
        let splits = splits(cfg, self.train, self.test, seed)?;
        let methods = cfg.methods()?;
        let retrain_cfg: MethodConfig = Method::Retrain.into();

        // Everything cached: nothing to train.
        let mut wanted = Vec::new();
        for stage in 1..=splits.len() {
            wanted.push(cell_path(self.dir, seed, stage, 0, "retrain"));
            for (i, m) in methods.iter().enumerate() {
                if m.method != Method::Retrain {
                    wanted.push(cell_path(self.dir, seed, stage, i + 1, m.method.name()));
                }
            }
        }
        let cached: Vec<Option<CellRecord>> = wanted.iter().map(|p| read_cell(p)).collect();
        if cached.iter().all(|c| c.as_ref().is_some_and(CellRecord::is_ok)) {
            return Ok(cached.into_iter().flatten().collect());
        }

        let theta_o = match original_model(cfg, self.dir, self.train, seed, self.fresh) {
            Ok(m) => m,
            Err(e) => {
                // Every cell of this seed depends on θ_o.
                let mut out = Vec::new();
                for (s, split) in splits.iter().enumerate() {
                    out.push(self.failed(self.base_record(split, s + 1, 0, &retrain_cfg), &e));
                    for (i, m) in methods.iter().enumerate().filter(|(_, m)| m.method != Method::Retrain) {
                        out.push(self.failed(self.base_record(split, s + 1, i + 1, m), &e));
                    }
                }
                return Ok(out);
            }
        };
        let orig_recipe = cfg.original_recipe(seed)?;
        let unlearn_recipe = cfg.unlearn_recipe(seed)?;
        let mut out = Vec::new();
        let mut references = Vec::new();
        for (s, split) in splits.iter().enumerate() {
            let stage = s + 1;
            let path = cell_path(self.dir, seed, stage, 0, "retrain");
            let base = self.base_record(split, stage, 0, &retrain_cfg);
            let rec = match read_cell(&path).filter(CellRecord::is_ok) {
                Some(r) => r,
                None => {
                    let r = retrain(self.train, split, &cfg.model_config(seed), &orig_recipe).and_then(|run| {
                        self.fresh.fetch_add(1, Ordering::Relaxed);
                        self.finish(base.clone(), &run, Reference::Itself)
                    });
                    match r {
                        Ok(r) => r,
                        Err(e) => self.failed(base, &e),
                    }
                }
            };
            references.push(rec.metrics.clone().zip(rec.predictions.clone()));
            out.push(rec);
        }

        for (i, m) in methods.iter().enumerate() {
            if m.method == Method::Retrain {
                continue;
            }
            let index = i + 1;
            let paths: Vec<PathBuf> = (1..=splits.len())
                .map(|st| cell_path(self.dir, seed, st, index, m.method.name()))
                .collect();
            let hits: Vec<Option<CellRecord>> = paths.iter().map(|p| read_cell(p).filter(CellRecord::is_ok)).collect();
            if hits.iter().all(Option::is_some) {
                out.extend(hits.into_iter().flatten());
                continue;
            }
            let runs = match &cfg.scenario {
                ScenarioConfig::Sequential { epochs_per_stage, .. } => {
                    sequential_unlearn(&theta_o, self.train, &splits, m, &unlearn_recipe, *epochs_per_stage)
                }
                _ => run_method(&theta_o, self.train, &splits[0], m, &unlearn_recipe).map(|r| vec![r]),
            };
            match runs {
                Ok(runs) => {
                    self.fresh.fetch_add(runs.len(), Ordering::Relaxed);
                    for (s, run) in runs.iter().enumerate() {
                        let base = self.base_record(&splits[s], s + 1, index, m);
                        let reference = match &references[s] {
                            Some((a, b)) => Reference::Of(a, b),
                            None => Reference::Missing,
                        };
                        out.push(match self.finish(base.clone(), run, reference) {
                            Ok(r) => r,
                            Err(e) => self.failed(base, &e),
                        });
                    }
                }
                Err(e) => {
                    for (s, split) in splits.iter().enumerate() {
                        out.push(self.failed(self.base_record(split, s + 1, index, m), &e));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs (or resumes) the full method × seed grid and writes all artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path, jobs: usize) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = experiment_dir(cfg, root);
    fs::create_dir_all(dir.join("cells"))?;
    fs::create_dir_all(dir.join("ckpt"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let (train, test) = dataset(cfg)?;
    let fresh = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    let per_seed: Vec<Result<Vec<CellRecord>>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                SeedContext {
                    cfg,
                    dir: &dir,
                    train: &train,
                    test: &test,
                    seed,
                    fresh: &fresh,
                }
                .run()
            })
            .collect()
    });
    let mut cells = Vec::new();
    for r in per_seed {
        cells.extend(r?);
    }
    cells.sort_by(|a, b| (a.stage, a.method_index, a.seed).cmp(&(b.stage, b.method_index, b.seed)));
    let aggregates = aggregate(&cells);
    let mut manifest = RunManifest {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        written_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        fresh_runs: fresh.into_inner(),
        mia_attacker: MIA_ATTACKER.into(),
        originals: cfg
            .seeds
            .iter()
            .filter(|&&seed| original_path(&dir, seed).exists())
            .map(|&seed| OriginalRecord {
                seed,
                checkpoint: format!("ckpt/original-s{seed}.mulab"),
            })
            .collect(),
        cells,
        aggregates,
        artifacts: Vec::new(),
    };
    manifest.artifacts = write_tables(&manifest, &dir)?;
    manifest.artifacts.push("manifest.json".into());
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
