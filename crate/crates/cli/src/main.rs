use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicUsize;

use clap::{Parser, Subcommand};

use mulab::datagen::{write_csv, write_sidecar, Sidecar};
use mulab::eval::{evaluate, prediction_distribution};
use mulab::harness::{self, ExperimentConfig, MethodEntry, SweepAxis};
use mulab::model::{read_checkpoint, write_checkpoint};
use mulab::theory::{lemma1_check, theory_report};
use mulab::unlearn::{retrain, run_method, sequential_unlearn, Method, UnlearnRun};
use mulab::{Error, Model, Result};

#[derive(Parser)]
#[command(name = "mulab", version, about = "Machine unlearning experiments on synthetic data")]
struct Cli {
    /// Experiment config (TOML). Defaults to the built-in ring benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to a single trial seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides MULAB_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the seed pool.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train θ_o and export the dataset.
    Train,
    /// Run one method against θ_o.
    Unlearn {
        /// Method name; parameters come from the matching `[[methods]]` entry.
        #[arg(long)]
        method: String,
    },
    /// Evaluate a checkpoint on the seed's split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Retrain checkpoint to measure the average gap against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stage: usize,
    },
    /// Theory estimates for a checkpoint.
    Theory {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        stage: usize,
    },
    /// Full method × seed grid.
    Run,
    /// Run the grid once per value of one axis.
    Sweep {
        /// lambda, tau, transform, batch or projection.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; projection takes `hidden:out` or `none`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Table files from a finished run.
    Report {
        /// Defaults to `<out>/<config-hash>/manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    root: PathBuf,
    seed: u64,
    jobs: usize,
}

impl Ctx {
    fn dir(&self) -> PathBuf {
        harness::experiment_dir(&self.cfg, &self.root)
    }

    fn original(&self, train: &mulab::datagen::Dataset) -> Result<Model> {
        let dir = self.dir();
        fs::create_dir_all(dir.join("ckpt"))?;
        harness::original_model(&self.cfg, &dir, train, self.seed, &AtomicUsize::new(0))
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::benchmark(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn save(model: &Model, path: &Path) -> Result<()> {
    fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    write_checkpoint(model, std::io::BufWriter::new(fs::File::create(path)?))
}

fn load(path: &Path) -> Result<Model> {
    read_checkpoint(std::io::BufReader::new(fs::File::open(path)?))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(ctx: &Ctx) -> Result<()> {
    let (train, test) = harness::dataset(&ctx.cfg)?;
    let data = ctx.dir().join("data");
    fs::create_dir_all(&data)?;
    for (role, d) in [("train", &train), ("test", &test)] {
        write_csv(d, &data.join(format!("{role}.csv")))?;
        let sidecar = Sidecar {
            spec: ctx.cfg.dataset.clone(),
            seed: ctx.cfg.dataset.seed,
            role: role.into(),
        };
        write_sidecar(&sidecar, &data.join(format!("{role}.json")))?;
    }
    let dir = ctx.dir();
    fs::create_dir_all(dir.join("ckpt"))?;
    for &seed in &ctx.cfg.seeds {
        harness::original_model(&ctx.cfg, &dir, &train, seed, &AtomicUsize::new(0))?;
        println!("{}", dir.join("ckpt").join(format!("original-s{seed}.mulab")).display());
    }
    Ok(())
}

fn unlearn(ctx: &Ctx, name: &str) -> Result<()> {
    let entry = ctx
        .cfg
        .methods
        .iter()
        .find(|m| m.name == name)
        .cloned()
        .unwrap_or_else(|| MethodEntry::named(name));
    let method = entry.resolve()?;
    let (train, test) = harness::dataset(&ctx.cfg)?;
    let splits = harness::splits(&ctx.cfg, &train, &test, ctx.seed)?;
    let sequential = matches!(ctx.cfg.scenario, harness::ScenarioConfig::Sequential { .. });
    let (runs, recipe): (Vec<UnlearnRun>, _) = if method.method == Method::Retrain {
        let recipe = ctx.cfg.original_recipe(ctx.seed)?;
        let runs = splits
            .iter()
            .map(|s| retrain(&train, s, &ctx.cfg.model_config(ctx.seed), &recipe))
            .collect::<Result<_>>()?;
        (runs, recipe)
    } else {
        let theta_o = ctx.original(&train)?;
        let recipe = ctx.cfg.unlearn_recipe(ctx.seed)?;
        let runs = match &ctx.cfg.scenario {
            harness::ScenarioConfig::Sequential { epochs_per_stage, .. } => {
                sequential_unlearn(&theta_o, &train, &splits, &method, &recipe, *epochs_per_stage)?
            }
            _ => vec![run_method(&theta_o, &train, &splits[0], &method, &recipe)?],
        };
        (runs, recipe)
    };
    let dir = ctx.dir();
    fs::create_dir_all(dir.join("runs"))?;
    for (s, run) in runs.iter().enumerate() {
        let stem = if sequential {
            format!("{name}-s{}-st{}", ctx.seed, s + 1)
        } else {
            format!("{name}-s{}", ctx.seed)
        };
        let ckpt = format!("ckpt/{stem}.mulab");
        save(&run.final_model, &dir.join(&ckpt))?;
        let record = run.record(&recipe, vec![ckpt]);
        let path = dir.join("runs").join(format!("{stem}.json"));
        fs::write(&path, serde_json::to_string_pretty(&record)?)?;
        let metrics = evaluate(&run.final_model, &train, &run.split, &test, run.flops)?;
        log::info!(
            "{stem}: RA {:.2} UA {:.2} TA {:.2} MIA {:.2}",
            metrics.ra,
            metrics.ua,
            metrics.ta,
            metrics.mia
        );
        println!("{}", path.display());
    }
    Ok(())
}

fn pick_split(
    ctx: &Ctx,
    stage: usize,
) -> Result<(mulab::datagen::Dataset, mulab::datagen::Dataset, mulab::datagen::Split)> {
    let (train, test) = harness::dataset(&ctx.cfg)?;
    let mut splits = harness::splits(&ctx.cfg, &train, &test, ctx.seed)?;
    if stage == 0 || stage > splits.len() {
        return Err(Error::Config(format!("stage {stage} outside 1..={}", splits.len())));
    }
    let split = splits.swap_remove(stage - 1);
    Ok((train, test, split))
}

fn eval(ctx: &Ctx, checkpoint: &Path, reference: Option<&Path>, stage: usize) -> Result<()> {
    let (train, test, split) = pick_split(ctx, stage)?;
    let model = load(checkpoint)?;
    let mut metrics = evaluate(&model, &train, &split, &test, 0)?;
    let forget = train.subset(&split.forget_idx);
    let mut reference_preds = None;
    if let Some(r) = reference {
        let r = load(r)?;
        let rm = evaluate(&r, &train, &split, &test, 0)?;
        metrics.avg_gap = Some(metrics.gap_to(&rm));
        if !forget.is_empty() {
            reference_preds = Some(prediction_distribution(&r, &forget, None, None)?);
        }
    }
    let preds = if forget.is_empty() {
        None
    } else {
        Some(prediction_distribution(
            &model,
            &forget,
            reference_preds.as_ref(),
            None,
        )?)
    };
    print_json(&serde_json::json!({
        "checkpoint": checkpoint,
        "seed": ctx.seed,
        "scenario": split.scenario.label(),
        "metrics": metrics,
        "predictions": preds,
    }))
}

fn theory(ctx: &Ctx, checkpoint: &Path, stage: usize) -> Result<()> {
    let (train, _, split) = pick_split(ctx, stage)?;
    let model = load(checkpoint)?;
    let tc = ctx.cfg.theory.clone().unwrap_or_default().for_seed(ctx.seed);
    let t = ctx.cfg.unlearn_recipe(ctx.seed)?.transform_cl;
    let estimates = theory_report(&model, &train, &split, &t, &tc)?;
    let lemma1 = lemma1_check(&model, &train, &split, &t, tc.epsilon, tc.pairs, ctx.seed)?;
    print_json(&serde_json::json!({
        "checkpoint": checkpoint,
        "estimates": estimates,
        "lemma1": lemma1,
    }))
}

fn run(ctx: &Ctx) -> Result<ExitCode> {
    let m = harness::run_experiment(&ctx.cfg, &ctx.root, ctx.jobs)?;
    let dir = ctx.dir();
    if let Err(e) = harness::report(&m, &dir) {
        log::warn!("tables not written: {e}");
    }
    for a in &m.aggregates {
        println!(
            "{:<14} {:<8} {:<22} gap {:.2} ± {:.2} (n={}, failed={})",
            a.scenario, a.method, a.cl_module, a.avg_gap.mean, a.avg_gap.std, a.n, a.failed
        );
    }
    println!("{}", dir.display());
    Ok(if m.failed_cells() > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn sweep(ctx: &Ctx, axis: &str, values: &[String]) -> Result<ExitCode> {
    let axis: SweepAxis = axis.parse()?;
    let (rows, manifests, path) = harness::sweep(&ctx.cfg, axis, values, &ctx.root, ctx.jobs)?;
    for r in &rows {
        println!(
            "{:<10} {:<8} {:<22} gap {:.2} ± {:.2}",
            r.value, r.method, r.cl_module, r.mean_gap, r.std_gap
        );
    }
    println!("{}", path.display());
    let failed = manifests.iter().map(|m| m.failed_cells()).sum::<usize>();
    Ok(if failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn report(ctx: &Ctx, manifest: Option<&Path>) -> Result<()> {
    let path = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.dir().join("manifest.json"));
    let m = harness::read_manifest(&path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for f in harness::report(&m, dir)? {
        println!("{}", dir.join(f).display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let ctx = Ctx {
        root: harness::output_root(cli.out.as_deref(), &cfg),
        seed: cfg.seeds[0],
        jobs: cli.jobs,
        cfg,
    };
    match &cli.command {
        Command::Train => train(&ctx)?,
        Command::Unlearn { method } => unlearn(&ctx, method)?,
        Command::Eval {
            checkpoint,
            reference,
            stage,
        } => eval(&ctx, checkpoint, reference.as_deref(), *stage)?,
        Command::Theory { checkpoint, stage } => theory(&ctx, checkpoint, *stage)?,
        Command::Run => return run(&ctx),
        Command::Sweep { axis, values } => return sweep(&ctx, axis, values),
        Command::Report { manifest } => report(&ctx, manifest.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
