//! Experiment configuration, grid execution, sweeps and reports.

mod config;
mod report;
mod run;
mod sweep;

pub use config::{
    ExperimentConfig, MethodEntry, ModelSection, OutputConfig, ScenarioConfig, TheorySection, TrainOverrides,
    TransformSpec,
};
pub use report::{
    aggregate, mean_std, report, summary_rows, write_tables, Aggregate, MeanStd, SummaryRow, RESULT_COLUMNS,
    SUMMARY_COLUMNS,
};
pub use run::{
    dataset, experiment_dir, original_model, read_manifest, run_experiment, splits, CellRecord, CellStatus,
    OriginalRecord, RunManifest, MIA_ATTACKER,
};
pub use sweep::{apply_axis, sweep, SweepAxis, SweepRow};

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "MULAB_OUT";

/// Output root: explicit flag, then `MULAB_OUT`, then the config, then `out`.
pub fn output_root(flag: Option<&std::path::Path>, cfg: &ExperimentConfig) -> std::path::PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return p.into();
    }
    cfg.output.dir.as_deref().unwrap_or("out").into()
}
