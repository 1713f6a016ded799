//! One-axis hyperparameter sweeps over the experiment grid.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, TransformSpec};
use super::run::{run_experiment, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// CL weight of CoUn entries and CL modules.
    Lambda,
    /// Temperature of CoUn entries and CL modules.
    Tau,
    /// Transform family of the CL view during unlearning.
    Transform,
    /// Unlearning batch size.
    Batch,
    /// Projection head shape, `none` or `hidden:out`.
    Projection,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lambda" => Self::Lambda,
            "tau" => Self::Tau,
            "transform" => Self::Transform,
            "batch" => Self::Batch,
            "projection" => Self::Projection,
            other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        })
    }
}

fn number<T: FromStr>(v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad sweep value {v:?}")))
}

/// Returns `cfg` with one axis set to `value`.
pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: &str) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Lambda | SweepAxis::Tau => {
            let x: f64 = number(value)?;
            let mut touched = false;
            for m in &mut c.methods {
                if m.name == "coun" {
                    match axis {
                        SweepAxis::Lambda => m.lambda = Some(x),
                        _ => m.tau = Some(x),
                    }
                    touched = true;
                }
                if let Some(cl) = &mut m.cl_module {
                    match axis {
                        SweepAxis::Lambda => cl.lambda = x,
                        _ => cl.tau = x,
                    }
                    touched = true;
                }
            }
            if !touched {
                return Err(Error::Config("no method uses a contrastive term".into()));
            }
        }
        SweepAxis::Transform => c.unlearn.transform_cl = Some(TransformSpec::Named(value.trim().into())),
        SweepAxis::Batch => c.unlearn.batch_size = Some(number(value)?),
        SweepAxis::Projection => {
            c.model.projection = match value.trim() {
                "none" => None,
                v => {
                    let (a, b) = v
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("bad projection {v:?}")))?;
                    Some((number(a)?, number(b)?))
                }
            }
        }
    }
    c.validate()?;
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub config_hash: String,
    pub scenario: String,
    pub method: String,
    pub cl_module: String,
    pub mean_gap: f64,
    pub std_gap: f64,
}

/// Runs the grid once per value and writes `sweep-<axis>.csv` under the
/// base config's directory.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    root: &Path,
    jobs: usize,
) -> Result<(Vec<SweepRow>, Vec<RunManifest>, PathBuf)> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| apply_axis(cfg, axis, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut manifests = Vec::new();
    for (value, c) in values.iter().zip(&configs) {
        let m = run_experiment(c, root, jobs)?;
        for a in &m.aggregates {
            rows.push(SweepRow {
                axis,
                value: value.trim().into(),
                config_hash: m.config_hash.clone(),
                scenario: a.scenario.clone(),
                method: a.method.clone(),
                cl_module: a.cl_module.clone(),
                mean_gap: a.avg_gap.mean,
                std_gap: a.avg_gap.std,
            });
        }
        manifests.push(m);
    }
    let dir = root.join(format!("sweep-{}", cfg.hash()));
    std::fs::create_dir_all(&dir)?;
    let name = format!("{}.csv", serde_json::to_value(axis)?.as_str().unwrap_or("axis"));
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "axis",
        "value",
        "config_hash",
        "scenario",
        "method",
        "cl_module",
        "mean_gap",
        "std_gap",
    ])?;
    for r in &rows {
        w.write_record([
            serde_json::to_value(r.axis)?.as_str().unwrap_or_default().to_string(),
            r.value.clone(),
            r.config_hash.clone(),
            r.scenario.clone(),
            r.method.clone(),
            r.cl_module.clone(),
            r.mean_gap.to_string(),
            r.std_gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok((rows, manifests, path))
}
