//! Aggregation and table output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

use super::run::{CellRecord, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

/// Mean ± std over seeds for one (stage, method, cl_module) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub stage: usize,
    pub method_index: usize,
    pub method: String,
    pub cl_module: String,
    pub n: usize,
    pub failed: usize,
    pub ra: MeanStd,
    pub ua: MeanStd,
    pub ta: MeanStd,
    pub mia: MeanStd,
    pub avg_gap: MeanStd,
    pub flops: f64,
    /// Mean predicted-class percentages over forget samples.
    pub predictions: Option<Vec<f64>>,
}

pub fn aggregate(cells: &[CellRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(usize, usize), Vec<&CellRecord>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.stage, c.method_index)).or_default().push(c);
    }
    groups
        .into_values()
        .map(|g| {
            let ok: Vec<_> = g.iter().filter_map(|c| c.metrics.as_ref()).collect();
            let pick =
                |f: fn(&crate::eval::MetricsRecord) -> f64| mean_std(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
            let gaps: Vec<f64> = ok.iter().filter_map(|m| m.avg_gap).collect();
            let preds: Vec<&Vec<f64>> = g
                .iter()
                .filter_map(|c| c.predictions.as_ref().map(|p| &p.percent))
                .collect();
            let predictions = preds.first().map(|first| {
                (0..first.len())
                    .map(|k| preds.iter().map(|p| p[k]).sum::<f64>() / preds.len() as f64)
                    .collect()
            });
            Aggregate {
                scenario: g[0].scenario.clone(),
                stage: g[0].stage,
                method_index: g[0].method_index,
                method: g[0].method.clone(),
                cl_module: g[0].cl_module.clone(),
                n: ok.len(),
                failed: g.len() - ok.len(),
                ra: pick(|m| m.ra),
                ua: pick(|m| m.ua),
                ta: pick(|m| m.ta),
                mia: pick(|m| m.mia),
                avg_gap: mean_std(&gaps),
                flops: ok.iter().map(|m| m.flops as f64).sum::<f64>() / ok.len().max(1) as f64,
                predictions,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "dataset",
    "method",
    "cl_module",
    "seed",
    "forget_ratio",
    "scenario",
    "RA",
    "UA",
    "TA",
    "MIA",
    "avg_gap",
    "flops",
];

/// Writes `results.csv`, `results.json`, `preds.csv` and `theory.json`.
pub fn write_tables(manifest: &RunManifest, dir: &Path) -> Result<Vec<String>> {
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(RESULT_COLUMNS)?;
    for c in &manifest.cells {
        let m = c.metrics.as_ref();
        w.write_record([
            c.dataset.clone(),
            c.method.clone(),
            c.cl_module.clone(),
            c.seed.to_string(),
            c.forget_ratio.to_string(),
            c.scenario.clone(),
            opt(m.map(|m| m.ra)),
            opt(m.map(|m| m.ua)),
            opt(m.map(|m| m.ta)),
            opt(m.map(|m| m.mia)),
            opt(m.and_then(|m| m.avg_gap)),
            m.map(|m| m.flops.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct JsonRow<'a> {
        dataset: &'a str,
        method: &'a str,
        cl_module: &'a str,
        seed: u64,
        forget_ratio: f64,
        scenario: &'a str,
        status: &'a super::run::CellStatus,
        metrics: Option<&'a crate::eval::MetricsRecord>,
        predictions: Option<&'a crate::eval::PredictionDistribution>,
    }
    let rows: Vec<JsonRow> = manifest
        .cells
        .iter()
        .map(|c| JsonRow {
            dataset: &c.dataset,
            method: &c.method,
            cl_module: &c.cl_module,
            seed: c.seed,
            forget_ratio: c.forget_ratio,
            scenario: &c.scenario,
            status: &c.status,
            metrics: c.metrics.as_ref(),
            predictions: c.predictions.as_ref(),
        })
        .collect();
    fs::write(dir.join("results.json"), serde_json::to_string_pretty(&rows)?)?;

    let mut p = csv::Writer::from_path(dir.join("preds.csv"))?;
    p.write_record([
        "dataset",
        "method",
        "cl_module",
        "seed",
        "scenario",
        "class",
        "percent",
        "diff",
    ])?;
    for c in &manifest.cells {
        if let Some(pd) = &c.predictions {
            for (k, v) in pd.percent.iter().enumerate() {
                let d = pd.diffs.as_ref().map(|d| d[k]);
                p.write_record([
                    c.dataset.clone(),
                    c.method.clone(),
                    c.cl_module.clone(),
                    c.seed.to_string(),
                    c.scenario.clone(),
                    k.to_string(),
                    v.to_string(),
                    opt(d),
                ])?;
            }
        }
    }
    p.flush()?;

    #[derive(Serialize)]
    struct TheoryRow<'a> {
        seed: u64,
        method: &'a str,
        scenario: &'a str,
        estimates: &'a crate::theory::TheoryEstimates,
        lemma1: Option<&'a crate::theory::Lemma1Check>,
    }
    let theory: Vec<TheoryRow> = manifest
        .cells
        .iter()
        .filter_map(|c| {
            c.theory.as_ref().map(|t| TheoryRow {
                seed: c.seed,
                method: &c.method,
                scenario: &c.scenario,
                estimates: t,
                lemma1: c.lemma1.as_ref(),
            })
        })
        .collect();
    fs::write(dir.join("theory.json"), serde_json::to_string_pretty(&theory)?)?;
    Ok(["results.csv", "results.json", "preds.csv", "theory.json"]
        .map(String::from)
        .to_vec())
}

/// Table-2-shaped row: metric means ± std, `|Δ|` against Retrain, average gap, cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub cl_module: String,
    pub values: [MeanStd; 4],
    pub deltas: [f64; 4],
    pub avg_gap: MeanStd,
    pub pflops: f64,
}

pub const SUMMARY_COLUMNS: [&str; 18] = [
    "scenario",
    "method",
    "cl_module",
    "RA",
    "RA_std",
    "RA_delta",
    "UA",
    "UA_std",
    "UA_delta",
    "TA",
    "TA_std",
    "TA_delta",
    "MIA",
    "MIA_std",
    "MIA_delta",
    "avg_gap",
    "avg_gap_std",
    "pflops",
];

pub fn summary_rows(manifest: &RunManifest) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for a in &manifest.aggregates {
        let r = manifest
            .aggregates
            .iter()
            .find(|r| r.stage == a.stage && r.method == "retrain" && r.n > 0)
            .ok_or_else(|| invalid(format!("missing retrain reference for {}", a.scenario)))?;
        let values = [a.ra, a.ua, a.ta, a.mia];
        let refs = [r.ra, r.ua, r.ta, r.mia];
        rows.push(SummaryRow {
            scenario: a.scenario.clone(),
            method: a.method.clone(),
            cl_module: a.cl_module.clone(),
            deltas: std::array::from_fn(|i| (values[i].mean - refs[i].mean).abs()),
            values,
            avg_gap: a.avg_gap,
            pflops: a.flops / 1e15,
        });
    }
    Ok(rows)
}

/// Writes `table2.csv` (metrics with `|Δ|`) and `table1.csv` (forget
/// prediction distributions against Retrain's).
pub fn report(manifest: &RunManifest, dir: &Path) -> Result<Vec<String>> {
    let rows = summary_rows(manifest)?;
    let mut w = csv::Writer::from_path(dir.join("table2.csv"))?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in &rows {
        let mut rec = vec![r.scenario.clone(), r.method.clone(), r.cl_module.clone()];
        for i in 0..4 {
            rec.push(r.values[i].mean.to_string());
            rec.push(r.values[i].std.to_string());
            rec.push(r.deltas[i].to_string());
        }
        rec.push(r.avg_gap.mean.to_string());
        rec.push(r.avg_gap.std.to_string());
        rec.push(r.pflops.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let k = manifest.config.dataset.num_classes;
    let mut t = csv::Writer::from_path(dir.join("table1.csv"))?;
    let mut header = vec!["scenario".to_string(), "method".into(), "cl_module".into()];
    header.extend((0..k).map(|c| format!("class_{c}")));
    header.push("avg_diff".into());
    t.write_record(&header)?;
    for a in &manifest.aggregates {
        let Some(p) = &a.predictions else { continue };
        let reference = manifest
            .aggregates
            .iter()
            .find(|r| r.stage == a.stage && r.method == "retrain")
            .and_then(|r| r.predictions.as_ref())
            .ok_or_else(|| invalid("missing retrain prediction reference"))?;
        let all: Vec<usize> = (0..k).collect();
        let diff = crate::eval::mean_abs_diff(p, reference, &all)?;
        let mut rec = vec![a.scenario.clone(), a.method.clone(), a.cl_module.clone()];
        rec.extend(p.iter().map(|v| v.to_string()));
        rec.push(diff.to_string());
        t.write_record(&rec)?;
    }
    t.flush()?;
    Ok(vec!["table2.csv".into(), "table1.csv".into()])
}
