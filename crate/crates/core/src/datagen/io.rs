//! CSV export/import (`x_0..x_{d-1},class`) with a JSON provenance sidecar.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Result};

use super::synthetic::{Dataset, SyntheticSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub role: String,
}

pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.input_dim()).map(|j| format!("x_{j}")).collect();
    header.push("class".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.inputs.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(data.class_of[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = r.headers()?.len().saturating_sub(1);
    if dim == 0 {
        return Err(invalid("dataset csv needs at least one feature column"));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for j in 0..dim {
            xs.push(
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad value {:?}: {e}", &rec[j])))?,
            );
        }
        ys.push(
            rec[dim]
                .parse::<usize>()
                .map_err(|e| invalid(format!("bad class {:?}: {e}", &rec[dim])))?,
        );
    }
    Dataset::new(Tensor::matrix(ys.len(), dim, xs)?, ys, num_classes)
}

pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
