//! Augmented distance and the greedy `(σ, δ)` coverage estimate.

use crate::error::{invalid, Result};
use crate::rng;

use super::synthetic::Dataset;
use super::transform::TransformDistribution;

/// Default number of sampled view pairs for Monte-Carlo minima and suprema.
pub const DEFAULT_PAIRS: usize = 64;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Monte-Carlo augmented distance: the minimum of `‖t(i1) − t′(i2)‖` over
/// `pairs` sampled `(t, t′)`. An upper estimate of the true minimum.
pub fn augmented_distance(
    i1: &[f64],
    i2: &[f64],
    dist: &TransformDistribution,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs == 0 {
        return Err(invalid("augmented_distance needs at least one pair"));
    }
    if dist.is_identity() {
        return Ok(euclid(i1, i2));
    }
    let tag = rng::tag("augmented-distance");
    Ok((0..pairs as u64)
        .map(|m| {
            let t = dist.sample_keyed(seed, &[tag, m, 0]);
            let tp = dist.sample_keyed(seed, &[tag, m, 1]);
            euclid(&t.apply_row(i1), &tp.apply_row(i2))
        })
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SigmaEstimate {
    /// Covered fraction per class.
    pub per_class: Vec<f64>,
    pub min: f64,
    pub delta: f64,
    /// Index (into the dataset) of each class's medoid.
    pub medoids: Vec<usize>,
}

/// Greedy lower estimate of σ for a given δ.
///
/// For each class, the medoid minimises its largest augmented distance to
/// classmates; σ̂ₖ is the fraction of the class within δ/2 of the medoid, so
/// the covered set has diameter at most δ.
pub fn estimate_sigma(
    data: &Dataset,
    dist: &TransformDistribution,
    delta: f64,
    pairs: usize,
    seed: u64,
) -> Result<SigmaEstimate> {
    if !(delta > 0.0) {
        return Err(invalid("delta must be > 0"));
    }
    let mut per_class = Vec::with_capacity(data.num_classes);
    let mut medoids = Vec::with_capacity(data.num_classes);
    for k in 0..data.num_classes {
        let members = data.indices_of_class(k);
        if members.is_empty() {
            return Err(invalid(format!("class {k} has no samples")));
        }
        let m = members.len();
        let mut d = vec![0.0; m * m];
        for a in 0..m {
            for b in a + 1..m {
                let (ia, ib) = (members[a], members[b]);
                let pair_seed = rng::derive(seed, &[ia as u64, ib as u64]);
                let v = augmented_distance(data.inputs.row(ia), data.inputs.row(ib), dist, pairs, pair_seed)?;
                d[a * m + b] = v;
                d[b * m + a] = v;
            }
        }
        let mut best = (0, f64::INFINITY);
        for a in 0..m {
            let worst = d[a * m..(a + 1) * m].iter().copied().fold(0.0, f64::max);
            if worst < best.1 {
                best = (a, worst);
            }
        }
        let center = best.0;
        let covered = (0..m).filter(|&b| d[center * m + b] <= delta / 2.0).count();
        per_class.push(covered as f64 / m as f64);
        medoids.push(members[center]);
    }
    let min = per_class.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SigmaEstimate {
        per_class,
        min,
        delta,
        medoids,
    })
}
