//! Vector-space augmentation families.
//!
//! Gaussian noise stands in for colour jitter, a random coordinate mask for
//! cropping, and a per-sample uniform scale for brightness changes.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", deny_unknown_fields)]
pub enum AugmentOp {
    Identity,
    Noise { std: f64 },
    Mask { prob: f64 },
    Scale { low: f64, high: f64 },
}

impl AugmentOp {
    fn validate(&self) -> Result<()> {
        match *self {
            AugmentOp::Identity => Ok(()),
            AugmentOp::Noise { std } if std >= 0.0 => Ok(()),
            AugmentOp::Mask { prob } if (0.0..=1.0).contains(&prob) => Ok(()),
            AugmentOp::Scale { low, high } if 0.0 <= low && low <= high => Ok(()),
            ref op => Err(invalid(format!("bad augmentation {op:?}"))),
        }
    }

    fn is_noop(&self) -> bool {
        match *self {
            AugmentOp::Identity => true,
            AugmentOp::Noise { std } => std == 0.0,
            AugmentOp::Mask { prob } => prob == 0.0,
            AugmentOp::Scale { low, high } => low == 1.0 && high == 1.0,
        }
    }

    fn apply(&self, row: &mut [f64], r: &mut Rng) {
        if self.is_noop() {
            return;
        }
        match *self {
            AugmentOp::Identity => {}
            AugmentOp::Noise { std } => {
                for x in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(r);
                    *x += std * z;
                }
            }
            AugmentOp::Mask { prob } => {
                for x in row.iter_mut() {
                    if r.random::<f64>() < prob {
                        *x = 0.0;
                    }
                }
            }
            AugmentOp::Scale { low, high } => {
                let s = if low == high { low } else { r.random_range(low..high) };
                row.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrengthTag {
    Identity,
    Simple,
    Strong,
    Custom,
}

/// A distribution over augmentations: an ordered op pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformDistribution {
    pub ops: Vec<AugmentOp>,
    pub strength: StrengthTag,
}

impl TransformDistribution {
    pub fn identity() -> Self {
        Self {
            ops: vec![AugmentOp::Identity],
            strength: StrengthTag::Identity,
        }
    }

    pub fn simple() -> Self {
        Self {
            ops: vec![AugmentOp::Mask { prob: 0.1 }, AugmentOp::Noise { std: 0.05 }],
            strength: StrengthTag::Simple,
        }
    }

    pub fn strong() -> Self {
        Self {
            ops: vec![
                AugmentOp::Mask { prob: 0.3 },
                AugmentOp::Scale { low: 0.8, high: 1.25 },
                AugmentOp::Noise { std: 0.2 },
            ],
            strength: StrengthTag::Strong,
        }
    }

    pub fn noise(std: f64) -> Self {
        Self {
            ops: vec![AugmentOp::Noise { std }],
            strength: StrengthTag::Custom,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity()),
            "simple" => Ok(Self::simple()),
            "strong" => Ok(Self::strong()),
            other => Err(invalid(format!("unknown transform {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.iter().try_for_each(AugmentOp::validate)
    }

    /// True when every op leaves inputs untouched.
    pub fn is_identity(&self) -> bool {
        self.ops.iter().all(AugmentOp::is_noop)
    }

    /// Draws a concrete transform.
    pub fn sample(&self, r: &mut Rng) -> Transform {
        Transform {
            dist: self.clone(),
            seed: r.random(),
        }
    }

    /// Concrete transform keyed by `(seed, tags)`.
    pub fn sample_keyed(&self, seed: u64, tags: &[u64]) -> Transform {
        Transform {
            dist: self.clone(),
            seed: rng::derive(seed, tags),
        }
    }
}

/// A concrete transform `t`: the family plus the randomness that fixes it.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub dist: TransformDistribution,
    pub seed: u64,
}

impl Transform {
    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        if self.dist.is_identity() {
            return out;
        }
        let mut r = rng::stream(self.seed, &[]);
        for op in &self.dist.ops {
            op.apply(&mut out, &mut r);
        }
        out
    }
}

/// Applies `t` to every row of `batch`, consuming one RNG stream in row order.
pub fn apply_transform(t: &Transform, batch: &Tensor) -> Tensor {
    if t.dist.is_identity() {
        return batch.clone();
    }
    let mut out = batch.clone();
    let mut r = rng::stream(t.seed, &[]);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for op in &t.dist.ops {
            op.apply(row, &mut r);
        }
    }
    out
}
