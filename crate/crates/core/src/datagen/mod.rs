//! Synthetic clustered datasets, forget/retain splits and augmentations.

mod geometry;
mod io;
mod split;
mod synthetic;
mod transform;

pub use geometry::{augmented_distance, estimate_sigma, SigmaEstimate, DEFAULT_PAIRS};
pub use io::{read_csv, read_sidecar, write_csv, write_sidecar, Sidecar};
pub use split::{is_nested, sequential_schedule, split_classwise, split_random, Scenario, Split};
pub use synthetic::{make_synthetic, one_hot, CenterLayout, Dataset, SyntheticSpec};
pub use transform::{apply_transform, AugmentOp, StrengthTag, Transform, TransformDistribution};
