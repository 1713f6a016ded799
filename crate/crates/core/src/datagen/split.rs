use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

use super::synthetic::Dataset;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scenario {
    Random,
    Classwise { class: usize },
    Sequential { stage: usize },
}

impl Scenario {
    pub fn label(&self) -> String {
        match self {
            Scenario::Random => "random".into(),
            Scenario::Classwise { class } => format!("classwise:{class}"),
            Scenario::Sequential { stage } => format!("sequential:{stage}"),
        }
    }
}

/// Partition of the training set into retain and forget indices.
///
/// `test_idx` indexes the separate test dataset, which never overlaps the
/// training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub retain_idx: Vec<usize>,
    pub forget_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub forget_ratio: f64,
    pub scenario: Scenario,
}

impl Split {
    fn from_forget(n: usize, n_test: usize, mut forget: Vec<usize>, scenario: Scenario) -> Self {
        forget.sort_unstable();
        let mut is_forget = vec![false; n];
        for &i in &forget {
            is_forget[i] = true;
        }
        let retain = (0..n).filter(|&i| !is_forget[i]).collect();
        Self {
            retain_idx: retain,
            forget_ratio: forget.len() as f64 / n.max(1) as f64,
            forget_idx: forget,
            test_idx: (0..n_test).collect(),
            scenario,
        }
    }

    pub fn train_len(&self) -> usize {
        self.retain_idx.len() + self.forget_idx.len()
    }

    /// Checks that retain and forget partition `0..n` exactly.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![0u8; n];
        for &i in self.retain_idx.iter().chain(&self.forget_idx) {
            if i >= n {
                return Err(Error::OutOfRange { index: i, len: n });
            }
            seen[i] += 1;
        }
        if seen.iter().any(|&c| c != 1) {
            return Err(invalid("retain/forget do not partition the training set"));
        }
        Ok(())
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::tag("forget-permutation")]));
    idx
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("forget ratio {ratio} outside (0,1)")));
    }
    Ok(())
}

/// Uniformly random forget set of `round(ratio · n)` samples.
pub fn split_random(train: &Dataset, n_test: usize, ratio: f64, seed: u64) -> Result<Split> {
    check_ratio(ratio)?;
    let n = train.len();
    let k = (ratio * n as f64).round() as usize;
    let forget = permutation(n, seed)[..k].to_vec();
    Ok(Split::from_forget(n, n_test, forget, Scenario::Random))
}

/// Forget set is every training sample of `class`.
pub fn split_classwise(train: &Dataset, n_test: usize, class: usize) -> Result<Split> {
    if class >= train.num_classes {
        return Err(Error::OutOfRange {
            index: class,
            len: train.num_classes,
        });
    }
    let forget = train.indices_of_class(class);
    Ok(Split::from_forget(
        train.len(),
        n_test,
        forget,
        Scenario::Classwise { class },
    ))
}

/// Nested forget sets growing by `step_ratio` per stage.
///
/// All stages slice one shared permutation, so stage `s` is a prefix of stage
/// `s + 1`. A single stage reproduces [`split_random`] for the same seed.
pub fn sequential_schedule(
    train: &Dataset,
    n_test: usize,
    step_ratio: f64,
    stages: usize,
    seed: u64,
) -> Result<Vec<Split>> {
    check_ratio(step_ratio)?;
    if stages == 0 || step_ratio * stages as f64 > 1.0 + 1e-12 {
        return Err(invalid(format!(
            "{stages} stages of {step_ratio} exceed the training set"
        )));
    }
    let n = train.len();
    let perm = permutation(n, seed);
    Ok((1..=stages)
        .map(|s| {
            let k = ((step_ratio * s as f64 * n as f64).round() as usize).min(n);
            let mut split = Split::from_forget(n, n_test, perm[..k].to_vec(), Scenario::Sequential { stage: s });
            if stages == 1 {
                split.scenario = Scenario::Random;
            }
            split
        })
        .collect())
}

/// Whether each stage's forget set contains the previous one.
pub fn is_nested(schedule: &[Split]) -> bool {
    schedule.windows(2).all(|w| {
        let next: std::collections::HashSet<_> = w[1].forget_idx.iter().collect();
        w[0].forget_idx.iter().all(|i| next.contains(i))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::synthetic::{make_synthetic, SyntheticSpec};
    use proptest::prelude::*;

    fn data(per_class: usize) -> Dataset {
        let mut spec = SyntheticSpec::ring_benchmark(0);
        spec.samples_per_class = per_class;
        make_synthetic(&spec).unwrap().0
    }

    #[test]
    fn random_split_sizes() {
        let d = data(25);
        let s = split_random(&d, 0, 0.10, 1).unwrap();
        assert_eq!((s.forget_idx.len(), s.retain_idx.len()), (10, 90));
        let s = split_random(&d, 0, 0.50, 1).unwrap();
        assert_eq!((s.forget_idx.len(), s.retain_idx.len()), (50, 50));
        let other = split_random(&d, 0, 0.50, 2).unwrap();
        assert_ne!(s.forget_idx, other.forget_idx);
        assert_eq!(s.forget_idx.len(), other.forget_idx.len());
        assert!(split_random(&d, 0, 1.0, 1).is_err());
        assert!(split_random(&d, 0, 0.0, 1).is_err());
    }

    #[test]
    fn classwise_split() {
        let d = data(100);
        let s = split_classwise(&d, 0, 3).unwrap();
        assert_eq!(s.forget_idx.len(), 100);
        assert!(s.forget_idx.iter().all(|&i| d.class_of[i] == 3));
        assert!(s.retain_idx.iter().all(|&i| d.class_of[i] != 3));
        assert!(split_classwise(&d, 0, 4).is_err());
    }

    #[test]
    fn sequential_is_nested() {
        let d = data(25);
        let sched = sequential_schedule(&d, 0, 0.10, 5, 3).unwrap();
        let sizes: Vec<_> = sched.iter().map(|s| s.forget_idx.len()).collect();
        assert_eq!(sizes, vec![10, 20, 30, 40, 50]);
        assert!(is_nested(&sched));
        let single = sequential_schedule(&d, 0, 0.10, 1, 3).unwrap();
        assert_eq!(single[0], split_random(&d, 0, 0.10, 3).unwrap());
        assert!(sequential_schedule(&d, 0, 0.3, 4, 3).is_err());
    }

    proptest! {
        #[test]
        fn every_split_partitions(seed in 0u64..200, ratio in 0.01f64..0.99, class in 0usize..4) {
            let d = data(10);
            split_random(&d, 0, ratio, seed).unwrap().check_partition(d.len()).unwrap();
            split_classwise(&d, 0, class).unwrap().check_partition(d.len()).unwrap();
            let r = split_random(&d, 0, ratio, seed).unwrap();
            let expect = ratio * d.len() as f64;
            prop_assert!((r.forget_idx.len() as f64 - expect).abs() <= 1.0);
        }
    }
}
