//! RA/UA/TA, the confidence-threshold membership attack, average gap,
//! prediction distributions over forget samples, and FLOP lookup.

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Split};
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::scalar::Exact;
use crate::unlearn::UnlearnRun;

/// Metrics of one model, percentages in `[0, 100]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub ra: f64,
    pub ua: f64,
    pub ta: f64,
    pub mia: f64,
    pub avg_gap: Option<f64>,
    pub flops: u128,
}

impl MetricsRecord {
    pub fn values(&self) -> [f64; 4] {
        [self.ra, self.ua, self.ta, self.mia]
    }

    /// Per-metric `|Δ|` against `reference`.
    pub fn deltas(&self, reference: &MetricsRecord) -> [f64; 4] {
        let (a, b) = (self.values(), reference.values());
        std::array::from_fn(|i| (a[i] - b[i]).abs())
    }

    pub fn gap_to(&self, reference: &MetricsRecord) -> f64 {
        avg_gap(&self.values(), &reference.values())
    }
}

/// `¼ Σ |m_i − r_i|` over (RA, UA, TA, MIA).
pub fn avg_gap<E: Exact>(m: &[E; 4], reference: &[E; 4]) -> E {
    let total = m
        .iter()
        .zip(reference)
        .fold(E::zero(), |acc, (a, b)| acc + (a.clone() - b.clone()).abs());
    total / E::from_u8(4).expect("4 is representable")
}

/// Mean of `|a_k − b_k|` over `classes`.
pub fn mean_abs_diff<E: Exact>(a: &[E], b: &[E], classes: &[usize]) -> Result<E> {
    if classes.is_empty() {
        return Err(invalid("no classes to average"));
    }
    let mut total = E::zero();
    for &k in classes {
        let (x, y) = a
            .get(k)
            .zip(b.get(k))
            .ok_or_else(|| invalid(format!("class {k} out of range")))?;
        total = total + (x.clone() - y.clone()).abs();
    }
    Ok(total / E::from_usize(classes.len()).expect("class count is representable"))
}

/// Rounds to 2 decimals for reporting.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// `100 · #correct / n`.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(invalid("accuracy of an empty set"));
    }
    let pred = model.predict(&data.inputs)?;
    let correct = pred.iter().zip(&data.class_of).filter(|(p, y)| p == y).count();
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// `(RA, UA, TA)`; UA is 0 when the forget set is empty.
pub fn core_metrics(model: &Model, train: &Dataset, split: &Split, test: &Dataset) -> Result<(f64, f64, f64)> {
    let ra = accuracy(model, &train.subset(&split.retain_idx))?;
    let ua = if split.forget_idx.is_empty() {
        0.0
    } else {
        100.0 - accuracy(model, &train.subset(&split.forget_idx))?
    };
    let ta = accuracy(model, &test.subset(&split.test_idx))?;
    Ok((ra, ua, ta))
}

/// Max softmax probability per row.
pub fn max_confidences(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    let p = model.probabilities(&data.inputs)?;
    Ok((0..p.rows())
        .map(|i| p.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaOutcome {
    /// Percentage of forget samples judged non-members.
    pub mia: f64,
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// Every retain/test confidence was identical.
    pub degenerate: bool,
}

/// Threshold attacker fit on retain (members) vs test (non-members).
///
/// A sample is a member iff its confidence is `>= threshold`. Candidates are
/// the sorted unique retain/test confidences; the smallest maximiser of
/// balanced accuracy wins.
pub fn mia_from_confidences(retain: &[f64], test: &[f64], forget: &[f64]) -> Result<MiaOutcome> {
    if retain.is_empty() || test.is_empty() {
        return Err(invalid("membership attack needs retain and test samples"));
    }
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (r, t) = (sorted(retain), sorted(test));
    let mut cands: Vec<f64> = r.iter().chain(&t).copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let below = |s: &[f64], thr: f64| s.partition_point(|&c| c < thr);
    let mut best = (f64::NEG_INFINITY, cands[0]);
    for &thr in &cands {
        let tpr = (r.len() - below(&r, thr)) as f64 / r.len() as f64;
        let tnr = below(&t, thr) as f64 / t.len() as f64;
        let ba = 0.5 * (tpr + tnr);
        if ba > best.0 {
            best = (ba, thr);
        }
    }
    let degenerate = cands.len() == 1;
    if degenerate {
        log::warn!("membership attack: all confidences equal, ties judged members");
    }
    let non_members = forget.iter().filter(|&&c| c < best.1).count();
    let mia = if forget.is_empty() {
        0.0
    } else {
        100.0 * non_members as f64 / forget.len() as f64
    };
    Ok(MiaOutcome {
        mia,
        threshold: best.1,
        balanced_accuracy: best.0,
        degenerate,
    })
}

pub fn mia_efficacy(model: &Model, train: &Dataset, split: &Split, test: &Dataset) -> Result<f64> {
    let conf = |idx: &[usize], d: &Dataset| max_confidences(model, &d.subset(idx));
    let out = mia_from_confidences(
        &conf(&split.retain_idx, train)?,
        &conf(&split.test_idx, test)?,
        &conf(&split.forget_idx, train)?,
    )?;
    Ok(out.mia)
}

/// All four metrics plus the supplied FLOP count; `avg_gap` left empty.
pub fn evaluate(model: &Model, train: &Dataset, split: &Split, test: &Dataset, flops: u128) -> Result<MetricsRecord> {
    let (ra, ua, ta) = core_metrics(model, train, split, test)?;
    let mia = mia_efficacy(model, train, split, test)?;
    Ok(MetricsRecord {
        ra,
        ua,
        ta,
        mia,
        avg_gap: None,
        flops,
    })
}

/// Where forget samples land, as percentages over all classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    pub percent: Vec<f64>,
    /// Per-class `|Δ|` against the reference, when one was given.
    pub diffs: Option<Vec<f64>>,
    pub avg_diff: Option<f64>,
}

/// Predicted-class histogram of `forget`; `classes` selects the classes
/// averaged into `avg_diff` (all classes when `None`).
pub fn prediction_distribution(
    model: &Model,
    forget: &Dataset,
    reference: Option<&PredictionDistribution>,
    classes: Option<&[usize]>,
) -> Result<PredictionDistribution> {
    if forget.is_empty() {
        return Err(invalid("prediction distribution of an empty set"));
    }
    let k = model.num_classes();
    let mut counts = vec![0usize; k];
    for p in model.predict(&forget.inputs)? {
        counts[p] += 1;
    }
    let percent: Vec<f64> = counts.iter().map(|&c| 100.0 * c as f64 / forget.len() as f64).collect();
    let (diffs, avg_diff) = match reference {
        None => (None, None),
        Some(r) => {
            if r.percent.len() != k {
                return Err(invalid("reference distribution has a different class count"));
            }
            let all: Vec<usize> = (0..k).collect();
            let d = percent.iter().zip(&r.percent).map(|(a, b)| (a - b).abs()).collect();
            let avg = mean_abs_diff(&percent, &r.percent, classes.unwrap_or(&all))?;
            (Some(d), Some(avg))
        }
    };
    Ok(PredictionDistribution {
        percent,
        diffs,
        avg_diff,
    })
}

pub fn flops_of_run(run: &UnlearnRun) -> u128 {
    run.flops
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::model::{init_model, ModelConfig};
    use crate::rng;
    use crate::scalar::{decimal, format_rounded, Rational};
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(v: [f64; 4]) -> MetricsRecord {
        MetricsRecord {
            ra: v[0],
            ua: v[1],
            ta: v[2],
            mia: v[3],
            avg_gap: None,
            flops: 1,
        }
    }

    fn dec4(v: [&str; 4]) -> [Rational; 4] {
        v.map(|s| decimal(s).unwrap())
    }

    #[test]
    fn table_rows_give_published_gaps() {
        let retrain = dec4(["100.00", "4.81", "94.67", "11.02"]);
        let ft = dec4(["99.99", "3.76", "94.70", "9.51"]);
        let coun = dec4(["99.99", "4.12", "94.57", "10.81"]);
        assert_eq!(format_rounded(&avg_gap(&ft, &retrain), 2), "0.65");
        assert_eq!(format_rounded(&avg_gap(&coun, &retrain), 2), "0.25");
        assert_eq!(avg_gap(&coun, &retrain), decimal("0.2525").unwrap());
    }

    #[test]
    fn gap_of_self_is_zero() {
        let m = rec([99.0, 3.0, 90.0, 12.0]);
        assert_eq!(m.gap_to(&m), 0.0);
    }

    #[test]
    fn accuracy_of_zero_model_is_half() {
        let cfg = ModelConfig {
            init_scale: 0.0,
            ..ModelConfig::default()
        };
        let m: Model = init_model(&cfg, 3, 2).unwrap();
        let d = Dataset::new(Tensor::zeros(&[4, 3]), vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(accuracy(&m, &d).unwrap(), 50.0);
        let empty = Dataset::new(Tensor::zeros(&[0, 3]), vec![], 2).unwrap();
        assert!(accuracy(&m, &empty).is_err());
    }

    #[test]
    fn perfect_separation_cases() {
        let r = [0.99; 5];
        let t = [0.60; 5];
        assert_eq!(mia_from_confidences(&r, &t, &[0.60; 3]).unwrap().mia, 100.0);
        assert_eq!(mia_from_confidences(&r, &t, &[0.99; 3]).unwrap().mia, 0.0);
    }

    #[test]
    fn degenerate_confidences_judge_members() {
        let out = mia_from_confidences(&[0.5; 3], &[0.5; 3], &[0.5; 2]).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.balanced_accuracy, 0.5);
        assert_eq!(out.mia, 0.0);
    }

    #[test]
    fn distribution_sums_to_hundred() {
        let m: Model = init_model(&ModelConfig::default(), 8, 4).unwrap();
        let mut r = rng::stream(1, &[]);
        let x = Tensor::matrix(37, 8, (0..37 * 8).map(|_| r.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
        let d = Dataset::new(x, vec![0; 37], 4).unwrap();
        let p = prediction_distribution(&m, &d, None, None).unwrap();
        assert!((p.percent.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        let same = prediction_distribution(&m, &d, Some(&p), None).unwrap();
        assert_eq!(same.avg_diff, Some(0.0));
    }

    proptest! {
        #[test]
        fn gap_is_symmetric_and_bounded(a in proptest::array::uniform4(0.0f64..100.0), b in proptest::array::uniform4(0.0f64..100.0), c in proptest::array::uniform4(0.0f64..100.0)) {
            let (ra, rb, rc) = (rec(a), rec(b), rec(c));
            prop_assert_eq!(ra.gap_to(&rb), rb.gap_to(&ra));
            prop_assert!(ra.gap_to(&rb) >= 0.0);
            prop_assert!(ra.gap_to(&rc) <= ra.gap_to(&rb) + rb.gap_to(&rc) + 1e-9);
        }
    }
}
