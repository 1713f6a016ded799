use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Floor of the cosine schedule.
pub const COSINE_MIN_LR: f64 = 1e-4;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Cosine annealing from `base_lr` down to [`COSINE_MIN_LR`].
    Cosine,
    /// Divide by 10 at 50% and again at 75% of training.
    Multistep,
}

/// Learning rate for `epoch` (0-based) out of `total`.
pub fn lr_schedule(kind: ScheduleKind, epoch: usize, total: usize, base_lr: f64) -> Result<f64> {
    if epoch > total {
        return Err(invalid(format!("epoch {epoch} beyond total {total}")));
    }
    if total == 0 {
        return Err(invalid("schedule needs at least one epoch"));
    }
    let frac = epoch as f64 / total as f64;
    Ok(match kind {
        ScheduleKind::Cosine => {
            COSINE_MIN_LR + 0.5 * (base_lr - COSINE_MIN_LR) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
        ScheduleKind::Multistep => {
            let passed = [0.5, 0.75].iter().filter(|&&m| frac >= m).count();
            base_lr * 0.1f64.powi(passed as i32)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(lr_schedule(ScheduleKind::Cosine, 0, 50, 0.05).unwrap(), 0.05);
        let end = lr_schedule(ScheduleKind::Cosine, 50, 50, 0.05).unwrap();
        assert!((end - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn multistep_milestones() {
        let lr = |e| lr_schedule(ScheduleKind::Multistep, e, 182, 0.1).unwrap();
        assert!((lr(100) - 0.01).abs() < 1e-15);
        assert_eq!(lr(90), 0.1);
        assert!((lr(137) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn epoch_past_total_rejected() {
        assert!(lr_schedule(ScheduleKind::Cosine, 11, 10, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_monotone_and_bounded(total in 1usize..300, base in 1e-4f64..1.0) {
            let mut prev = f64::INFINITY;
            for e in 0..=total {
                let lr = lr_schedule(ScheduleKind::Cosine, e, total, base).unwrap();
                prop_assert!(lr <= prev + 1e-15);
                prop_assert!(lr >= COSINE_MIN_LR - 1e-15 && lr <= base + 1e-15);
                prev = lr;
            }
        }
    }
}
