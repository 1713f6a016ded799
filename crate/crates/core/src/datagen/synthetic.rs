use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Result};
use crate::rng;

/// Where class centers sit in input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CenterLayout {
    /// Evenly spaced on a circle in the plane of coordinates 0 and 1, so each
    /// class has exactly two nearest neighbours (the adjacent classes).
    Ring {
        radius: f64,
    },
    Explicit {
        centers: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub centers: CenterLayout,
    pub per_class_std: f64,
    /// Training samples per class.
    pub samples_per_class: usize,
    /// Held-out test samples per class, as a fraction of `samples_per_class`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The 4-class ring benchmark: 8-d inputs, 200 training samples per class.
    pub fn ring_benchmark(seed: u64) -> Self {
        Self {
            num_classes: 4,
            input_dim: 8,
            centers: CenterLayout::Ring { radius: 0.5 },
            per_class_std: 0.3,
            samples_per_class: 200,
            test_fraction: 0.25,
            seed,
        }
    }

    pub fn test_per_class(&self) -> usize {
        ((self.samples_per_class as f64 * self.test_fraction).round() as usize).max(1)
    }

    /// Resolved `K × input_dim` center matrix.
    pub fn center_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.num_classes;
        match &self.centers {
            CenterLayout::Ring { radius } => {
                if self.input_dim < 2 {
                    return Err(invalid("ring layout needs input_dim >= 2"));
                }
                if !(*radius > 0.0) {
                    return Err(invalid("ring radius must be positive"));
                }
                Ok((0..k)
                    .map(|c| {
                        let a = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                        let mut v = vec![0.0; self.input_dim];
                        v[0] = radius * a.cos();
                        v[1] = radius * a.sin();
                        v
                    })
                    .collect())
            }
            CenterLayout::Explicit { centers } => {
                if centers.len() != k || centers.iter().any(|c| c.len() != self.input_dim) {
                    return Err(invalid(format!("explicit centers must be {k} x {}", self.input_dim)));
                }
                Ok(centers.clone())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid(format!("need K >= 2, got {}", self.num_classes)));
        }
        if self.input_dim == 0 {
            return Err(invalid("input_dim must be positive"));
        }
        if self.samples_per_class < 4 {
            return Err(invalid("samples_per_class must be >= 4"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction must lie in (0,1)"));
        }
        if !(self.per_class_std >= 0.0) {
            return Err(invalid("per_class_std must be >= 0"));
        }
        let centers = self.center_matrix()?;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i] == centers[j] {
                    return Err(invalid(format!("centers {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }
}

/// Labelled samples. Rows of `inputs` and `labels` align with `class_of`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    /// One-hot rows over `num_classes`.
    pub labels: Tensor,
    pub class_of: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, class_of: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != class_of.len() {
            return Err(invalid("inputs and labels disagree in length"));
        }
        if let Some(&bad) = class_of.iter().find(|&&c| c >= num_classes) {
            return Err(invalid(format!("label {bad} out of range for K={num_classes}")));
        }
        let labels = one_hot(&class_of, num_classes);
        Ok(Self {
            inputs,
            labels,
            class_of,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: self.labels.select_rows(idx),
            class_of: idx.iter().map(|&i| self.class_of[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &k in &self.class_of {
            c[k] += 1;
        }
        c
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.class_of[i] == class).collect()
    }
}

pub fn one_hot(class_of: &[usize], k: usize) -> Tensor {
    let mut t = Tensor::zeros(&[class_of.len(), k]);
    for (i, &c) in class_of.iter().enumerate() {
        t.row_mut(i)[c] = 1.0;
    }
    t
}

/// Draws `(train, test)` i.i.d. Gaussian around the class centers.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let centers = spec.center_matrix()?;
    let mut r = rng::stream(spec.seed, &[rng::tag("synthetic")]);
    let mut draw = |count: usize| -> (Vec<f64>, Vec<usize>) {
        let mut xs = Vec::with_capacity(count * spec.num_classes * spec.input_dim);
        let mut ys = Vec::with_capacity(count * spec.num_classes);
        for (k, center) in centers.iter().enumerate() {
            for _ in 0..count {
                for &c in center {
                    let z: f64 = StandardNormal.sample(&mut r);
                    xs.push(c + spec.per_class_std * z);
                }
                ys.push(k);
            }
        }
        (xs, ys)
    };
    let (train_x, train_y) = draw(spec.samples_per_class);
    let (test_x, test_y) = draw(spec.test_per_class());
    let d = spec.input_dim;
    let train = Dataset::new(Tensor::matrix(train_y.len(), d, train_x)?, train_y, spec.num_classes)?;
    let test = Dataset::new(Tensor::matrix(test_y.len(), d, test_x)?, test_y, spec.num_classes)?;
    Ok((train, test))
}
