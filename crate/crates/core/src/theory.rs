//! Monte-Carlo estimates of the quantities in the class-separation bound:
//! class centers, the view-gap tail `R[ε]`, local Lipschitz constants,
//! `ρ^max`, the separation condition and the retain/forget `R` comparison.
//!
//! Every number here is an estimate from seeded samples, never a certified
//! bound.

use serde::{Deserialize, Serialize};

use crate::datagen::{estimate_sigma, Dataset, Split, TransformDistribution};
use crate::diffcore::Tensor;
use crate::error::{invalid, Result};
use crate::model::Model;
use crate::rng;
use crate::scalar::Scalar;

/// Anything mapping a batch of inputs to a batch of features.
pub trait FeatureMap {
    fn map(&self, x: &Tensor) -> Result<Tensor>;
}

/// A model contributes its unit-norm extractor features, the space in which
/// the contrastive term measures alignment.
impl FeatureMap for Model {
    fn map(&self, x: &Tensor) -> Result<Tensor> {
        self.features(x, true)
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> FeatureMap for F {
    fn map(&self, x: &Tensor) -> Result<Tensor> {
        self(x)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `μ_k`: mean over class-`k` samples of the mean feature of `m` views each.
pub fn class_centers<F: FeatureMap>(
    f: &F,
    data: &Dataset,
    t: &TransformDistribution,
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(invalid("class_centers needs M >= 1"));
    }
    let tag = rng::tag("center-view");
    let mut centers = Vec::with_capacity(data.num_classes);
    for k in 0..data.num_classes {
        let members = data.indices_of_class(k);
        if members.is_empty() {
            return Err(invalid(format!("class {k} has no samples")));
        }
        let mut rows = Vec::with_capacity(members.len() * m * data.input_dim());
        for &i in &members {
            for v in 0..m as u64 {
                rows.extend(t.sample_keyed(seed, &[tag, i as u64, v]).apply_row(data.inputs.row(i)));
            }
        }
        let z = f.map(&Tensor::matrix(members.len() * m, data.input_dim(), rows)?)?;
        let mut mu = vec![0.0; z.cols()];
        // Inner mean over views, then outer mean over samples.
        for s in 0..members.len() {
            let mut inner = vec![0.0; z.cols()];
            for v in 0..m {
                for (a, &b) in inner.iter_mut().zip(z.row(s * m + v)) {
                    *a += b;
                }
            }
            for (a, b) in mu.iter_mut().zip(inner) {
                *a += b / m as f64;
            }
        }
        centers.push(mu.into_iter().map(|v| v / members.len() as f64).collect());
    }
    Ok(centers)
}

/// Inputs and features of the `m` view pairs of each sample in `idx`.
///
/// Pair `j` of sample `i` is keyed by `(seed, i, j)`, so the pairs for a
/// smaller `m` are a prefix of those for a larger one.
struct ViewPairs {
    x: Tensor,
    z: Tensor,
    m: usize,
}

fn view_pairs<F: FeatureMap>(
    f: &F,
    data: &Dataset,
    idx: &[usize],
    t: &TransformDistribution,
    m: usize,
    seed: u64,
) -> Result<ViewPairs> {
    if m == 0 {
        return Err(invalid("need at least one view pair"));
    }
    let (a, b) = (rng::tag("pair-a"), rng::tag("pair-b"));
    let d = data.input_dim();
    let mut rows = Vec::with_capacity(idx.len() * m * 2 * d);
    for &i in idx {
        let x = data.inputs.row(i);
        for j in 0..m as u64 {
            rows.extend(t.sample_keyed(seed, &[a, i as u64, j]).apply_row(x));
            rows.extend(t.sample_keyed(seed, &[b, i as u64, j]).apply_row(x));
        }
    }
    let x = Tensor::matrix(idx.len() * m * 2, d, rows)?;
    let z = f.map(&x)?;
    Ok(ViewPairs { x, z, m })
}

impl ViewPairs {
    fn sup_gaps(&self) -> Vec<f64> {
        let n = self.x.rows() / (2 * self.m);
        (0..n)
            .map(|s| {
                (0..self.m)
                    .map(|j| {
                        let r = 2 * (s * self.m + j);
                        euclid(self.z.row(r), self.z.row(r + 1))
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    fn lipschitz(&self) -> Option<f64> {
        (0..self.x.rows() / 2)
            .filter_map(|p| {
                let dx = euclid(self.x.row(2 * p), self.x.row(2 * p + 1));
                (dx >= 1e-9).then(|| euclid(self.z.row(2 * p), self.z.row(2 * p + 1)) / dx)
            })
            .reduce(f64::max)
    }
}

/// Per-sample estimate of `sup ‖f(t(i)) − f(t′(i))‖` over `m` sampled pairs.
pub fn view_gaps<F: FeatureMap>(
    f: &F,
    data: &Dataset,
    idx: &[usize],
    t: &TransformDistribution,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(view_pairs(f, data, idx, t, m, seed)?.sup_gaps())
}

/// `R̂[ε]`: fraction of samples in `idx` whose view-gap estimate exceeds `ε`.
#[allow(non_snake_case)]
pub fn estimate_R<F: FeatureMap>(
    f: &F,
    data: &Dataset,
    idx: &[usize],
    t: &TransformDistribution,
    eps: f64,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be > 0"));
    }
    let gaps = view_gaps(f, data, idx, t, m, seed)?;
    Ok(tail_fraction(&gaps, eps))
}

fn tail_fraction(gaps: &[f64], eps: f64) -> f64 {
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.iter().filter(|&&g| g > eps).count() as f64 / gaps.len() as f64
}

/// Largest `‖f(x₁) − f(x₂)‖ / ‖x₁ − x₂‖` over augmented pairs; a lower
/// estimate of the local Lipschitz constant. Pairs closer than `1e-9` are
/// skipped.
pub fn estimate_lipschitz<F: FeatureMap>(
    f: &F,
    data: &Dataset,
    idx: &[usize],
    t: &TransformDistribution,
    m: usize,
    seed: u64,
) -> Result<f64> {
    view_pairs(f, data, idx, t, m, seed)?
        .lipschitz()
        .ok_or_else(|| invalid("every sampled pair was degenerate"))
}

/// Ratio estimate on explicit input pairs.
pub fn lipschitz_on_pairs<F: FeatureMap>(f: &F, x1: &Tensor, x2: &Tensor) -> Result<f64> {
    let (z1, z2) = (f.map(x1)?, f.map(x2)?);
    (0..x1.rows())
        .filter_map(|i| {
            let dx = euclid(x1.row(i), x2.row(i));
            (dx >= 1e-9).then(|| euclid(z1.row(i), z2.row(i)) / dx)
        })
        .reduce(f64::max)
        .ok_or_else(|| invalid("every pair was degenerate"))
}

/// `ρ^max = 2(1 − σ) + R / min_k P_k + σ(Lδ + 2ε)`.
pub fn rho_max<T: Scalar>(sigma: T, delta: T, eps: T, l: T, r: T, min_class_prob: T) -> Result<T> {
    if !(min_class_prob > T::zero()) {
        return Err(invalid("min class probability must be > 0"));
    }
    if !(sigma > T::zero() && sigma <= T::one()) {
        return Err(invalid("sigma must lie in (0, 1]"));
    }
    if [delta, eps, l, r].iter().any(|v| !(*v >= T::zero())) {
        return Err(invalid("delta, eps, L and R must be >= 0"));
    }
    let two = T::lit(2.0);
    Ok(two * (T::one() - sigma) + r / min_class_prob + sigma * (l * delta + two * eps))
}

/// `Err ≤ (1 − σ) + R`.
pub fn err_bound<T: Scalar>(sigma: T, r: T) -> T {
    T::one() - sigma + r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCondition {
    pub l: usize,
    pub k: usize,
    /// `μ_lᵀ μ_k`.
    pub lhs: f64,
    /// `½ min ‖μ‖² − ρ − √(2ρ)`.
    pub rhs: f64,
    pub holds: bool,
}

/// Checks `μ_lᵀμ_k < ½ min_k′ ‖μ_k′‖² − ρ − √(2ρ)` for every ordered `l ≠ k`.
pub fn separation_condition<T: Scalar>(mu: &[Vec<T>], rho: T) -> Vec<PairCondition> {
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    let min_sq = mu.iter().map(|m| dot(m, m)).fold(T::infinity(), |a, b| a.min(b));
    let rhs = T::lit(0.5) * min_sq - rho - (T::lit(2.0) * rho).sqrt();
    let mut out = Vec::new();
    for l in 0..mu.len() {
        for k in 0..mu.len() {
            if l != k {
                let lhs = dot(&mu[l], &mu[k]);
                out.push(PairCondition {
                    l,
                    k,
                    lhs: lhs.to_f64_lossy(),
                    rhs: rhs.to_f64_lossy(),
                    holds: lhs < rhs,
                });
            }
        }
    }
    out
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Check {
    pub r_r: f64,
    pub r_u: f64,
    pub eps: f64,
    pub holds: bool,
}

/// Default `ε`: median retain view gap, floored to the smallest positive
/// float so that `ε > 0` holds for constant feature maps.
pub fn default_epsilon(retain_gaps: &[f64]) -> f64 {
    median(retain_gaps).max(f64::MIN_POSITIVE)
}

/// `R̂_r[ε] ≤ R̂_u[ε]` with both subsets sharing the pair keys.
pub fn lemma1_check<F: FeatureMap>(
    f: &F,
    train: &Dataset,
    split: &Split,
    t: &TransformDistribution,
    eps: Option<f64>,
    m: usize,
    seed: u64,
) -> Result<Lemma1Check> {
    let gr = view_gaps(f, train, &split.retain_idx, t, m, seed)?;
    let gu = view_gaps(f, train, &split.forget_idx, t, m, seed)?;
    let eps = eps.unwrap_or_else(|| default_epsilon(&gr));
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be > 0"));
    }
    let (r_r, r_u) = (tail_fraction(&gr, eps), tail_fraction(&gu, eps));
    Ok(Lemma1Check {
        r_r,
        r_u,
        eps,
        holds: r_r <= r_u,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    /// View pairs per sample for `R`, `L` and the centers.
    pub pairs: usize,
    /// Pairs per sample pair in the σ̂ estimate.
    pub sigma_pairs: usize,
    pub delta: f64,
    /// Fixed ε; the retain median when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            pairs: 64,
            sigma_pairs: 4,
            delta: 1.0,
            epsilon: None,
            seed: 0,
        }
    }
}

/// Everything the theory report carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryEstimates {
    pub mu: Vec<Vec<f64>>,
    pub sigma_hat: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub l_r: f64,
    pub l_u: f64,
    pub r_r: f64,
    pub r_u: f64,
    pub min_class_prob: f64,
    pub rho_max: f64,
    pub err_bound: f64,
    pub condition_holds: Vec<PairCondition>,
    /// `‖μ_k(retain) − μ_k(forget)‖` for classes present in the forget set.
    pub center_shift: Vec<Option<f64>>,
    pub pairs: usize,
    pub seed: u64,
}

/// Estimates every quantity on `model` for the given split.
pub fn theory_report(
    model: &Model,
    train: &Dataset,
    split: &Split,
    t: &TransformDistribution,
    cfg: &TheoryConfig,
) -> Result<TheoryEstimates> {
    let retain = train.subset(&split.retain_idx);
    let forget = train.subset(&split.forget_idx);
    let pr = view_pairs(model, train, &split.retain_idx, t, cfg.pairs, cfg.seed)?;
    let pu = view_pairs(model, train, &split.forget_idx, t, cfg.pairs, cfg.seed)?;
    let (gr, gu) = (pr.sup_gaps(), pu.sup_gaps());
    let eps = cfg.epsilon.unwrap_or_else(|| default_epsilon(&gr));
    let (r_r, r_u) = (tail_fraction(&gr, eps), tail_fraction(&gu, eps));
    let l_r = pr.lipschitz().unwrap_or(0.0);
    let l_u = pu.lipschitz().unwrap_or(0.0);
    let sigma = estimate_sigma(&retain, t, cfg.delta, cfg.sigma_pairs, cfg.seed)?;
    let sigma_hat = sigma.min.max(1.0 / retain.len() as f64);
    let counts = retain.class_counts();
    let min_class_prob = *counts.iter().min().expect("K >= 2") as f64 / retain.len() as f64;
    let mu = class_centers(model, &retain, t, cfg.pairs.min(8), cfg.seed)?;
    let rho = rho_max(sigma_hat, cfg.delta, eps, l_r.max(l_u), r_r, min_class_prob)?;
    let center_shift = forget_centers(model, &forget, t, cfg)?
        .into_iter()
        .zip(&mu)
        .map(|(c, m)| c.map(|c| euclid(&c, m)))
        .collect();
    Ok(TheoryEstimates {
        condition_holds: separation_condition(&mu, rho),
        mu,
        sigma_hat,
        delta: cfg.delta,
        epsilon: eps,
        l_r,
        l_u,
        r_r,
        r_u,
        min_class_prob,
        rho_max: rho,
        err_bound: err_bound(sigma_hat, r_r),
        center_shift,
        pairs: cfg.pairs,
        seed: cfg.seed,
    })
}

fn forget_centers(
    model: &Model,
    forget: &Dataset,
    t: &TransformDistribution,
    cfg: &TheoryConfig,
) -> Result<Vec<Option<Vec<f64>>>> {
    (0..forget.num_classes)
        .map(|k| {
            let idx = forget.indices_of_class(k);
            if idx.is_empty() {
                return Ok(None);
            }
            let one = Dataset::new(forget.inputs.select_rows(&idx), vec![0; idx.len()], 1)?;
            Ok(Some(
                class_centers(model, &one, t, cfg.pairs.min(8), cfg.seed)?.remove(0),
            ))
        })
        .collect()
}
