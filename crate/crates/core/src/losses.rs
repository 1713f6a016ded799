//! Contrastive (InfoNCE), cross-entropy and combined objectives.
//!
//! Each loss has a plain evaluator over [`Tensor`]s and a graph builder that
//! records the same computation for back-propagation. The InfoNCE denominator
//! runs over every cross-view candidate `j = 1..N`, including the positive,
//! and no same-view negatives are added.

use serde::{Deserialize, Serialize};

use crate::diffcore::{log_sum_exp, Graph, NodeId, Tensor};
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Temperature and weight of the contrastive term.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClConfig {
    pub tau: f64,
    pub lambda: f64,
}

impl Default for ClConfig {
    fn default() -> Self {
        Self { tau: 0.1, lambda: 1.0 }
    }
}

impl ClConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.lambda >= 0.0) {
            return Err(invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature {tau} must be > 0")));
    }
    Ok(())
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// InfoNCE loss of anchor `z_n` against the rows of `others`, whose row `n`
/// is the positive.
pub fn info_nce_anchor<T: Scalar>(z_n: &[T], others: &Tensor<T>, n: usize, tau: f64) -> Result<T> {
    check_tau(tau)?;
    if n >= others.rows() {
        return Err(Error::OutOfRange {
            index: n,
            len: others.rows(),
        });
    }
    if others.cols() != z_n.len() {
        return Err(Error::Shape {
            op: "info_nce_anchor",
            lhs: vec![z_n.len()],
            rhs: others.shape().to_vec(),
        });
    }
    let t = T::lit(tau);
    let logits: Vec<T> = (0..others.rows()).map(|j| dot(z_n, others.row(j)) / t).collect();
    Ok(log_sum_exp(&logits) - logits[n])
}

/// Symmetric contrastive loss `(1/2N) Σ_n [l(z_n) + l(z'_n)]`.
pub fn cl_loss<T: Scalar>(z: &Tensor<T>, zp: &Tensor<T>, tau: f64) -> Result<T> {
    same_shape("cl_loss", z, zp)?;
    let n = z.rows();
    if n == 0 {
        return Ok(T::zero());
    }
    let mut total = T::zero();
    for i in 0..n {
        total = total + info_nce_anchor(z.row(i), zp, i, tau)?;
        total = total + info_nce_anchor(zp.row(i), z, i, tau)?;
    }
    Ok(total / T::lit(2.0 * n as f64))
}

/// Cross-entropy of probability rows against one-hot targets, as written:
/// `−(1/N) Σ_n Σ_k y_nk log ŷ_nk`.
pub fn ce_loss_from_probs<T: Scalar>(y: &Tensor<T>, probs: &Tensor<T>) -> Result<T> {
    same_shape("ce_loss", y, probs)?;
    let n = y.rows();
    let mut total = T::zero();
    for (&yk, &pk) in y.data().iter().zip(probs.data()) {
        if yk != T::zero() {
            total = total + yk * pk.ln();
        }
    }
    Ok(-total / T::lit(n.max(1) as f64))
}

/// Cross-entropy from logits: mean negative log-softmax at the target.
pub fn ce_loss<T: Scalar>(y: &Tensor<T>, logits: &Tensor<T>) -> Result<T> {
    same_shape("ce_loss", y, logits)?;
    let ls = logits.log_softmax_rows()?;
    let total: T = y
        .data()
        .iter()
        .zip(ls.data())
        .map(|(&yk, &l)| if yk != T::zero() { yk * l } else { T::zero() })
        .sum();
    Ok(-total / T::lit(y.rows().max(1) as f64))
}

/// `ce + λ·cl`, with `z`, `zp` already row-normalised.
pub fn combined_loss<T: Scalar>(
    y: &Tensor<T>,
    logits: &Tensor<T>,
    z: &Tensor<T>,
    zp: &Tensor<T>,
    cfg: &ClConfig,
) -> Result<T> {
    cfg.validate()?;
    let ce = ce_loss(y, logits)?;
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    Ok(ce + T::lit(cfg.lambda) * cl_loss(z, zp, cfg.tau)?)
}

/// Records cross-entropy of `logits` against the constant one-hot `y`.
pub fn ce_loss_node<T: Scalar>(g: &mut Graph<T>, y: &Tensor<T>, logits: NodeId) -> Result<NodeId> {
    same_shape("ce_loss", y, g.value(logits))?;
    let n = y.rows().max(1);
    let targets = g.constant(y.clone());
    let ls = g.log_softmax_rows(logits)?;
    let picked = g.mul_elem(ls, targets)?;
    let total = g.sum(picked);
    Ok(g.scale(total, T::lit(-1.0 / n as f64)))
}

/// Records the symmetric contrastive loss over normalised views.
pub fn cl_loss_node<T: Scalar>(g: &mut Graph<T>, z: NodeId, zp: NodeId, tau: f64) -> Result<NodeId> {
    check_tau(tau)?;
    same_shape("cl_loss", g.value(z), g.value(zp))?;
    let n = g.value(z).rows();
    let mut eye = Tensor::zeros(&[n, n]);
    for i in 0..n {
        eye.data_mut()[i * n + i] = T::one();
    }
    let eye = g.constant(eye);
    let zp_t = g.transpose(zp)?;
    let sim = g.matmul(z, zp_t)?;
    let logits = g.scale(sim, T::lit(1.0 / tau));
    let forward = g.log_softmax_rows(logits)?;
    let logits_t = g.transpose(logits)?;
    let backward = g.log_softmax_rows(logits_t)?;
    let pos_f = g.mul_elem(forward, eye)?;
    let pos_b = g.mul_elem(backward, eye)?;
    let sf = g.sum(pos_f);
    let sb = g.sum(pos_b);
    let both = g.add(sf, sb)?;
    Ok(g.scale(both, T::lit(-1.0 / (2.0 * n.max(1) as f64))))
}

/// Records `ce + λ·cl`; raw features are normalised inside the graph.
pub fn combined_loss_node<T: Scalar>(
    g: &mut Graph<T>,
    y: &Tensor<T>,
    logits: NodeId,
    z_raw: NodeId,
    zp_raw: NodeId,
    cfg: &ClConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let ce = ce_loss_node(g, y, logits)?;
    if cfg.lambda == 0.0 {
        return Ok(ce);
    }
    let z = g.l2_normalize_rows(z_raw)?;
    let zp = g.l2_normalize_rows(zp_raw)?;
    let cl = cl_loss_node(g, z, zp, cfg.tau)?;
    let weighted = g.scale(cl, T::lit(cfg.lambda));
    g.add(ce, weighted)
}
