use crate::error::Result;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Step used by the central-difference oracle.
pub const FD_STEP: f64 = 1e-6;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `‖g_ad − g_fd‖₂ / ‖g_fd‖₂` over all coordinates.
    pub rel_err: f64,
    /// Worst single coordinate, `|g_ad − g_fd| / |g_fd|`. Dominated by
    /// rounding in the difference quotient when `|g_fd|` is tiny.
    pub max_coord_err: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tol
    }
}

/// Compares reverse-mode gradients with central finite differences.
///
/// `build` receives a fresh graph and one leaf per entry of `params`, and
/// returns the scalar loss node. The central quotient carries an absolute
/// rounding error near `ε·|f| / h`, so the pass criterion is the relative
/// error of the whole gradient vector; the worst coordinate is reported too.
pub fn finite_diff_check<F>(build: F, params: &[Tensor<f64>], tol: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(0);
        let ids: Vec<_> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss).item()
    };

    let mut g = Graph::new(0);
    let ids: Vec<_> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut max_coord_err = 0.0f64;
    let (mut diff_sq, mut ref_sq) = (0.0f64, 0.0f64);
    for (pi, id) in ids.iter().enumerate() {
        let ad = grads.get_or_zeros(*id, params[pi].shape());
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + FD_STEP;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - FD_STEP;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let diff = ad.data()[j] - fd;
            max_coord_err = max_coord_err.max(diff.abs() / (fd.abs() + 1e-12));
            diff_sq += diff * diff;
            ref_sq += fd * fd;
        }
    }
    Ok(GradCheck {
        rel_err: diff_sq.sqrt() / (ref_sq.sqrt() + 1e-12),
        max_coord_err,
        tol,
    })
}
