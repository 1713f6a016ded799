//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use mulab::diffcore::{finite_diff_check, GradCheck, Graph, NodeId};
use mulab::losses::{ce_loss_node, cl_loss_node, combined_loss_node, ClConfig};
use mulab::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-5;

fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * (r.random::<f64>() * 2.0 - 1.0))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn one_hot(r: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
    let mut y = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let c = r.random_range(0..k);
        y.data_mut()[i * k + c] = 1.0;
    }
    y
}

/// One-hidden-layer network recorded directly on the graph:
/// `z = relu(x W1 + b1)`, `logits = z W2 + b2`.
fn mlp(g: &mut Graph<f64>, ids: &[NodeId], x: &Tensor) -> Result<(NodeId, NodeId)> {
    let x = g.constant(x.clone());
    let h = g.matmul(x, ids[0])?;
    let h = g.add_row(h, ids[1])?;
    let z = g.relu(h);
    let o = g.matmul(z, ids[2])?;
    let logits = g.add_row(o, ids[3])?;
    Ok((z, logits))
}

/// Autodiff-vs-central-difference checks of the CE, CL, combined and
/// NegGrad+ objectives on a random instance drawn from `seed`.
pub fn gradient_errors(seed: u64) -> Vec<(&'static str, GradCheck)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(2..=8);
    let d = r.random_range(3..=8);
    let k = r.random_range(2..=5);
    let h = 6;
    let tau = [0.1, 0.5, 1.0][r.random_range(0..3)];
    let lambda = r.random_range(0.1..4.0);
    let beta = r.random_range(0.5..0.99);

    let x = gaussian(&mut r, n, d, 1.0);
    let xp = gaussian(&mut r, n, d, 1.0);
    let xf = gaussian(&mut r, n, d, 1.0);
    let y = one_hot(&mut r, n, k);
    let yf = one_hot(&mut r, n, k);
    let w = gaussian(&mut r, d, k, 1.0);
    let b = gaussian(&mut r, 1, k, 0.5).into_data();
    let b = Tensor::vector(b);
    let net = vec![
        gaussian(&mut r, d, h, 1.0),
        Tensor::vector(gaussian(&mut r, 1, h, 0.5).into_data()),
        gaussian(&mut r, h, k, 1.0),
        Tensor::vector(gaussian(&mut r, 1, k, 0.5).into_data()),
    ];
    let z = gaussian(&mut r, n, d, 1.0);
    let zp = gaussian(&mut r, n, d, 1.0);

    let ce = finite_diff_check(
        |g, ids| {
            let xc = g.constant(x.clone());
            let o = g.matmul(xc, ids[0])?;
            let logits = g.add_row(o, ids[1])?;
            ce_loss_node(g, &y, logits)
        },
        &[w, b],
        GRAD_TOL,
    )
    .unwrap();
    let cl = finite_diff_check(
        |g, ids| {
            let a = g.l2_normalize_rows(ids[0])?;
            let b = g.l2_normalize_rows(ids[1])?;
            cl_loss_node(g, a, b, tau)
        },
        &[z, zp],
        GRAD_TOL,
    )
    .unwrap();
    let cfg = ClConfig { lambda, tau };
    let combined = finite_diff_check(
        |g, ids| {
            let (z1, logits) = mlp(g, ids, &x)?;
            let (z2, _) = mlp(g, ids, &xp)?;
            combined_loss_node(g, &y, logits, z1, z2, &cfg)
        },
        &net,
        GRAD_TOL,
    )
    .unwrap();
    let neggrad_plus = finite_diff_check(
        |g, ids| {
            let (_, lr) = mlp(g, ids, &x)?;
            let (_, lf) = mlp(g, ids, &xf)?;
            let retain = ce_loss_node(g, &y, lr)?;
            let forget = ce_loss_node(g, &yf, lf)?;
            let a = g.scale(retain, beta);
            let b = g.scale(forget, 1.0 - beta);
            g.sub(a, b)
        },
        &net,
        GRAD_TOL,
    )
    .unwrap();
    vec![
        ("ce", ce),
        ("cl", cl),
        ("combined", combined),
        ("neggrad_plus", neggrad_plus),
    ]
}

/// Brute-force threshold attacker: every observed retain/test confidence is
/// tried as a threshold (member iff `conf >= thr`), ascending, keeping the
/// first best balanced accuracy. Returns the forget share below it.
pub fn exhaustive_mia(retain: &[f64], test: &[f64], forget: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = retain.iter().chain(test).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut best = (-1.0, thresholds[0]);
    for &thr in &thresholds {
        let tp = retain.iter().filter(|&&c| c >= thr).count() as f64;
        let tn = test.iter().filter(|&&c| c < thr).count() as f64;
        let ba = 0.5 * (tp / retain.len() as f64 + tn / test.len() as f64);
        if ba > best.0 {
            best = (ba, thr);
        }
    }
    100.0 * forget.iter().filter(|&&c| c < best.1).count() as f64 / forget.len() as f64
}

/// Small instance with many ties: confidences on a 0.05 grid.
pub fn mia_instance(seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=8)];
    let mut draw =
        |lo: u32, n: usize| -> Vec<f64> { (0..n).map(|_| f64::from(r.random_range(lo..=20)) * 0.05).collect() };
    let retain = draw(6, sizes[0]);
    let test = draw(2, sizes[1]);
    let forget = draw(4, sizes[2]);
    (retain, test, forget)
}
