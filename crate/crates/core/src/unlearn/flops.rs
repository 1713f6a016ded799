//! Analytic FLOP counts for dense-layer passes and loss terms.
//!
//! A dense layer on `n` rows costs `2·in·out·n` for the product, `n·out` for
//! the bias and another `n·out` when followed by ReLU. Backward costs twice
//! the forward. Loss terms are tallied separately so that method comparisons
//! reflect model passes.

use crate::model::{Dense, Model};

fn dense(layer: &Dense, n: usize, relu: bool) -> u128 {
    let (i, o, n) = (layer.in_dim() as u128, layer.out_dim() as u128, n as u128);
    2 * i * o * n + n * o + if relu { n * o } else { 0 }
}

/// Forward FLOPs of the extractor on `n` rows.
pub fn extractor_forward(model: &Model, n: usize) -> u128 {
    model.extractor.iter().map(|l| dense(l, n, true)).sum()
}

pub fn head_forward(model: &Model, n: usize) -> u128 {
    dense(&model.head, n, false)
}

pub fn projection_forward(model: &Model, n: usize) -> u128 {
    model
        .projection
        .as_ref()
        .map_or(0, |[a, b]| dense(a, n, true) + dense(b, n, false))
}

/// Forward plus backward.
pub fn train_pass(forward: u128) -> u128 {
    3 * forward
}

pub fn ce_loss(n: usize, k: usize) -> u128 {
    // log-softmax (max, sub, exp, sum, log, sub) plus the one-hot product.
    6 * (n * k) as u128
}

pub fn cl_loss(n: usize, d: usize) -> u128 {
    let (n, d) = (n as u128, d as u128);
    // Normalising both views, the N×N similarity and two log-softmaxes.
    2 * 3 * n * d + 2 * n * n * d + 2 * 6 * n * n
}

pub fn l1_penalty(num_params: usize) -> u128 {
    2 * num_params as u128
}
