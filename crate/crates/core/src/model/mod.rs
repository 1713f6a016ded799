//! MLP feature extractor `f` with a linear classifier head `h`, and an
//! optional two-layer projection head used only by the contrastive term.

mod checkpoint;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scalar::Scalar;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Fully connected layer computing `x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn forward(&self, x: &Tensor<T>, relu: bool) -> Result<Tensor<T>> {
        let y = x.matmul(&self.weight)?.add_row(&self.bias)?;
        Ok(if relu { y.relu() } else { y })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// `(hidden, out)` widths of the projection head, if any.
    #[serde(default)]
    pub projection: Option<(usize, usize)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64, 64],
            repr_dim: 16,
            init_scale: 1.0,
            seed: 0,
            projection: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repr_dim < 2 {
            return Err(invalid("repr_dim must be >= 2"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(invalid("hidden dims must be positive"));
        }
        if let Some((h, o)) = self.projection {
            if h == 0 || o == 0 {
                return Err(invalid("projection dims must be positive"));
            }
        }
        if !(self.init_scale >= 0.0) {
            return Err(invalid("init_scale must be >= 0"));
        }
        Ok(())
    }
}

/// Extractor layers (all ReLU), linear head, optional projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f64> {
    pub extractor: Vec<Dense<T>>,
    pub head: Dense<T>,
    pub projection: Option<[Dense<T>; 2]>,
}

/// Graph leaves for every parameter of a [`Model`], in [`Model::params`] order.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    pub ids: Vec<NodeId>,
    n_extractor: usize,
}

fn dense_init<T: Scalar>(fan_in: usize, fan_out: usize, scale: f64, r: &mut rng::Rng) -> Dense<T> {
    // Uniform(-b, b) with b = sqrt(6 / fan_in) has std sqrt(2 / fan_in).
    let bound = scale * (6.0 / fan_in as f64).sqrt();
    let w = (0..fan_in * fan_out)
        .map(|_| T::lit(bound * (2.0 * r.random::<f64>() - 1.0)))
        .collect();
    Dense {
        weight: Tensor::new(vec![fan_in, fan_out], w).expect("shape"),
        bias: Tensor::zeros(&[fan_out]),
    }
}

/// Fresh model for `input_dim → hidden… → repr_dim → num_classes`.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, input_dim: usize, num_classes: usize) -> Result<Model<T>> {
    cfg.validate()?;
    if input_dim == 0 || num_classes < 2 {
        return Err(invalid("model needs input_dim >= 1 and K >= 2"));
    }
    let mut r = rng::stream(cfg.seed, &[rng::tag("init")]);
    let mut dims = vec![input_dim];
    dims.extend(&cfg.hidden_dims);
    dims.push(cfg.repr_dim);
    let extractor = dims
        .windows(2)
        .map(|w| dense_init(w[0], w[1], cfg.init_scale, &mut r))
        .collect();
    let head = dense_init(cfg.repr_dim, num_classes, cfg.init_scale, &mut r);
    let projection = cfg.projection.map(|(h, o)| {
        [
            dense_init(cfg.repr_dim, h, cfg.init_scale, &mut r),
            dense_init(h, o, cfg.init_scale, &mut r),
        ]
    });
    Ok(Model {
        extractor,
        head,
        projection,
    })
}

impl<T: Scalar> Model<T> {
    pub fn input_dim(&self) -> usize {
        self.extractor[0].in_dim()
    }

    pub fn repr_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    /// Layers addressable by [`Model::negate_layer`]: extractor layers, then the head.
    pub fn num_layers(&self) -> usize {
        self.extractor.len() + 1
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.extractor
            .iter()
            .chain(std::iter::once(&self.head))
            .chain(self.projection.iter().flatten())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.extractor
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .chain(self.projection.iter_mut().flatten())
    }

    /// Parameter tensors: weight then bias per layer, extractor → head → projection.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.extractor.len() {
            names.push(format!("extractor.{i}.weight"));
            names.push(format!("extractor.{i}.bias"));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        if self.projection.is_some() {
            for i in 0..2 {
                names.push(format!("projection.{i}.weight"));
                names.push(format!("projection.{i}.bias"));
            }
        }
        names
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Copies out every parameter tensor.
    pub fn snapshot_params(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().cloned().collect()
    }

    pub fn load_params(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(invalid("parameter count mismatch"));
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::Shape {
                    op: "load_params",
                    lhs: slot.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            **slot = v;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "features",
                lhs: x.shape().to_vec(),
                rhs: vec![x.rows(), self.input_dim()],
            });
        }
        Ok(())
    }

    /// Extractor output `Z = f(X)`; `normalized` rescales rows to unit norm.
    pub fn features(&self, x: &Tensor<T>, normalized: bool) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.extractor {
            h = layer.forward(&h, true)?;
        }
        if normalized {
            h = h.l2_normalize_rows()?;
        }
        Ok(h)
    }

    /// Features as seen by the contrastive term: projected (if configured) and normalised.
    pub fn contrastive_features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut z = self.features(x, false)?;
        if let Some([p1, p2]) = &self.projection {
            z = p2.forward(&p1.forward(&z, true)?, false)?;
        }
        z.l2_normalize_rows()
    }

    pub fn logits(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if z.shape().len() != 2 || z.cols() != self.repr_dim() {
            return Err(Error::Shape {
                op: "logits",
                lhs: z.shape().to_vec(),
                rhs: vec![z.rows(), self.repr_dim()],
            });
        }
        self.head.forward(z, false)
    }

    pub fn forward_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.logits(&self.features(x, false)?)
    }

    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_logits(x)?.softmax_rows()
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.forward_logits(x)?.argmax_rows())
    }

    /// Copy with layer `index`'s weight negated (bias untouched).
    pub fn negate_layer(&self, index: usize) -> Result<Model<T>> {
        if index >= self.num_layers() {
            return Err(Error::OutOfRange {
                index,
                len: self.num_layers(),
            });
        }
        let mut out = self.clone();
        let layer = if index < out.extractor.len() {
            &mut out.extractor[index]
        } else {
            &mut out.head
        };
        layer.weight = layer.weight.map(|w| -w);
        Ok(out)
    }

    /// Adds every parameter to `g` as a trainable leaf.
    pub fn register(&self, g: &mut Graph<T>) -> ParamNodes {
        ParamNodes {
            ids: self.params().into_iter().map(|p| g.param(p.clone())).collect(),
            n_extractor: self.extractor.len(),
        }
    }

    fn dense_node(g: &mut Graph<T>, x: NodeId, w: NodeId, b: NodeId, relu: bool) -> Result<NodeId> {
        let y = g.matmul(x, w)?;
        let y = g.add_row(y, b)?;
        Ok(if relu { g.relu(y) } else { y })
    }

    /// Records `f(x)` on the graph.
    pub fn features_node(&self, g: &mut Graph<T>, p: &ParamNodes, x: NodeId) -> Result<NodeId> {
        self.check_input(g.value(x))?;
        let mut h = x;
        for i in 0..p.n_extractor {
            h = Self::dense_node(g, h, p.ids[2 * i], p.ids[2 * i + 1], true)?;
        }
        Ok(h)
    }

    /// Records `h(z)` on the graph.
    pub fn logits_node(&self, g: &mut Graph<T>, p: &ParamNodes, z: NodeId) -> Result<NodeId> {
        let base = 2 * p.n_extractor;
        Self::dense_node(g, z, p.ids[base], p.ids[base + 1], false)
    }

    /// Records the projection head on `z`, or returns `z` when there is none.
    pub fn projection_node(&self, g: &mut Graph<T>, p: &ParamNodes, z: NodeId) -> Result<NodeId> {
        if self.projection.is_none() {
            return Ok(z);
        }
        let base = 2 * p.n_extractor + 2;
        let h = Self::dense_node(g, z, p.ids[base], p.ids[base + 1], true)?;
        Self::dense_node(g, h, p.ids[base + 2], p.ids[base + 3], false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(seed: u64) -> ModelConfig {
        ModelConfig {
            seed,
            ..ModelConfig::default()
        }
    }

    fn batch(seed: u64, n: usize, d: usize) -> Tensor {
        let mut r = rng::stream(seed, &[]);
        Tensor::matrix(n, d, (0..n * d).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a: Model = init_model(&cfg(3), 8, 4).unwrap();
        let b: Model = init_model(&cfg(3), 8, 4).unwrap();
        assert_eq!(a, b);
        let c: Model = init_model(&cfg(4), 8, 4).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.param_names().len(), a.params().len());
    }

    #[test]
    fn zero_scale_gives_zero_weights() {
        let m: Model = init_model(
            &ModelConfig {
                init_scale: 0.0,
                ..cfg(1)
            },
            8,
            4,
        )
        .unwrap();
        assert!(m.params().iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
        let z = m.features(&batch(1, 5, 8), true).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.predict(&batch(2, 5, 8)).unwrap(), vec![0; 5]);
    }

    #[test]
    fn kaiming_std_matches() {
        let c = ModelConfig {
            hidden_dims: vec![400],
            init_scale: 1.5,
            ..cfg(7)
        };
        let m: Model = init_model(&c, 100, 2).unwrap();
        let w = m.extractor[0].weight.data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0f64 / 100.0).sqrt() * 1.5;
        assert!((std - want).abs() / want < 0.1, "{std} vs {want}");
    }

    #[test]
    fn identity_layer_is_proportional() {
        let eye = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let m = Model {
            extractor: vec![Dense {
                weight: eye.clone(),
                bias: Tensor::zeros(&[2]),
            }],
            head: Dense {
                weight: eye,
                bias: Tensor::zeros(&[2]),
            },
            projection: None,
        };
        let x = Tensor::from_rows(&[[0.5, 2.0], [3.0, 1.0]]).unwrap();
        assert_eq!(m.features(&x, false).unwrap(), x);
        assert_eq!(m.predict(&x).unwrap(), vec![1, 0]);
    }

    #[test]
    fn normalized_features_have_unit_rows() {
        let m: Model = init_model(&cfg(5), 8, 4).unwrap();
        let z = m.features(&batch(9, 32, 8), true).unwrap();
        for i in 0..z.rows() {
            let n = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let m: Model = init_model(&cfg(5), 8, 4).unwrap();
        assert!(m.features(&batch(1, 3, 7), false).is_err());
        assert!(m.logits(&Tensor::zeros(&[3, 5])).is_err());
    }

    #[test]
    fn negation_is_an_involution() {
        let m: Model = init_model(&cfg(2), 8, 4).unwrap();
        let twice = m.negate_layer(0).unwrap().negate_layer(0).unwrap();
        assert_eq!(twice, m);
        assert_ne!(m.negate_layer(0).unwrap(), m);
        assert_eq!(m.negate_layer(0).unwrap().extractor[0].bias, m.extractor[0].bias);
        assert!(m.negate_layer(m.num_layers()).is_err());
        let zero: Model = init_model(
            &ModelConfig {
                init_scale: 0.0,
                ..cfg(1)
            },
            8,
            4,
        )
        .unwrap();
        assert_eq!(
            zero.negate_layer(1).unwrap().extractor[1].weight.data(),
            zero.extractor[1].weight.data()
        );
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let c = ModelConfig {
            projection: Some((16, 8)),
            ..cfg(8)
        };
        let m: Model = init_model(&c, 8, 4).unwrap();
        let x = batch(3, 6, 8);
        let mut g = Graph::new(0);
        let p = m.register(&mut g);
        let xi = g.constant(x.clone());
        let z = m.features_node(&mut g, &p, xi).unwrap();
        let l = m.logits_node(&mut g, &p, z).unwrap();
        let pr = m.projection_node(&mut g, &p, z).unwrap();
        let pn = g.l2_normalize_rows(pr).unwrap();
        assert_eq!(g.value(l), &m.forward_logits(&x).unwrap());
        assert_eq!(g.value(pn), &m.contrastive_features(&x).unwrap());
    }

    #[test]
    fn generic_over_single_precision() {
        let m: Model<f32> = init_model(&cfg(1), 8, 4).unwrap();
        let x: Tensor<f32> = batch(1, 4, 8).cast();
        assert_eq!(m.predict(&x).unwrap().len(), 4);
    }

    proptest! {
        #[test]
        fn predictions_ignore_logit_shift_and_scale(seed in 0u64..100, c in -5.0f64..5.0, s in 0.1f64..10.0) {
            let m: Model = init_model(&cfg(seed), 8, 4).unwrap();
            let x = batch(seed + 1, 16, 8);
            let logits = m.forward_logits(&x).unwrap();
            let base = logits.argmax_rows();
            prop_assert_eq!(logits.map(|v| v * s).argmax_rows(), base.clone());
            prop_assert_eq!(logits.map(|v| v + c).argmax_rows(), base);
        }
    }
}
