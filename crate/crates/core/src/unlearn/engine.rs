use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::datagen::{apply_transform, one_hot, Dataset, Split};
use crate::diffcore::{lr_schedule, Graph, NodeId, OptimizerState, SgdConfig, Tensor};
use crate::error::{invalid, Error, Result};
use crate::losses::{ce_loss_node, cl_loss_node, ClConfig};
use crate::model::Model;
use crate::rng;

use super::{flops, AccessLog, EpochLog, MethodConfig, TrainConfig, UnlearnRun};

/// Per-step objective `w·CE(primary) − a·CE(forget) + λ·CL + γ·‖θ‖₁`.
/// Zero-weight terms are never recorded on the graph.
#[derive(Clone, Debug)]
pub(crate) struct Objective {
    pub ce_weight: f64,
    pub ascent: Option<f64>,
    pub cl: Option<ClConfig>,
    pub l1: f64,
    pub l1_epochs: usize,
    pub mask: Option<Vec<Vec<bool>>>,
}

impl Objective {
    pub fn ce() -> Self {
        Self {
            ce_weight: 1.0,
            ascent: None,
            cl: None,
            l1: 0.0,
            l1_epochs: 0,
            mask: None,
        }
    }
}

pub(crate) struct Outcome {
    pub model: Model,
    pub flops: u128,
    pub loss_flops: u128,
    pub log: Vec<EpochLog>,
    pub access: AccessLog,
}

impl Outcome {
    pub fn into_run(self, method: MethodConfig, seed: u64, initial_model: Model, split: &Split) -> UnlearnRun {
        UnlearnRun {
            method,
            seed,
            initial_model,
            final_model: self.model,
            split: split.clone(),
            flops: self.flops,
            loss_flops: self.loss_flops,
            per_epoch_log: self.log,
            access_log: self.access,
        }
    }
}

/// Endless stream of forget batches, reshuffled each time the set is exhausted.
struct Cycler<'a> {
    items: &'a [usize],
    order: Vec<usize>,
    pos: usize,
    round: u64,
    seed: u64,
}

impl<'a> Cycler<'a> {
    fn new(items: &'a [usize], seed: u64) -> Self {
        Self {
            items,
            order: Vec::new(),
            pos: 0,
            round: 0,
            seed,
        }
    }

    fn next(&mut self, n: usize) -> Vec<usize> {
        let n = n.min(self.items.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order = self.items.to_vec();
                self.order
                    .shuffle(&mut rng::stream(self.seed, &[rng::tag("forget-shuffle"), self.round]));
                self.round += 1;
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn weighted(g: &mut Graph, node: NodeId, w: f64) -> NodeId {
    if w == 1.0 {
        node
    } else {
        g.scale(node, w)
    }
}

fn view(cfg: &TrainConfig, raw: &Tensor, which: &str, epoch: usize, step: usize) -> Tensor {
    let dist = if which == "view-cl" {
        &cfg.transform_cl
    } else {
        &cfg.transform_ce
    };
    let t = dist.sample_keyed(cfg.seed, &[rng::tag(which), epoch as u64, step as u64]);
    apply_transform(&t, raw)
}

pub(crate) fn run(
    model: Model,
    train: &Dataset,
    relabel: Option<&[usize]>,
    primary: &[usize],
    obj: &Objective,
    cfg: &TrainConfig,
) -> Result<Outcome> {
    run_with(model, train, relabel, primary, None, obj, cfg)
}

/// The shared training loop. `forget` supplies batches for the ascent term.
pub(crate) fn run_with(
    mut model: Model,
    train: &Dataset,
    relabel: Option<&[usize]>,
    primary: &[usize],
    forget: Option<&[usize]>,
    obj: &Objective,
    cfg: &TrainConfig,
) -> Result<Outcome> {
    cfg.validate()?;
    if primary.is_empty() {
        return Err(invalid("no training samples"));
    }
    let labels = relabel.unwrap_or(&train.class_of);
    let k = train.num_classes;
    let sgd = SgdConfig {
        learning_rate: cfg.base_lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
    };
    let mut opt = OptimizerState::new(sgd, &model.snapshot_params())?;
    let mut cycler = forget.map(|f| Cycler::new(f, cfg.seed));
    let mut out = Outcome {
        model: model.clone(),
        flops: 0,
        loss_flops: 0,
        log: Vec::with_capacity(cfg.epochs),
        access: AccessLog::default(),
    };
    let num_params = model.num_params();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg.schedule, epoch, cfg.epochs, cfg.base_lr)?;
        opt.set_learning_rate(lr);
        let mut order = primary.to_vec();
        order.shuffle(&mut rng::stream(cfg.seed, &[rng::tag("shuffle"), epoch as u64]));
        let mut total = 0.0;
        let mut steps = 0usize;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let n = batch.len();
            out.access.record(batch);
            let raw = train.inputs.select_rows(batch);
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let y = one_hot(&ys, k);

            let mut g = Graph::new(0);
            let p = model.register(&mut g);
            let x = g.constant(view(cfg, &raw, "view-ce", epoch, step));
            let z = model.features_node(&mut g, &p, x)?;
            let logits = model.logits_node(&mut g, &p, z)?;
            let ce = ce_loss_node(&mut g, &y, logits)?;
            let mut loss = weighted(&mut g, ce, obj.ce_weight);
            out.flops += flops::train_pass(flops::extractor_forward(&model, n) + flops::head_forward(&model, n));
            out.loss_flops += flops::train_pass(flops::ce_loss(n, k));

            if let Some(cl) = &obj.cl {
                let x2 = g.constant(view(cfg, &raw, "view-cl", epoch, step));
                let z2 = model.features_node(&mut g, &p, x2)?;
                let pz = model.projection_node(&mut g, &p, z)?;
                let pz2 = model.projection_node(&mut g, &p, z2)?;
                let d = g.value(pz).cols();
                let zn = g.l2_normalize_rows(pz)?;
                let zn2 = g.l2_normalize_rows(pz2)?;
                let l = cl_loss_node(&mut g, zn, zn2, cl.tau)?;
                let l = weighted(&mut g, l, cl.lambda);
                loss = g.add(loss, l)?;
                out.flops +=
                    flops::train_pass(flops::extractor_forward(&model, n) + 2 * flops::projection_forward(&model, n));
                out.loss_flops += flops::train_pass(flops::cl_loss(n, d));
            }

            if let (Some(a), Some(c)) = (obj.ascent, cycler.as_mut()) {
                let fb = c.next(cfg.batch_size);
                let nf = fb.len();
                out.access.record(&fb);
                let fys: Vec<usize> = fb.iter().map(|&i| labels[i]).collect();
                let xf = g.constant(view(cfg, &train.inputs.select_rows(&fb), "view-forget", epoch, step));
                let zf = model.features_node(&mut g, &p, xf)?;
                let lf = model.logits_node(&mut g, &p, zf)?;
                let cef = ce_loss_node(&mut g, &one_hot(&fys, k), lf)?;
                let cef = g.scale(cef, a);
                loss = g.sub(loss, cef)?;
                out.flops += flops::train_pass(flops::extractor_forward(&model, nf) + flops::head_forward(&model, nf));
                out.loss_flops += flops::train_pass(flops::ce_loss(nf, k));
            }

            if obj.l1 > 0.0 && epoch < obj.l1_epochs {
                let mut norm = None;
                for &id in &p.ids {
                    let a = g.abs(id);
                    let s = g.sum(a);
                    norm = Some(match norm {
                        None => s,
                        Some(acc) => g.add(acc, s)?,
                    });
                }
                let pen = g.scale(norm.expect("model has parameters"), obj.l1);
                loss = g.add(loss, pen)?;
                out.loss_flops += flops::train_pass(flops::l1_penalty(num_params));
            }

            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Domain {
                    op: "train",
                    detail: format!("loss became {value} at epoch {epoch}"),
                });
            }
            let grads = g.backward(loss)?;
            let mut params = model.snapshot_params();
            let gs: Vec<Tensor> = p
                .ids
                .iter()
                .zip(&params)
                .map(|(&id, t)| grads.get_or_zeros(id, t.shape()))
                .collect();
            opt.step(&mut params, &gs, obj.mask.as_deref())?;
            model.load_params(params)?;
            total += value;
            steps += 1;
        }
        out.log.push(EpochLog {
            epoch,
            lr,
            mean_loss: total / steps as f64,
        });
    }
    out.model = model;
    Ok(out)
}

/// Top-`threshold` fraction of parameter coordinates by `|∇CE(θ_o; forget)|`.
///
/// Ties are broken toward the earlier coordinate in [`Model::params`] order.
/// Also returns the FLOPs of the gradient pass.
pub fn saliency_mask(model: &Model, forget: &Dataset, threshold: f64) -> Result<(Vec<Vec<bool>>, u128)> {
    if forget.is_empty() {
        return Err(invalid("saliency needs a forget set"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid(format!("mask threshold {threshold} outside (0,1]")));
    }
    let mut g = Graph::new(0);
    let p = model.register(&mut g);
    let x = g.constant(forget.inputs.clone());
    let z = model.features_node(&mut g, &p, x)?;
    let logits = model.logits_node(&mut g, &p, z)?;
    let loss = ce_loss_node(&mut g, &forget.labels, logits)?;
    let grads = g.backward(loss)?;
    let params = model.params();
    let mut coords = Vec::new();
    for (t, (&id, param)) in p.ids.iter().zip(&params).enumerate() {
        let gt = grads.get_or_zeros(id, param.shape());
        coords.extend(gt.data().iter().enumerate().map(|(j, v)| (v.abs(), t, j)));
    }
    coords.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let keep = (threshold * coords.len() as f64).round() as usize;
    let mut mask: Vec<Vec<bool>> = params.iter().map(|t| vec![false; t.numel()]).collect();
    for &(_, t, j) in &coords[..keep] {
        mask[t][j] = true;
    }
    let n = forget.len();
    let cost = flops::train_pass(flops::extractor_forward(model, n) + flops::head_forward(model, n));
    Ok((mask, cost))
}

/// Training labels with each forget sample moved to a uniformly drawn wrong class.
pub fn salun_relabel(train: &Dataset, forget_idx: &[usize], seed: u64) -> Vec<usize> {
    let k = train.num_classes;
    let mut labels = train.class_of.clone();
    let mut r = rng::stream(seed, &[rng::tag("relabel")]);
    for &i in forget_idx {
        labels[i] = (labels[i] + r.random_range(1..k)) % k;
    }
    labels
}
