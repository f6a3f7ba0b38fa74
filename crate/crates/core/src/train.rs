//! Optimizers and the mini-batch loop shared by every training procedure.
//!
//! A batch gradient is the mean of per-utterance gradients, accumulated in
//! batch order. Epoch order is a pure function of `(seed, epoch)`, so a run
//! resumed at epoch `k` replays the same batches as an uninterrupted one.

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::aed::{aed_forward, aed_loss_tape, AedDims, AedParams, AedVars};
use crate::autodiff::{Tape, Tensor, Var};
use crate::config::{OptimizerKind, TrainConfig};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamSet};

/// `p -= lr * g` for every trainable tensor holding a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step(&self, params: &mut ParamSet, trainable: &dyn Fn(&str) -> bool) {
        for (name, t) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            for (p, g) in t.data_mut().iter_mut().zip(g) {
                *p -= self.lr * g;
            }
        }
    }
}

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, trainable: &dyn Fn(&str) -> bool) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, t) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                *p -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }

    /// Moments as `adam.m.<name>` / `adam.v.<name>` tensors.
    pub fn state_tensors(&self, params: &ParamSet) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::new();
        for (kind, map) in [("m", &self.m), ("v", &self.v)] {
            for (name, data) in map {
                let shape = params.get(name)?.shape().to_vec();
                out.push((format!("adam.{kind}.{name}"), Tensor::new(shape, data.clone())?));
            }
        }
        Ok(out)
    }

    /// Inverse of [`Adam::state_tensors`]; entries without the prefix are
    /// ignored.
    pub fn restore(&mut self, t: u64, entries: &ParamSet) {
        self.t = t;
        for (name, tensor) in entries.iter() {
            if let Some(rest) = name.strip_prefix("adam.m.") {
                self.m.insert(rest.to_string(), tensor.data().to_vec());
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                self.v.insert(rest.to_string(), tensor.data().to_vec());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd { lr: cfg.lr }),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.lr)),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, trainable: &dyn Fn(&str) -> bool) {
        match self {
            Optimizer::Sgd(o) => o.step(params, trainable),
            Optimizer::Adam(o) => o.step(params, trainable),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(o) => o.lr = lr,
            Optimizer::Adam(o) => o.lr = lr,
        }
    }
}

/// Order of item indices in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Records one item's loss on a fresh tape and returns it with the binding
/// whose tracked entries receive gradients.
pub trait ItemLoss<U>: Fn(&ParamSet, &U, &mut Tape) -> Result<(Var, Binding)> {}
impl<U, F: Fn(&ParamSet, &U, &mut Tape) -> Result<(Var, Binding)>> ItemLoss<U> for F {}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Numeric(format!("{what} is {v}")));
    }
    Ok(())
}

/// Clears grads, then accumulates the mean gradient of `batch` into each
/// parameter's grad buffer. Returns the mean loss.
pub fn batch_gradient<U>(params: &mut ParamSet, batch: &[&U], loss: &impl ItemLoss<U>) -> Result<f64> {
    params.clear_grad();
    let w = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for item in batch {
        let mut tape = Tape::new();
        let (l, binding) = loss(params, item, &mut tape)?;
        let v = tape.scalar_value(l);
        check_finite(v, "loss")?;
        total += v;
        let grads = tape.backward(l)?;
        params.accumulate(&tape, &binding, &grads, w)?;
    }
    Ok(total * w)
}

/// Rescales all trainable gradients so their joint norm is at most `max`.
pub fn clip_gradients(params: &mut ParamSet, trainable: &dyn Fn(&str) -> bool, max: f64) -> f64 {
    let norm = params
        .iter()
        .filter(|(n, _)| trainable(n))
        .filter_map(|(_, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for (name, t) in params.iter_mut() {
            if trainable(name) && t.grad().is_some() {
                t.grad_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

/// Loop settings independent of the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub start_epoch: usize,
    /// Learning rate of epoch 0.
    pub lr: f64,
    /// Per-epoch multiplier on `lr`.
    pub lr_decay: f64,
}

/// Runs epochs `start_epoch..epochs` and returns the mean item loss of
/// each.
pub fn train_loop<U>(
    params: &mut ParamSet,
    items: &[U],
    cfg: &LoopConfig,
    opt: &mut Optimizer,
    trainable: &dyn Fn(&str) -> bool,
    loss: impl ItemLoss<U>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut history = Vec::new();
    for epoch in cfg.start_epoch..cfg.epochs {
        opt.set_lr(cfg.lr * cfg.lr_decay.powi(epoch as i32));
        let order = epoch_order(items.len(), cfg.seed, epoch);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&U> = chunk.iter().map(|&i| &items[i]).collect();
            sum += batch_gradient(params, &batch, &loss)? * batch.len() as f64;
            if let Some(c) = cfg.clip_norm {
                clip_gradients(params, trainable, c);
            }
            opt.step(params, trainable);
            params.clear_grad();
        }
        let mean = sum / items.len() as f64;
        check_finite(mean, "epoch loss")?;
        if !params.all_finite() {
            return Err(Error::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Summed cross-entropy of one utterance under `model`, all parameters
/// tracked.
pub fn utterance_loss(dims: &AedDims, p: &ParamSet, u: &Utterance, tape: &mut Tape) -> Result<(Var, Binding)> {
    let b = p.bind(tape);
    let vars = AedVars::bind(tape, &b, dims, "")?;
    let x = tape.constant(&u.x);
    let f = aed_forward(tape, x, &u.y, &vars)?;
    Ok((aed_loss_tape(tape, f.logits, &u.y)?, b))
}

/// Trains the WSU model on `utts`; epochs already done are skipped.
pub fn train_si(
    model: &mut AedParams,
    utts: &[Utterance],
    cfg: &TrainConfig,
    seed: u64,
    start_epoch: usize,
    opt: &mut Optimizer,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        clip_norm: cfg.clip_norm,
        seed,
        start_epoch,
        lr: cfg.lr,
        lr_decay: cfg.lr_decay,
    };
    let dims = model.dims.clone();
    train_loop(
        &mut model.params,
        utts,
        &loop_cfg,
        opt,
        &|_| true,
        |p: &ParamSet, u: &Utterance, tape: &mut Tape| utterance_loss(&dims, p, u, tape),
        |e, l| info!("si epoch {e}: loss {l:.4}"),
    )
}
