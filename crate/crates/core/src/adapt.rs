//! Speaker adaptation of a trained WSU model: KLD-regularized re-training
//! against interpolated soft targets, adversarial adaptation with a
//! discriminator on deep features, and multi-task adaptation of the encoder
//! with an auxiliary character decoder.
//!
//! The speaker-independent (SI) model is only ever read. Every adaptation
//! starts from a copy of it and updates that copy with plain SGD on
//! batch-mean gradients.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aed::{
    aed_forward, aed_loss_tape, beam_decode, encode, forward_from_encoded, is_encoder_param, posteriors,
    AedParams, AedVars, CharAedParams, DecoderVars, EncoderVars, CHAR_PREFIX,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::config::{Config, DecodeConfig, Supervision, TrainConfig};
use crate::data::{Lexicon, Utterance};
use crate::error::{contract, Error, Result};
use crate::nn::{feedforward_discriminator_body, init_discriminator, DiscVars};
use crate::params::{Binding, ParamSet};
use crate::train::{batch_gradient, clip_gradients, epoch_order, train_loop, LoopConfig, Optimizer, Sgd};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kld,
    Asa,
    Mtl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kld => "kld",
            Method::Asa => "asa",
            Method::Mtl => "mtl",
        }
    }

    /// Name of the weight this method takes.
    pub fn weight_name(self) -> &'static str {
        match self {
            Method::Kld => "rho",
            Method::Asa => "lambda",
            Method::Mtl => "beta",
        }
    }
}

/// One adaptation run. `weight` is rho (KLD), lambda (ASA) or beta (MTL).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptJob {
    pub method: Method,
    pub weight: f64,
    pub supervision: Supervision,
    pub lr: f64,
    pub disc_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub init_range: f64,
}

impl AdaptJob {
    pub fn from_config(cfg: &Config, method: Method, weight: f64, supervision: Supervision, seed: u64) -> Self {
        AdaptJob {
            method,
            weight,
            supervision,
            lr: cfg.adapt.lr,
            disc_lr: cfg.adapt.disc_lr,
            epochs: cfg.adapt.epochs,
            batch_size: cfg.adapt.batch_size,
            clip_norm: cfg.adapt.clip_norm,
            seed,
            disc_hidden: cfg.model.disc_hidden,
            disc_layers: cfg.model.disc_layers,
            init_range: cfg.model.init_range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weight;
        match self.method {
            Method::Kld | Method::Mtl if !(0.0..=1.0).contains(&w) => {
                return contract(format!("{} must be in [0, 1], got {w}", self.method.weight_name()));
            }
            Method::Asa if !(w >= 0.0 && w.is_finite()) => {
                return contract(format!("lambda must be non-negative, got {w}"));
            }
            _ => {}
        }
        if !(self.lr > 0.0) || !(self.disc_lr > 0.0) || self.batch_size == 0 {
            return contract("adaptation lr, disc_lr and batch_size must be positive");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return contract("adaptation clip_norm must be positive");
        }
        Ok(())
    }

    fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            clip_norm: self.clip_norm,
            seed: self.seed,
            start_epoch: 0,
            lr: self.lr,
            lr_decay: 1.0,
        }
    }
}

/// Adapted model plus per-epoch losses.
#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub model: AedParams,
    pub history: Vec<f64>,
    /// Discriminator loss per epoch (ASA only).
    pub disc_history: Vec<f64>,
    pub utterances: usize,
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return contract(format!("rho must be in [0, 1], got {rho}"));
    }
    Ok(())
}

// ---- KLD ----

/// `(1 - rho) * onehot(y) + rho * si_posterior`.
pub fn interpolated_target(y: usize, si_posterior: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_rho(rho)?;
    if y >= si_posterior.len() {
        return contract(format!("label {y} outside vocabulary of {}", si_posterior.len()));
    }
    Ok(si_posterior
        .iter()
        .enumerate()
        .map(|(u, &p)| (1.0 - rho) * if u == y { 1.0 } else { 0.0 } + rho * p)
        .collect())
}

/// Interpolated targets for every step of `y`.
pub fn interpolated_targets(y: &[usize], si_posteriors: &Tensor, rho: f64) -> Result<Tensor> {
    if si_posteriors.shape().len() != 2 || si_posteriors.rows() != y.len() {
        return contract(format!(
            "SI posteriors {:?} do not align with {} labels",
            si_posteriors.shape(),
            y.len()
        ));
    }
    let mut data = Vec::with_capacity(si_posteriors.numel());
    for (t, &tok) in y.iter().enumerate() {
        data.extend(interpolated_target(tok, si_posteriors.row(t), rho)?);
    }
    Tensor::matrix(y.len(), si_posteriors.cols(), data)
}

/// `-sum_t sum_u target_t[u] * sd_log_posteriors[t][u]`.
pub fn kld_adapt_loss(sd_log_posteriors: &Tensor, si_posteriors: &Tensor, y: &[usize], rho: f64) -> Result<f64> {
    if sd_log_posteriors.shape() != si_posteriors.shape() {
        return Err(Error::Shape {
            op: "kld_adapt_loss",
            lhs: sd_log_posteriors.shape().to_vec(),
            rhs: si_posteriors.shape().to_vec(),
        });
    }
    let targets = interpolated_targets(y, si_posteriors, rho)?;
    Ok(-targets
        .data()
        .iter()
        .zip(sd_log_posteriors.data())
        .map(|(t, l)| t * l)
        .sum::<f64>())
}

/// The KLD loss on the tape: soft cross-entropy of SD logits against
/// interpolated targets. With `rho = 0` the targets are exactly one-hot
/// and this is the plain AED loss.
pub fn kld_loss_tape(tape: &mut Tape, sd_logits: Var, si_posteriors: &Tensor, y: &[usize], rho: f64) -> Result<Var> {
    let targets = interpolated_targets(y, si_posteriors, rho)?;
    tape.soft_cross_entropy(sd_logits, &targets)
}

/// Teacher-forced SI posteriors and deep features for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SiReference {
    /// `[|y|, vocab]`.
    pub posteriors: Tensor,
    /// `[|y|, dim]`, row `t` is `s_t + g_t`.
    pub features: Tensor,
}

pub fn si_reference(si: &AedParams, u: &Utterance) -> Result<SiReference> {
    let mut tape = Tape::new();
    let vars = si.bind_all(&mut tape, |_| false)?;
    let x = tape.constant(&u.x);
    let f = aed_forward(&mut tape, x, &u.y, &vars)?;
    let rows: Vec<f64> = f.features.iter().flat_map(|&v| tape.value(v).to_vec()).collect();
    Ok(SiReference {
        posteriors: posteriors(&tape.tensor(f.logits)),
        features: Tensor::matrix(u.y.len(), si.dims.dim, rows)?,
    })
}

fn check_set(set: &[Utterance]) -> Result<()> {
    if set.is_empty() {
        return contract("adaptation set is empty");
    }
    Ok(())
}

/// Loss of the SD model on one utterance with precomputed targets.
pub fn kld_item_loss(sd: &AedParams, p: &ParamSet, u: &Utterance, targets: &Tensor, tape: &mut Tape) -> Result<(Var, Binding)> {
    let b = p.bind(tape);
    let vars = AedVars::bind(tape, &b, &sd.dims, "")?;
    let x = tape.constant(&u.x);
    let f = aed_forward(tape, x, &u.y, &vars)?;
    Ok((tape.soft_cross_entropy(f.logits, targets)?, b))
}

/// Re-trains a copy of `si` on `set` against interpolated targets.
pub fn kld_adapt(si: &AedParams, set: &[Utterance], job: &AdaptJob) -> Result<AdaptOutcome> {
    if job.method != Method::Kld {
        return contract("kld_adapt needs a KLD job");
    }
    job.validate()?;
    check_set(set)?;
    let items: Vec<(Utterance, Tensor)> = set
        .iter()
        .map(|u| {
            let r = si_reference(si, u)?;
            Ok((u.clone(), interpolated_targets(&u.y, &r.posteriors, job.weight)?))
        })
        .collect::<Result<_>>()?;
    let mut sd = si.clone();
    let shape = si.clone();
    let mut opt = Optimizer::Sgd(Sgd { lr: job.lr });
    let history = train_loop(
        &mut sd.params,
        &items,
        &job.loop_config(),
        &mut opt,
        &|_| true,
        |p: &ParamSet, item: &(Utterance, Tensor), tape: &mut Tape| kld_item_loss(&shape, p, &item.0, &item.1, tape),
        |e, l| info!("kld epoch {e}: loss {l:.4}"),
    )?;
    Ok(AdaptOutcome {
        model: sd,
        history,
        disc_history: Vec::new(),
        utterances: set.len(),
    })
}

// ---- ASA ----

/// Fresh discriminator parameters (`disc.*`).
pub fn init_disc(input: usize, hidden: usize, layers: usize, range: f64, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    init_discriminator(&mut ps, input, hidden, layers, range, &mut rng);
    ps
}

/// `-sum_t [log sigmoid(D(f_sd_t)) + log sigmoid(-D(f_si_t))]`: the
/// discriminator scores the probability that a feature came from the SD
/// model.
pub fn discriminator_loss(tape: &mut Tape, f_sd: &[Var], f_si: &[Var], disc: &DiscVars) -> Result<Var> {
    if f_sd.len() != f_si.len() || f_sd.is_empty() {
        return contract(format!(
            "discriminator needs aligned non-empty feature lists, got {} and {}",
            f_sd.len(),
            f_si.len()
        ));
    }
    let mut terms = Vec::with_capacity(2 * f_sd.len());
    for (&a, &b) in f_sd.iter().zip(f_si) {
        let la = feedforward_discriminator_body(tape, a, disc)?;
        terms.push(tape.log_sigmoid(la));
        let lb = feedforward_discriminator_body(tape, b, disc)?;
        let nb = tape.scale(lb, -1.0);
        terms.push(tape.log_sigmoid(nb));
    }
    let all = tape.concat(&terms)?;
    let s = tape.sum(all);
    Ok(tape.scale(s, -1.0))
}

fn constant_rows(tape: &mut Tape, m: &Tensor) -> Vec<Var> {
    (0..m.rows()).map(|i| tape.constant_vec(m.row(i).to_vec())).collect()
}

/// How the adversarial term enters the SD objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsaObjective {
    /// `L_AED - lambda * L_DISC`.
    Explicit,
    /// `L_AED + L_DISC(reverse(f_sd))`, the reversal scaling the adjoint
    /// by `-lambda`. Same SD gradient, different loss value.
    GradientReversal,
}

/// SD-side objective for one utterance with the discriminator frozen.
/// Returns the loss and the SD binding.
#[allow(clippy::too_many_arguments)]
pub fn asa_sd_loss(
    sd: &AedParams,
    p: &ParamSet,
    disc: &ParamSet,
    disc_layers: usize,
    u: &Utterance,
    si_features: &Tensor,
    lambda: f64,
    objective: AsaObjective,
    tape: &mut Tape,
) -> Result<(Var, Binding)> {
    let b = p.bind(tape);
    let vars = AedVars::bind(tape, &b, &sd.dims, "")?;
    let db = disc.bind_frozen(tape);
    let dv = DiscVars::bind(tape, &db, disc_layers)?;
    let x = tape.constant(&u.x);
    let f = aed_forward(tape, x, &u.y, &vars)?;
    let aed = aed_loss_tape(tape, f.logits, &u.y)?;
    let si = constant_rows(tape, si_features);
    let loss = match objective {
        AsaObjective::Explicit => {
            let d = discriminator_loss(tape, &f.features, &si, &dv)?;
            let d = tape.scale(d, -lambda);
            tape.add(aed, d)?
        }
        AsaObjective::GradientReversal => {
            let rev: Vec<Var> = f.features.iter().map(|&v| tape.grad_reverse(v, lambda)).collect();
            let d = discriminator_loss(tape, &rev, &si, &dv)?;
            tape.add(aed, d)?
        }
    };
    Ok((loss, b))
}

/// Discriminator-side objective for one utterance with SD frozen.
pub fn asa_disc_loss(
    sd: &AedParams,
    disc: &ParamSet,
    disc_layers: usize,
    u: &Utterance,
    si_features: &Tensor,
    tape: &mut Tape,
) -> Result<(Var, Binding)> {
    let vars = sd.bind_all(tape, |_| false)?;
    let db = disc.bind(tape);
    let dv = DiscVars::bind(tape, &db, disc_layers)?;
    let x = tape.constant(&u.x);
    let f = aed_forward(tape, x, &u.y, &vars)?;
    let si = constant_rows(tape, si_features);
    Ok((discriminator_loss(tape, &f.features, &si, &dv)?, db))
}

/// One alternating round on a batch: (a) SGD on the SD model for
/// `L_AED - lambda * L_DISC` with the discriminator fixed; (b) SGD on the
/// discriminator for `L_DISC` using the updated SD features. Returns the
/// mean losses of both phases.
#[allow(clippy::too_many_arguments)]
pub fn asa_round(
    sd: &mut AedParams,
    disc: &mut ParamSet,
    disc_layers: usize,
    batch: &[&(Utterance, Tensor)],
    lambda: f64,
    lr: f64,
    disc_lr: f64,
    clip_norm: Option<f64>,
) -> Result<(f64, f64)> {
    let shape = sd.clone();
    let frozen_disc = disc.clone();
    let sd_loss = batch_gradient(&mut sd.params, batch, &|p: &ParamSet, item: &(Utterance, Tensor), tape: &mut Tape| {
        asa_sd_loss(&shape, p, &frozen_disc, disc_layers, &item.0, &item.1, lambda, AsaObjective::Explicit, tape)
    })?;
    if let Some(c) = clip_norm {
        clip_gradients(&mut sd.params, &|_| true, c);
    }
    Sgd { lr }.step(&mut sd.params, &|_| true);
    sd.params.clear_grad();

    let current = sd.clone();
    let d_loss = batch_gradient(disc, batch, &|p: &ParamSet, item: &(Utterance, Tensor), tape: &mut Tape| {
        asa_disc_loss(&current, p, disc_layers, &item.0, &item.1, tape)
    })?;
    if let Some(c) = clip_norm {
        clip_gradients(disc, &|_| true, c);
    }
    Sgd { lr: disc_lr }.step(disc, &|_| true);
    disc.clear_grad();
    Ok((sd_loss, d_loss))
}

/// Result of [`asa_adapt`]; the discriminator is returned for inspection
/// only and is not part of the adapted model.
#[derive(Clone, Debug)]
pub struct AsaOutcome {
    pub outcome: AdaptOutcome,
    pub disc: ParamSet,
}

pub fn asa_adapt(si: &AedParams, set: &[Utterance], job: &AdaptJob) -> Result<AsaOutcome> {
    if job.method != Method::Asa {
        return contract("asa_adapt needs an ASA job");
    }
    job.validate()?;
    check_set(set)?;
    let items: Vec<(Utterance, Tensor)> = set
        .iter()
        .map(|u| Ok((u.clone(), si_reference(si, u)?.features)))
        .collect::<Result<_>>()?;
    let mut sd = si.clone();
    let mut disc = init_disc(si.dims.dim, job.disc_hidden, job.disc_layers, job.init_range, job.seed);
    let mut history = Vec::new();
    let mut disc_history = Vec::new();
    for epoch in 0..job.epochs {
        let order = epoch_order(items.len(), job.seed, epoch);
        let (mut a, mut b) = (0.0, 0.0);
        for chunk in order.chunks(job.batch_size) {
            let batch: Vec<&(Utterance, Tensor)> = chunk.iter().map(|&i| &items[i]).collect();
            let (la, lb) = asa_round(&mut sd, &mut disc, job.disc_layers, &batch, job.weight, job.lr, job.disc_lr, job.clip_norm)?;
            a += la * batch.len() as f64;
            b += lb * batch.len() as f64;
        }
        let n = items.len() as f64;
        if !sd.params.all_finite() || !disc.all_finite() {
            return Err(Error::Numeric(format!("adversarial adaptation diverged in epoch {epoch}")));
        }
        info!("asa epoch {epoch}: objective {:.4}, discriminator {:.4}", a / n, b / n);
        history.push(a / n);
        disc_history.push(b / n);
    }
    Ok(AsaOutcome {
        outcome: AdaptOutcome {
            model: sd,
            history,
            disc_history,
            utterances: set.len(),
        },
        disc,
    })
}

// ---- character decoder and MTL ----

/// Encoded features of `u` under the (frozen) encoder of `model`.
pub fn encoded(model: &AedParams, u: &Utterance) -> Result<Tensor> {
    let mut tape = Tape::new();
    let b = model.params.bind_frozen(&mut tape);
    let enc = EncoderVars::bind(&tape, &b, &model.dims)?;
    let x = tape.constant(&u.x);
    let h = encode(&mut tape, x, &enc)?;
    Ok(tape.tensor(h))
}

fn check_chars(c: &[usize], vocab: usize) -> Result<()> {
    if let Some(&bad) = c.iter().find(|&&t| t >= vocab) {
        return contract(format!("character label {bad} outside vocabulary of {vocab}"));
    }
    Ok(())
}

/// Character loss over precomputed `H`, char decoder tracked.
pub fn char_item_loss(dims: &crate::aed::AedDims, p: &ParamSet, h: &Tensor, c: &[usize], tape: &mut Tape) -> Result<(Var, Binding)> {
    let b = p.bind(tape);
    let dec = DecoderVars::bind(tape, &b, dims, CHAR_PREFIX)?;
    let hv = tape.constant(h);
    let f = forward_from_encoded(tape, hv, c, &dec)?;
    Ok((aed_loss_tape(tape, f.logits, c)?, b))
}

/// Trains the character decoder and attention on top of the fixed SI
/// encoder. The encoder is not part of `char_model`, so it cannot move.
pub fn train_char_decoder(
    si: &AedParams,
    char_model: &mut CharAedParams,
    utts: &[Utterance],
    cfg: &TrainConfig,
    seed: u64,
    start_epoch: usize,
    opt: &mut Optimizer,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    char_model.check_encoder(&si.dims)?;
    let vocab = char_model.dims.vocab;
    let items: Vec<(Tensor, Vec<usize>)> = utts
        .iter()
        .map(|u| {
            check_chars(&u.c, vocab)?;
            Ok((encoded(si, u)?, u.c.clone()))
        })
        .collect::<Result<_>>()?;
    let dims = char_model.dims.clone();
    let loop_cfg = LoopConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        clip_norm: cfg.clip_norm,
        seed,
        start_epoch,
        lr: cfg.lr,
        lr_decay: cfg.lr_decay,
    };
    train_loop(
        &mut char_model.params,
        &items,
        &loop_cfg,
        opt,
        &|_| true,
        |p: &ParamSet, item: &(Tensor, Vec<usize>), tape: &mut Tape| char_item_loss(&dims, p, &item.0, &item.1, tape),
        |e, l| info!("char epoch {e}: loss {l:.4}"),
    )
}

/// `beta * L_wsu + (1 - beta) * L_chr` for one utterance; only encoder
/// entries of `p` are tracked.
pub fn mtl_item_loss(
    sd: &AedParams,
    p: &ParamSet,
    char_model: &CharAedParams,
    u: &Utterance,
    beta: f64,
    tape: &mut Tape,
) -> Result<(Var, Binding)> {
    check_chars(&u.c, char_model.dims.vocab)?;
    let b = p.bind_where(tape, is_encoder_param);
    let vars = AedVars::bind(tape, &b, &sd.dims, "")?;
    let cb = char_model.params.bind_frozen(tape);
    let cdec = DecoderVars::bind(tape, &cb, &char_model.dims, CHAR_PREFIX)?;
    let x = tape.constant(&u.x);
    let h = encode(tape, x, &vars.enc)?;
    let fw = forward_from_encoded(tape, h, &u.y, &vars.dec)?;
    let lw = aed_loss_tape(tape, fw.logits, &u.y)?;
    let fc = forward_from_encoded(tape, h, &u.c, &cdec)?;
    let lc = aed_loss_tape(tape, fc.logits, &u.c)?;
    let lw = tape.scale(lw, beta);
    let lc = tape.scale(lc, 1.0 - beta);
    Ok((tape.add(lw, lc)?, b))
}

/// Adapts only the encoder of a copy of `si`; everything else, and the
/// character branch, stays fixed and the latter is dropped afterwards.
pub fn mtl_adapt(si: &AedParams, char_model: &CharAedParams, set: &[Utterance], job: &AdaptJob) -> Result<AdaptOutcome> {
    if job.method != Method::Mtl {
        return contract("mtl_adapt needs an MTL job");
    }
    job.validate()?;
    check_set(set)?;
    char_model.check_encoder(&si.dims)?;
    if let Some(u) = set.iter().find(|u| u.c.is_empty()) {
        return contract(format!("utterance {} has no character labels", u.id));
    }
    let mut sd = si.clone();
    let shape = si.clone();
    let mut opt = Optimizer::Sgd(Sgd { lr: job.lr });
    let history = train_loop(
        &mut sd.params,
        set,
        &job.loop_config(),
        &mut opt,
        &is_encoder_param,
        |p: &ParamSet, u: &Utterance, tape: &mut Tape| mtl_item_loss(&shape, p, char_model, u, job.weight, tape),
        |e, l| info!("mtl epoch {e}: loss {l:.4}"),
    )?;
    Ok(AdaptOutcome {
        model: sd,
        history,
        disc_history: Vec::new(),
        utterances: set.len(),
    })
}

// ---- labels and dispatch ----

/// `u` relabelled with the SI model's one-best decode and its lexicon
/// expansion, or `None` when the decode is empty.
pub fn hypothesis_labels(si: &AedParams, u: &Utterance, lexicon: &Lexicon, decode: &DecodeConfig) -> Result<Option<Utterance>> {
    let hyp = beam_decode(si, &u.x, decode.beam_width, decode.max_len)?;
    let labels = hyp.labels();
    if labels.is_empty() {
        warn!("utterance {} decoded as empty; skipped", u.id);
        return Ok(None);
    }
    let mut y = labels.to_vec();
    y.push(crate::aed::EOS);
    let c = lexicon.expand(&y)?;
    Ok(Some(Utterance {
        id: u.id.clone(),
        speaker: u.speaker,
        x: u.x.clone(),
        y,
        c,
    }))
}

/// Replaces the labels of `set` with hypotheses; utterances decoded as
/// empty are dropped.
pub fn unsupervised_labels(si: &AedParams, set: &[Utterance], lexicon: &Lexicon, decode: &DecodeConfig) -> Result<Vec<Utterance>> {
    let mut out = Vec::with_capacity(set.len());
    for u in set {
        if let Some(h) = hypothesis_labels(si, u, lexicon, decode)? {
            out.push(h);
        }
    }
    Ok(out)
}

/// Runs `job` on a set whose labels are already final.
pub fn adapt_labelled(si: &AedParams, char_model: Option<&CharAedParams>, set: &[Utterance], job: &AdaptJob) -> Result<AdaptOutcome> {
    match job.method {
        Method::Kld => kld_adapt(si, set, job),
        Method::Asa => asa_adapt(si, set, job).map(|o| o.outcome),
        Method::Mtl => {
            let c = char_model.ok_or_else(|| Error::Contract("MTL adaptation needs a character decoder".into()))?;
            mtl_adapt(si, c, set, job)
        }
    }
}

/// Runs `job` on `set`, relabelling it first for unsupervised jobs.
pub fn adapt(
    si: &AedParams,
    char_model: Option<&CharAedParams>,
    set: &[Utterance],
    lexicon: &Lexicon,
    decode: &DecodeConfig,
    job: &AdaptJob,
) -> Result<AdaptOutcome> {
    job.validate()?;
    match job.supervision {
        Supervision::Sup => adapt_labelled(si, char_model, set, job),
        Supervision::Unsup => {
            let relabelled = unsupervised_labels(si, set, lexicon, decode)?;
            adapt_labelled(si, char_model, &relabelled, job)
        }
    }
}
