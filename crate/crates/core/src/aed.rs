//! Attention-based encoder-decoder: bidirectional GRU encoder with a learned
//! projection, additive attention, a GRU decoder fed `e_{t-1} + g_{t-1}`,
//! and a softmax output layer over `s_t + g_t`.
//!
//! Parameter names:
//!
//! ```text
//! enc.{l}.{fw,bw}.*   GRU directions of encoder layer l
//! enc.{l}.ln.*        layer norm over [fw; bw]
//! enc.proj.{w,b}      [2*enc_hidden, dim], [dim]
//! {p}att.{w_k,w_q,b,v} [dim, att], [dim, att], [att], [att]
//! {p}dec.emb          [vocab, dim]
//! {p}dec.{l}.*        decoder GRU layer l
//! {p}out.{w,b}        [vocab, dim], [vocab]
//! ```
//!
//! where `{p}` is empty for the WSU model and `chr.` for the character
//! decoder that shares the encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_row, Tape, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{
    bigru_encoder_stack, gru_cell, gru_shapes, init_gru, init_layer_norm, BiGruLayerVars,
    GruVars, LnVars,
};
use crate::params::{Binding, ParamSet};

pub const SOS: usize = 0;
pub const EOS: usize = 1;

/// Architecture of one AED. `vocab` counts the reserved tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AedDims {
    pub feat: usize,
    pub vocab: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    pub dim: usize,
    pub dec_layers: usize,
    pub att_dim: usize,
    pub ln_eps: f64,
}

impl AedDims {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("feat", self.feat),
            ("enc_layers", self.enc_layers),
            ("enc_hidden", self.enc_hidden),
            ("dim", self.dim),
            ("dec_layers", self.dec_layers),
            ("att_dim", self.att_dim),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return contract(format!("model dimension {name} must be positive"));
            }
        }
        if self.vocab < 3 {
            return contract(format!("vocabulary of {} leaves no room beyond sos/eos", self.vocab));
        }
        if !(self.ln_eps > 0.0) {
            return contract("ln_eps must be positive");
        }
        Ok(())
    }
}

fn encoder_shapes(d: &AedDims) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut width = d.feat;
    for l in 0..d.enc_layers {
        out.extend(gru_shapes(&format!("enc.{l}.fw"), width, d.enc_hidden));
        out.extend(gru_shapes(&format!("enc.{l}.bw"), width, d.enc_hidden));
        out.push((format!("enc.{l}.ln.gain"), vec![2 * d.enc_hidden]));
        out.push((format!("enc.{l}.ln.bias"), vec![2 * d.enc_hidden]));
        width = 2 * d.enc_hidden;
    }
    out.push(("enc.proj.w".into(), vec![2 * d.enc_hidden, d.dim]));
    out.push(("enc.proj.b".into(), vec![d.dim]));
    out
}

fn decoder_shapes(d: &AedDims, p: &str) -> Vec<(String, Vec<usize>)> {
    let mut out = vec![
        (format!("{p}att.w_k"), vec![d.dim, d.att_dim]),
        (format!("{p}att.w_q"), vec![d.dim, d.att_dim]),
        (format!("{p}att.b"), vec![d.att_dim]),
        (format!("{p}att.v"), vec![d.att_dim]),
        (format!("{p}dec.emb"), vec![d.vocab, d.dim]),
    ];
    for l in 0..d.dec_layers {
        out.extend(gru_shapes(&format!("{p}dec.{l}"), d.dim, d.dim));
    }
    out.push((format!("{p}out.w"), vec![d.vocab, d.dim]));
    out.push((format!("{p}out.b"), vec![d.vocab]));
    out
}

fn init_encoder(ps: &mut ParamSet, d: &AedDims, range: f64, rng: &mut impl Rng) {
    let mut width = d.feat;
    for l in 0..d.enc_layers {
        init_gru(ps, &format!("enc.{l}.fw"), width, d.enc_hidden, range, rng);
        init_gru(ps, &format!("enc.{l}.bw"), width, d.enc_hidden, range, rng);
        init_layer_norm(ps, &format!("enc.{l}.ln"), 2 * d.enc_hidden);
        width = 2 * d.enc_hidden;
    }
    ps.init_uniform("enc.proj.w", &[2 * d.enc_hidden, d.dim], range, rng);
    ps.init_zeros("enc.proj.b", &[d.dim]);
}

fn init_decoder(ps: &mut ParamSet, d: &AedDims, p: &str, range: f64, rng: &mut impl Rng) {
    ps.init_uniform(&format!("{p}att.w_k"), &[d.dim, d.att_dim], range, rng);
    ps.init_uniform(&format!("{p}att.w_q"), &[d.dim, d.att_dim], range, rng);
    ps.init_zeros(&format!("{p}att.b"), &[d.att_dim]);
    ps.init_uniform(&format!("{p}att.v"), &[d.att_dim], range, rng);
    ps.init_uniform(&format!("{p}dec.emb"), &[d.vocab, d.dim], range, rng);
    for l in 0..d.dec_layers {
        init_gru(ps, &format!("{p}dec.{l}"), d.dim, d.dim, range, rng);
    }
    ps.init_uniform(&format!("{p}out.w"), &[d.vocab, d.dim], range, rng);
    ps.init_zeros(&format!("{p}out.b"), &[d.vocab]);
}

fn check_shapes(ps: &ParamSet, expected: &[(String, Vec<usize>)]) -> Result<()> {
    for (name, shape) in expected {
        let t = ps.get(name)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "parameter {name} has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
    }
    if ps.len() != expected.len() {
        return Err(Error::Format(format!(
            "expected {} parameters, found {}",
            expected.len(),
            ps.len()
        )));
    }
    Ok(())
}

/// WSU model parameters: encoder (with projection), attention, decoder and
/// output layer.
#[derive(Clone, Debug)]
pub struct AedParams {
    pub dims: AedDims,
    pub params: ParamSet,
}

impl AedParams {
    /// Weights uniform in `[-range, range]`, biases zero, layer-norm gains one.
    pub fn init(dims: AedDims, range: f64, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        init_encoder(&mut params, &dims, range, rng);
        init_decoder(&mut params, &dims, "", range, rng);
        Ok(AedParams { dims, params })
    }

    pub fn expected_shapes(dims: &AedDims) -> Vec<(String, Vec<usize>)> {
        let mut v = encoder_shapes(dims);
        v.extend(decoder_shapes(dims, ""));
        v
    }

    /// Wraps loaded parameters after checking names and shapes.
    pub fn from_params(dims: AedDims, params: ParamSet) -> Result<Self> {
        dims.validate()?;
        check_shapes(&params, &Self::expected_shapes(&dims))?;
        Ok(AedParams { dims, params })
    }

    pub fn bind_all(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Result<AedVars> {
        let b = self.params.bind_where(tape, trainable);
        AedVars::bind(tape, &b, &self.dims, "").map(|v| v.with_binding(b))
    }
}

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("enc.")
}

/// Output-layer parameters: the classifier half of the feature split.
pub fn is_output_param(name: &str) -> bool {
    name.starts_with("out.")
}

/// Character decoder sharing the WSU encoder. Holds only `chr.*` entries;
/// the encoder is always taken from the WSU model it is paired with.
#[derive(Clone, Debug)]
pub struct CharAedParams {
    pub dims: AedDims,
    pub params: ParamSet,
}

pub const CHAR_PREFIX: &str = "chr.";

impl CharAedParams {
    /// `dims` must match the WSU encoder except for `vocab`.
    pub fn init(dims: AedDims, range: f64, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        init_decoder(&mut params, &dims, CHAR_PREFIX, range, rng);
        Ok(CharAedParams { dims, params })
    }

    pub fn expected_shapes(dims: &AedDims) -> Vec<(String, Vec<usize>)> {
        decoder_shapes(dims, CHAR_PREFIX)
    }

    pub fn from_params(dims: AedDims, params: ParamSet) -> Result<Self> {
        dims.validate()?;
        check_shapes(&params, &Self::expected_shapes(&dims))?;
        Ok(CharAedParams { dims, params })
    }

    /// Checks that this decoder fits the encoder of `wsu`.
    pub fn check_encoder(&self, wsu: &AedDims) -> Result<()> {
        let a = &self.dims;
        if (a.feat, a.enc_layers, a.enc_hidden, a.dim, a.ln_eps)
            != (wsu.feat, wsu.enc_layers, wsu.enc_hidden, wsu.dim, wsu.ln_eps)
        {
            return contract("character decoder does not match the WSU encoder");
        }
        Ok(())
    }
}

/// Tape handles for the encoder.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub layers: Vec<BiGruLayerVars>,
    pub proj_w: Var,
    pub proj_b: Var,
}

impl EncoderVars {
    pub fn bind(tape: &Tape, b: &Binding, dims: &AedDims) -> Result<Self> {
        let layers = (0..dims.enc_layers)
            .map(|l| {
                Ok(BiGruLayerVars {
                    fw: GruVars::bind(tape, b, &format!("enc.{l}.fw"))?,
                    bw: GruVars::bind(tape, b, &format!("enc.{l}.bw"))?,
                    ln: LnVars::bind(b, &format!("enc.{l}.ln"), dims.ln_eps)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EncoderVars {
            layers,
            proj_w: b.var("enc.proj.w")?,
            proj_b: b.var("enc.proj.b")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttVars {
    pub w_k: Var,
    pub w_q: Var,
    pub b: Var,
    pub v: Var,
}

/// Tape handles for attention, decoder and output layer.
#[derive(Clone, Debug)]
pub struct DecoderVars {
    pub att: AttVars,
    pub emb: Var,
    pub layers: Vec<GruVars>,
    pub out_w: Var,
    pub out_b: Var,
    pub vocab: usize,
    pub dim: usize,
}

impl DecoderVars {
    pub fn bind(tape: &Tape, b: &Binding, dims: &AedDims, p: &str) -> Result<Self> {
        let att = AttVars {
            w_k: b.var(&format!("{p}att.w_k"))?,
            w_q: b.var(&format!("{p}att.w_q"))?,
            b: b.var(&format!("{p}att.b"))?,
            v: b.var(&format!("{p}att.v"))?,
        };
        let layers = (0..dims.dec_layers)
            .map(|l| GruVars::bind(tape, b, &format!("{p}dec.{l}")))
            .collect::<Result<_>>()?;
        Ok(DecoderVars {
            att,
            emb: b.var(&format!("{p}dec.emb"))?,
            layers,
            out_w: b.var(&format!("{p}out.w"))?,
            out_b: b.var(&format!("{p}out.b"))?,
            vocab: dims.vocab,
            dim: dims.dim,
        })
    }
}

/// Encoder and decoder handles plus the binding they came from.
#[derive(Clone, Debug)]
pub struct AedVars {
    pub enc: EncoderVars,
    pub dec: DecoderVars,
    pub binding: Binding,
}

impl AedVars {
    pub fn bind(tape: &Tape, b: &Binding, dims: &AedDims, p: &str) -> Result<Self> {
        Ok(AedVars {
            enc: EncoderVars::bind(tape, b, dims)?,
            dec: DecoderVars::bind(tape, b, dims, p)?,
            binding: Binding::default(),
        })
    }

    fn with_binding(mut self, b: Binding) -> Self {
        self.binding = b;
        self
    }
}

/// `H = stack(X) W_p + b_p`, shape `[T, dim]`.
pub fn encode(tape: &mut Tape, x: Var, enc: &EncoderVars) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 2 || s[0] == 0 {
        return contract(format!("encoder input must be a non-empty [T, d], got {s:?}"));
    }
    let raw = bigru_encoder_stack(tape, x, &enc.layers)?;
    let proj = tape.matmul(raw, enc.proj_w)?;
    tape.add_row(proj, enc.proj_b)
}

/// Encoded features with their attention keys `H W_k`, computed once per
/// utterance.
#[derive(Clone, Copy, Debug)]
pub struct Memory {
    pub h: Var,
    pub keys: Var,
}

pub fn attention_memory(tape: &mut Tape, h: Var, att: &AttVars) -> Result<Memory> {
    let keys = tape.matmul(h, att.w_k)?;
    Ok(Memory { h, keys })
}

/// Additive attention: `score_i = v . tanh(h_i W_k + s W_q + b)`,
/// `alpha = softmax(score)`, `g = alpha H`. Returns `(g, alpha)`.
pub fn attend(tape: &mut Tape, s: Var, mem: &Memory, att: &AttVars) -> Result<(Var, Var)> {
    let q = tape.matmul(s, att.w_q)?;
    let q = tape.add(q, att.b)?;
    let pre = tape.add_row(mem.keys, q)?;
    let act = tape.tanh(pre);
    let scores = tape.matmul(act, att.v)?;
    let alpha = tape.softmax(scores);
    let g = tape.matmul(alpha, mem.h)?;
    Ok((g, alpha))
}

/// Runs the decoder stack on input `e_prev + g_prev`. `state` holds one
/// hidden vector per layer; the last one is `s_t`.
pub fn decoder_step(
    tape: &mut Tape,
    state: &[Var],
    e_prev: Var,
    g_prev: Var,
    dec: &DecoderVars,
) -> Result<Vec<Var>> {
    if state.len() != dec.layers.len() {
        return contract(format!(
            "decoder state has {} layers, model has {}",
            state.len(),
            dec.layers.len()
        ));
    }
    let mut x = tape.add(e_prev, g_prev)?;
    let mut next = Vec::with_capacity(state.len());
    for (h, p) in state.iter().zip(&dec.layers) {
        x = gru_cell(tape, x, *h, p)?;
        next.push(x);
    }
    Ok(next)
}

/// Pre-softmax scores `W_y (s + g) + b_y`.
pub fn output_logits(tape: &mut Tape, s: Var, g: Var, dec: &DecoderVars) -> Result<Var> {
    let f = tape.add(s, g)?;
    let z = tape.matmul(dec.out_w, f)?;
    tape.add(z, dec.out_b)
}

/// Decoder state between steps.
#[derive(Clone, Debug)]
pub struct DecState {
    pub layers: Vec<Var>,
    pub g: Var,
}

impl DecState {
    /// `s_0 = 0` in every layer, `g_0 = 0`.
    pub fn initial(tape: &mut Tape, dec: &DecoderVars) -> Self {
        let zeros = tape.constant_vec(vec![0.0; dec.dim]);
        DecState {
            layers: vec![zeros; dec.layers.len()],
            g: zeros,
        }
    }
}

/// Output of one decoding step.
#[derive(Clone, Debug)]
pub struct Step {
    pub state: DecState,
    pub logits: Var,
    /// Deep feature `s_t + g_t`.
    pub feature: Var,
    pub alpha: Var,
}

fn check_token(tok: usize, vocab: usize) -> Result<()> {
    if tok >= vocab {
        return contract(format!("label {tok} outside vocabulary of {vocab}"));
    }
    Ok(())
}

/// One step: consume `prev` token, update the state, attend, score.
pub fn step(
    tape: &mut Tape,
    state: &DecState,
    prev: usize,
    mem: &Memory,
    dec: &DecoderVars,
) -> Result<Step> {
    check_token(prev, dec.vocab)?;
    let e = tape.gather(dec.emb, prev)?;
    let layers = decoder_step(tape, &state.layers, e, state.g, dec)?;
    let s = *layers.last().expect("decoder has layers");
    let (g, alpha) = attend(tape, s, mem, &dec.att)?;
    let feature = tape.add(s, g)?;
    let z = tape.matmul(dec.out_w, feature)?;
    let logits = tape.add(z, dec.out_b)?;
    Ok(Step {
        state: DecState { layers, g },
        logits,
        feature,
        alpha,
    })
}

/// Teacher-forced pass over `y`, one entry per step.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[|y|, vocab]`.
    pub logits: Var,
    pub features: Vec<Var>,
    pub alphas: Vec<Var>,
}

/// Teacher-forced decoding over precomputed `H`; step `t` consumes
/// `y[t-1]` (`sos` at `t = 0`).
pub fn forward_from_encoded(tape: &mut Tape, h: Var, y: &[usize], dec: &DecoderVars) -> Result<Forward> {
    if y.last() != Some(&EOS) {
        return contract("label sequence must end with eos");
    }
    for &tok in y {
        check_token(tok, dec.vocab)?;
    }
    let mem = attention_memory(tape, h, &dec.att)?;
    let mut state = DecState::initial(tape, dec);
    let mut prev = SOS;
    let mut rows = Vec::with_capacity(y.len());
    let mut features = Vec::with_capacity(y.len());
    let mut alphas = Vec::with_capacity(y.len());
    for &tok in y {
        let st = step(tape, &state, prev, &mem, dec)?;
        rows.push(st.logits);
        features.push(st.feature);
        alphas.push(st.alpha);
        state = st.state;
        prev = tok;
    }
    Ok(Forward {
        logits: tape.stack_rows(&rows)?,
        features,
        alphas,
    })
}

pub fn aed_forward(tape: &mut Tape, x: Var, y: &[usize], vars: &AedVars) -> Result<Forward> {
    let h = encode(tape, x, &vars.enc)?;
    forward_from_encoded(tape, h, y, &vars.dec)
}

/// Row-wise softmax of `[|y|, vocab]` logits.
pub fn posteriors(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    out.clear_grad();
    for row in out.data_mut().chunks_mut(c) {
        let mut lp = vec![0.0; c];
        log_softmax_row(row, &mut lp);
        for (r, l) in row.iter_mut().zip(lp) {
            *r = l.exp();
        }
    }
    out
}

/// One-hot rows for `y` over `vocab`.
pub fn one_hot_targets(y: &[usize], vocab: usize) -> Result<Tensor> {
    let mut data = vec![0.0; y.len() * vocab];
    for (t, &tok) in y.iter().enumerate() {
        check_token(tok, vocab)?;
        data[t * vocab + tok] = 1.0;
    }
    Tensor::matrix(y.len(), vocab, data)
}

/// `-sum_t log P(y_t)` recorded on the tape.
pub fn aed_loss_tape(tape: &mut Tape, logits: Var, y: &[usize]) -> Result<Var> {
    let vocab = *tape.shape(logits).last().unwrap_or(&0);
    let targets = one_hot_targets(y, vocab)?;
    tape.soft_cross_entropy(logits, &targets)
}

/// `-sum_t log posteriors[t][y_t]` over explicit posterior rows.
pub fn aed_loss(posteriors: &Tensor, y: &[usize]) -> Result<f64> {
    if posteriors.shape().len() != 2 || posteriors.rows() != y.len() {
        return contract(format!(
            "posteriors {:?} do not align with {} labels",
            posteriors.shape(),
            y.len()
        ));
    }
    let mut total = 0.0;
    for (t, &tok) in y.iter().enumerate() {
        check_token(tok, posteriors.cols())?;
        let p = posteriors.row(t)[tok];
        if !(p > 0.0) {
            return Err(Error::Domain {
                op: "aed_loss",
                detail: format!("posterior of label {tok} at step {t} is {p}"),
            });
        }
        total -= p.ln();
    }
    Ok(total)
}

/// A decoded token sequence and its total log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeHypothesis {
    /// Ends with `eos` unless truncated at `max_len`.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

impl DecodeHypothesis {
    /// Tokens without the trailing `eos`.
    pub fn labels(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

struct Decoder {
    tape: Tape,
    dec: DecoderVars,
    mem: Memory,
}

impl Decoder {
    fn new(params: &AedParams, x: &Tensor) -> Result<Self> {
        let mut tape = Tape::new();
        let vars = params.bind_all(&mut tape, |_| false)?;
        let xv = tape.constant(x);
        let h = encode(&mut tape, xv, &vars.enc)?;
        let mem = attention_memory(&mut tape, h, &vars.dec.att)?;
        Ok(Decoder {
            tape,
            dec: vars.dec,
            mem,
        })
    }

    fn advance(&mut self, state: &DecState, prev: usize) -> Result<(DecState, Vec<f64>)> {
        let st = step(&mut self.tape, state, prev, &self.mem, &self.dec)?;
        let mut lp = vec![0.0; self.dec.vocab];
        log_softmax_row(self.tape.value(st.logits), &mut lp);
        Ok((st.state, lp))
    }
}

fn check_decode_args(max_len: usize, beam_width: usize) -> Result<()> {
    if max_len == 0 || beam_width == 0 {
        return contract("max_len and beam_width must be at least 1");
    }
    Ok(())
}

/// Picks the most probable token other than `sos` at every step, feeding
/// it back, until `eos` or `max_len` tokens.
pub fn greedy_decode(params: &AedParams, x: &Tensor, max_len: usize) -> Result<DecodeHypothesis> {
    check_decode_args(max_len, 1)?;
    let mut d = Decoder::new(params, x)?;
    let mut state = DecState::initial(&mut d.tape, &d.dec);
    let mut hyp = DecodeHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    let mut prev = SOS;
    while hyp.tokens.len() < max_len {
        let (next, lp) = d.advance(&state, prev)?;
        let mut best = SOS + 1;
        for u in SOS + 2..lp.len() {
            if lp[u] > lp[best] {
                best = u;
            }
        }
        hyp.tokens.push(best);
        hyp.log_prob += lp[best];
        if best == EOS {
            break;
        }
        state = next;
        prev = best;
    }
    Ok(hyp)
}

struct Beam {
    tokens: Vec<usize>,
    score: f64,
    state: DecState,
}

/// Beam search ranked by total log-probability. All expansions of the live
/// beams are sorted together (stably, so earlier beams and lower token ids
/// win ties) and the best `beam_width` kept; those ending in `eos` or
/// reaching `max_len` are finished. Stops once no live beam can overtake
/// the best finished one. `beam_width = 1` reproduces [`greedy_decode`].
pub fn beam_decode(
    params: &AedParams,
    x: &Tensor,
    beam_width: usize,
    max_len: usize,
) -> Result<DecodeHypothesis> {
    check_decode_args(max_len, beam_width)?;
    let mut d = Decoder::new(params, x)?;
    let init = DecState::initial(&mut d.tape, &d.dec);
    let mut live = vec![Beam {
        tokens: Vec::new(),
        score: 0.0,
        state: init,
    }];
    let mut finished: Option<DecodeHypothesis> = None;
    while !live.is_empty() {
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        let mut expanded = Vec::with_capacity(live.len());
        for (i, b) in live.iter().enumerate() {
            let prev = b.tokens.last().copied().unwrap_or(SOS);
            let (next, lp) = d.advance(&b.state, prev)?;
            for (u, l) in lp.iter().enumerate().skip(SOS + 1) {
                cands.push((i, u, b.score + l));
            }
            expanded.push(next);
        }
        cands.sort_by(|a, b| b.2.total_cmp(&a.2));
        cands.truncate(beam_width);
        let mut next_live = Vec::new();
        for (i, u, score) in cands {
            let mut tokens = live[i].tokens.clone();
            tokens.push(u);
            if u == EOS || tokens.len() >= max_len {
                if finished.as_ref().is_none_or(|f| score > f.log_prob) {
                    finished = Some(DecodeHypothesis { tokens, log_prob: score });
                }
            } else {
                next_live.push(Beam {
                    tokens,
                    score,
                    state: expanded[i].clone(),
                });
            }
        }
        live = next_live;
        if let Some(f) = &finished {
            if live.iter().all(|b| b.score <= f.log_prob) {
                break;
            }
        }
    }
    Ok(finished.expect("every path finishes by max_len"))
}

#[cfg(test)]
mod tests;
