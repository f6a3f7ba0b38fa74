//! GRU cells and bidirectional stacks, layer normalization, and the
//! feedforward discriminator body.
//!
//! Weights are stored input-major (`[in, out]`) so a row vector times the
//! matrix gives the layer output; biases are 1-D. All layers read their
//! parameters from a [`Binding`] under a name prefix.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::params::{Binding, ParamSet};

const GRU_GATES: [&str; 3] = ["z", "r", "h"];

/// Registers GRU parameters `prefix.{w,u,b,c}_{z,r,h}`: `w` input weights
/// `[input, hidden]`, `u` recurrent weights `[hidden, hidden]`, `b` input
/// biases and `c` recurrent biases of length `hidden`.
pub fn init_gru(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    range: f64,
    rng: &mut impl Rng,
) {
    for g in GRU_GATES {
        params.init_uniform(&format!("{prefix}.w_{g}"), &[input, hidden], range, rng);
        params.init_uniform(&format!("{prefix}.u_{g}"), &[hidden, hidden], range, rng);
        params.init_zeros(&format!("{prefix}.b_{g}"), &[hidden]);
        params.init_zeros(&format!("{prefix}.c_{g}"), &[hidden]);
    }
}

pub fn gru_shapes(prefix: &str, input: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for g in GRU_GATES {
        out.push((format!("{prefix}.w_{g}"), vec![input, hidden]));
        out.push((format!("{prefix}.u_{g}"), vec![hidden, hidden]));
        out.push((format!("{prefix}.b_{g}"), vec![hidden]));
        out.push((format!("{prefix}.c_{g}"), vec![hidden]));
    }
    out
}

#[derive(Clone, Debug)]
pub struct GruVars {
    pub w: [Var; 3],
    pub u: [Var; 3],
    pub b: [Var; 3],
    pub c: [Var; 3],
    pub input: usize,
    pub hidden: usize,
}

impl GruVars {
    pub fn bind(tape: &Tape, binding: &Binding, prefix: &str) -> Result<Self> {
        let get = |kind: &str, g: usize| binding.var(&format!("{prefix}.{kind}_{}", GRU_GATES[g]));
        let w = [get("w", 0)?, get("w", 1)?, get("w", 2)?];
        let u = [get("u", 0)?, get("u", 1)?, get("u", 2)?];
        let b = [get("b", 0)?, get("b", 1)?, get("b", 2)?];
        let c = [get("c", 0)?, get("c", 1)?, get("c", 2)?];
        let ws = tape.shape(w[0]);
        Ok(GruVars {
            input: ws[0],
            hidden: ws[1],
            w,
            u,
            b,
            c,
        })
    }
}

/// Input-path pre-activations `x W_g + b_g` for the three gates.
#[derive(Clone, Copy, Debug)]
pub struct GruInputs {
    pub z: Var,
    pub r: Var,
    pub h: Var,
}

fn check_width(tape: &Tape, v: Var, width: usize, what: &str) -> Result<()> {
    let s = tape.shape(v);
    if s.len() != 1 || s[0] != width {
        return contract(format!("{what}: expected width {width}, got shape {s:?}"));
    }
    Ok(())
}

pub fn gru_input_step(tape: &mut Tape, x: Var, p: &GruVars) -> Result<GruInputs> {
    check_width(tape, x, p.input, "gru input")?;
    let mut pre = [x; 3];
    for g in 0..3 {
        let xw = tape.matmul(x, p.w[g])?;
        pre[g] = tape.add(xw, p.b[g])?;
    }
    Ok(GruInputs {
        z: pre[0],
        r: pre[1],
        h: pre[2],
    })
}

/// Input-path pre-activations for a whole `[T, input]` sequence at once.
/// Row `t` of each result equals [`gru_input_step`] on row `t`.
pub fn gru_input_sequence(tape: &mut Tape, xs: Var, p: &GruVars) -> Result<Vec<GruInputs>> {
    let s = tape.shape(xs).to_vec();
    if s.len() != 2 || s[1] != p.input {
        return contract(format!("gru input: expected [T, {}], got {s:?}", p.input));
    }
    let mut pre = [xs; 3];
    for g in 0..3 {
        let xw = tape.matmul(xs, p.w[g])?;
        pre[g] = tape.add_row(xw, p.b[g])?;
    }
    (0..s[0])
        .map(|t| {
            Ok(GruInputs {
                z: tape.row(pre[0], t)?,
                r: tape.row(pre[1], t)?,
                h: tape.row(pre[2], t)?,
            })
        })
        .collect()
}

/// One recurrence given precomputed input-path pre-activations:
///
/// ```text
/// z  = sigmoid(xz + h_prev U_z + c_z)
/// r  = sigmoid(xr + h_prev U_r + c_r)
/// h~ = tanh(xh + (r * h_prev) U_h + c_h)
/// h  = (1 - z) * h_prev + z * h~
/// ```
pub fn gru_recur(tape: &mut Tape, pre: GruInputs, h_prev: Var, p: &GruVars) -> Result<Var> {
    check_width(tape, h_prev, p.hidden, "gru state")?;
    let hz = tape.matmul(h_prev, p.u[0])?;
    let hz = tape.add(hz, p.c[0])?;
    let z = tape.add(pre.z, hz)?;
    let z = tape.sigmoid(z);

    let hr = tape.matmul(h_prev, p.u[1])?;
    let hr = tape.add(hr, p.c[1])?;
    let r = tape.add(pre.r, hr)?;
    let r = tape.sigmoid(r);

    let rh = tape.mul(r, h_prev)?;
    let hh = tape.matmul(rh, p.u[2])?;
    let hh = tape.add(hh, p.c[2])?;
    let cand = tape.add(pre.h, hh)?;
    let cand = tape.tanh(cand);

    let keep = tape.rsub_scalar(z, 1.0);
    let keep = tape.mul(keep, h_prev)?;
    let take = tape.mul(z, cand)?;
    tape.add(keep, take)
}

pub fn gru_cell(tape: &mut Tape, x: Var, h_prev: Var, p: &GruVars) -> Result<Var> {
    let pre = gru_input_step(tape, x, p)?;
    gru_recur(tape, pre, h_prev, p)
}

/// Layer-norm gain and bias of one width, with stabilizer `eps`.
#[derive(Clone, Copy, Debug)]
pub struct LnVars {
    pub gain: Var,
    pub bias: Var,
    pub eps: f64,
}

impl LnVars {
    pub fn bind(binding: &Binding, prefix: &str, eps: f64) -> Result<Self> {
        Ok(LnVars {
            gain: binding.var(&format!("{prefix}.gain"))?,
            bias: binding.var(&format!("{prefix}.bias"))?,
            eps,
        })
    }
}

pub fn init_layer_norm(params: &mut ParamSet, prefix: &str, width: usize) {
    params.init_ones(&format!("{prefix}.gain"), &[width]);
    params.init_zeros(&format!("{prefix}.bias"), &[width]);
}

pub fn layer_norm(tape: &mut Tape, x: Var, ln: &LnVars) -> Result<Var> {
    let d = *tape.shape(x).last().unwrap_or(&0);
    check_width(tape, ln.gain, d, "layer norm gain")?;
    let n = tape.normalize(x, ln.eps)?;
    let n = tape.mul(n, ln.gain)?;
    tape.add(n, ln.bias)
}

/// One bidirectional layer: forward and backward GRUs plus the layer norm
/// applied to their concatenated outputs.
#[derive(Clone, Debug)]
pub struct BiGruLayerVars {
    pub fw: GruVars,
    pub bw: GruVars,
    pub ln: LnVars,
}

fn run_direction(
    tape: &mut Tape,
    xs: Var,
    p: &GruVars,
    reverse: bool,
) -> Result<Vec<Var>> {
    let pre = gru_input_sequence(tape, xs, p)?;
    let n = pre.len();
    let zeros = tape.constant_vec(vec![0.0; p.hidden]);
    let mut out = vec![zeros; n];
    let mut h = zeros;
    for k in 0..n {
        let t = if reverse { n - 1 - k } else { k };
        h = gru_recur(tape, pre[t], h, p)?;
        out[t] = h;
    }
    Ok(out)
}

/// Bidirectional GRU stack over `xs: [T, input]`, returning `[T, 2*hidden]`
/// from the top layer. Each layer output is `layer_norm([fw_t ; bw_t])`.
pub fn bigru_encoder_stack(tape: &mut Tape, xs: Var, layers: &[BiGruLayerVars]) -> Result<Var> {
    if layers.is_empty() {
        return contract("encoder stack needs at least one layer");
    }
    let s = tape.shape(xs).to_vec();
    if s.len() != 2 {
        return contract(format!("encoder input must be [T, d], got {s:?}"));
    }
    let mut cur = xs;
    for layer in layers {
        let fw = run_direction(tape, cur, &layer.fw, false)?;
        let bw = run_direction(tape, cur, &layer.bw, true)?;
        let mut rows = Vec::with_capacity(fw.len());
        for (f, b) in fw.into_iter().zip(bw) {
            let cat = tape.concat(&[f, b])?;
            rows.push(layer_norm(tape, cat, &layer.ln)?);
        }
        cur = tape.stack_rows(&rows)?;
    }
    Ok(cur)
}

/// Feedforward discriminator: tanh hidden layers, one linear output unit.
#[derive(Clone, Debug)]
pub struct DiscVars {
    pub hidden: Vec<(Var, Var)>,
    pub out_w: Var,
    pub out_b: Var,
    pub input: usize,
}

pub fn init_discriminator(
    params: &mut ParamSet,
    input: usize,
    hidden: usize,
    layers: usize,
    range: f64,
    rng: &mut impl Rng,
) {
    let mut width = input;
    for l in 0..layers {
        params.init_uniform(&format!("disc.{l}.w"), &[width, hidden], range, rng);
        params.init_zeros(&format!("disc.{l}.b"), &[hidden]);
        width = hidden;
    }
    params.init_uniform("disc.out.w", &[width, 1], range, rng);
    params.init_zeros("disc.out.b", &[1]);
}

impl DiscVars {
    pub fn bind(tape: &Tape, binding: &Binding, layers: usize) -> Result<Self> {
        let mut hidden = Vec::with_capacity(layers);
        for l in 0..layers {
            hidden.push((
                binding.var(&format!("disc.{l}.w"))?,
                binding.var(&format!("disc.{l}.b"))?,
            ));
        }
        let out_w = binding.var("disc.out.w")?;
        let input = match hidden.first() {
            Some(&(w, _)) => tape.shape(w)[0],
            None => tape.shape(out_w)[0],
        };
        Ok(DiscVars {
            hidden,
            out_w,
            out_b: binding.var("disc.out.b")?,
            input,
        })
    }
}

/// Pre-sigmoid logit (shape `[1]`) for a deep feature `f`.
pub fn feedforward_discriminator_body(tape: &mut Tape, f: Var, p: &DiscVars) -> Result<Var> {
    check_width(tape, f, p.input, "discriminator input")?;
    let mut h = f;
    for &(w, b) in &p.hidden {
        let a = tape.matmul(h, w)?;
        let a = tape.add(a, b)?;
        h = tape.tanh(a);
    }
    let dot = tape.matmul(h, p.out_w)?;
    tape.add(dot, p.out_b)
}
