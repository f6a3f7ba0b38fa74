//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamSet};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates sampled per tensor; tensors at or below this size are
    /// checked exhaustively.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            coords_per_tensor: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    /// Analytic and central-difference values at the worst coordinate.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coords_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Records a loss on `tape` and returns it with the binding of `params`.
/// Entries bound as tracked are the ones checked.
pub trait LossFn: Fn(&ParamSet, &mut Tape) -> Result<(Var, Binding)> {}
impl<F: Fn(&ParamSet, &mut Tape) -> Result<(Var, Binding)>> LossFn for F {}

fn evaluate(loss_fn: &impl LossFn, params: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = loss_fn(params, &mut tape)?;
    Ok(tape.scalar_value(loss))
}

/// Compares the tape gradient of `loss_fn` against central differences over
/// sampled coordinates of every tracked parameter.
pub fn finite_diff_check(
    loss_fn: impl LossFn,
    params: &ParamSet,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::Contract(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    let mut tape = Tape::new();
    let (loss, binding) = loss_fn(params, &mut tape)?;
    let base = tape.scalar_value(loss);
    let grads = tape.backward(loss)?;
    let analytic = binding.gradients(&tape, &grads);

    let again = evaluate(&loss_fn, params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coords_checked: 0,
    };
    for (name, grad) in &analytic {
        let n = grad.len();
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = params.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + opts.epsilon;
            let plus = evaluate(&loss_fn, &probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig - opts.epsilon;
            let minus = evaluate(&loss_fn, &probe)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let err = relative_error(grad[i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.worst_analytic = grad[i];
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
