//! Finite-difference verification of every training objective on a toy
//! model: 2-layer encoder of width 8, 12 output units, six input frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adapt::{
    asa_disc_loss, asa_sd_loss, char_item_loss, encoded, init_disc, interpolated_targets, kld_item_loss,
    mtl_item_loss, si_reference, AsaObjective,
};
use crate::aed::{AedDims, AedParams, CharAedParams, EOS};
use crate::autodiff::{finite_diff_check, GradCheckOptions, GradCheckReport, Tape, Tensor};
use crate::data::{DataConfig, Lexicon, Utterance};
use crate::error::Result;
use crate::params::ParamSet;
use crate::train::utterance_loss;

/// Largest relative error accepted by the suite.
pub const TOLERANCE: f64 = 1e-4;

const FRAMES: usize = 6;
const FEAT: usize = 4;
const DISC_LAYERS: usize = 2;

#[derive(Clone, Debug)]
pub struct ObjectiveCheck {
    pub objective: &'static str,
    pub report: GradCheckReport,
}

impl ObjectiveCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

fn toy_dims(vocab: usize) -> AedDims {
    AedDims {
        feat: FEAT,
        vocab,
        enc_layers: 2,
        enc_hidden: 8,
        dim: 8,
        dec_layers: 2,
        att_dim: 8,
        ln_eps: 1e-5,
    }
}

fn toy_lexicon() -> Lexicon {
    let cfg = DataConfig {
        letters: 4,
        wsus: 10,
        ..DataConfig::default()
    };
    Lexicon::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(3))
}

struct Fixture {
    si: AedParams,
    sd: AedParams,
    char_model: CharAedParams,
    disc: ParamSet,
    u: Utterance,
}

fn fixture(seed: u64) -> Result<Fixture> {
    let lex = toy_lexicon();
    let vocab = lex.wsu_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let si = AedParams::init(toy_dims(vocab), 0.4, &mut rng)?;
    let mut sd = si.clone();
    for (_, t) in sd.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let char_model = CharAedParams::init(toy_dims(lex.char_vocab()), 0.3, &mut rng)?;
    let x = Tensor::matrix(FRAMES, FEAT, (0..FRAMES * FEAT).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut y: Vec<usize> = (0..3).map(|_| rng.random_range(2..vocab)).collect();
    y.push(EOS);
    let c = lex.expand(&y)?;
    let disc = init_disc(8, 6, DISC_LAYERS, 0.5, seed);
    Ok(Fixture {
        si,
        sd,
        char_model,
        disc,
        u: Utterance {
            id: "gradcheck".into(),
            speaker: 0,
            x,
            y,
            c,
        },
    })
}

/// Checks the gradients of the WSU loss, the interpolated-target loss, the
/// discriminator loss, the adversarial composite, the character loss and
/// the multi-task objective.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<ObjectiveCheck>> {
    let f = fixture(seed)?;
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let (sd, u) = (&f.sd, &f.u);
    let reference = si_reference(&f.si, u)?;
    let targets = interpolated_targets(&u.y, &reference.posteriors, 0.2)?;
    let feats = &reference.features;
    let h = encoded(&f.si, u)?;
    let mut out = Vec::new();
    let mut push = |objective, report| out.push(ObjectiveCheck { objective, report });

    push(
        "wsu",
        finite_diff_check(|p: &ParamSet, t: &mut Tape| utterance_loss(&sd.dims, p, u, t), &sd.params, &opts)?,
    );
    push(
        "kld",
        finite_diff_check(|p: &ParamSet, t: &mut Tape| kld_item_loss(sd, p, u, &targets, t), &sd.params, &opts)?,
    );
    push(
        "disc",
        finite_diff_check(|p: &ParamSet, t: &mut Tape| asa_disc_loss(sd, p, DISC_LAYERS, u, feats, t), &f.disc, &opts)?,
    );
    push(
        "asa",
        finite_diff_check(
            |p: &ParamSet, t: &mut Tape| asa_sd_loss(sd, p, &f.disc, DISC_LAYERS, u, feats, 0.5, AsaObjective::Explicit, t),
            &sd.params,
            &opts,
        )?,
    );
    let cm = &f.char_model;
    push(
        "chr",
        finite_diff_check(|p: &ParamSet, t: &mut Tape| char_item_loss(&cm.dims, p, &h, &u.c, t), &cm.params, &opts)?,
    );
    push(
        "mtl",
        finite_diff_check(|p: &ParamSet, t: &mut Tape| mtl_item_loss(sd, p, cm, u, 0.5, t), &sd.params, &opts)?,
    );
    Ok(out)
}
