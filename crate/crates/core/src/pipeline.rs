//! Model construction and training driven by a [`Config`], shared by the
//! command line and the acceptance suite.

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapt::train_char_decoder;
use crate::aed::{AedDims, AedParams, CharAedParams};
use crate::checkpoint::{Checkpoint, ModelKind, TrainState};
use crate::config::Config;
use crate::data::{Corpus, Lexicon};
use crate::error::{contract, Result};
use crate::train::{train_si, Optimizer};

/// Offset mixed into the config seed for the character decoder's
/// initialization, so it does not reuse the SI model's stream.
const CHAR_SEED_OFFSET: u64 = 0x0c4a_5eed;

pub fn wsu_dims(cfg: &Config, lexicon: &Lexicon) -> AedDims {
    cfg.model.dims(cfg.data.feat_dim(), lexicon.wsu_vocab())
}

pub fn char_dims(cfg: &Config, lexicon: &Lexicon) -> AedDims {
    cfg.model.dims(cfg.data.feat_dim(), lexicon.char_vocab())
}

pub fn init_si(cfg: &Config, lexicon: &Lexicon) -> Result<AedParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    AedParams::init(wsu_dims(cfg, lexicon), cfg.model.init_range, &mut rng)
}

pub fn init_char(cfg: &Config, lexicon: &Lexicon) -> Result<CharAedParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ CHAR_SEED_OFFSET);
    CharAedParams::init(char_dims(cfg, lexicon), cfg.model.init_range, &mut rng)
}

fn check_resume(ck: &Checkpoint, kind: ModelKind, dims: &AedDims, lexicon: &Lexicon) -> Result<()> {
    if ck.kind != kind {
        return contract(format!("cannot resume {kind:?} training from a {:?} checkpoint", ck.kind));
    }
    ck.check_dims(dims)?;
    ck.check_lexicon(lexicon)
}

/// Trains the SI model on the corpus training split up to
/// `cfg.train.epochs`, continuing from `resume` when given.
pub fn train_si_checkpoint(cfg: &Config, corpus: &Corpus, resume: Option<&Checkpoint>) -> Result<Checkpoint> {
    let fresh = Optimizer::from_config(&cfg.train);
    let (mut model, mut state, mut opt) = match resume {
        Some(ck) => {
            check_resume(ck, ModelKind::SiWsu, &wsu_dims(cfg, &corpus.lexicon), &corpus.lexicon)?;
            info!("resuming SI training after epoch {}", ck.state.epochs_done);
            (ck.model()?, ck.state.clone(), ck.restore_optimizer(fresh)?)
        }
        None => (
            init_si(cfg, &corpus.lexicon)?,
            TrainState {
                seed: cfg.seed,
                ..TrainState::default()
            },
            fresh,
        ),
    };
    let history = train_si(&mut model, &corpus.train, &cfg.train, state.seed, state.epochs_done, &mut opt)?;
    state.epochs_done = state.epochs_done.max(cfg.train.epochs);
    state.history.extend(history);
    let mut ck = Checkpoint::for_model(ModelKind::SiWsu, &model, &corpus.lexicon, state)?;
    ck.set_optimizer(&opt)?;
    Ok(ck)
}

/// Trains the character decoder on the frozen SI encoder up to
/// `cfg.char_train.epochs`, continuing from `resume` when given.
pub fn train_char_checkpoint(
    cfg: &Config,
    corpus: &Corpus,
    si: &AedParams,
    resume: Option<&Checkpoint>,
) -> Result<Checkpoint> {
    let fresh = Optimizer::from_config(&cfg.char_train);
    let (mut model, mut state, mut opt) = match resume {
        Some(ck) => {
            check_resume(ck, ModelKind::Char, &char_dims(cfg, &corpus.lexicon), &corpus.lexicon)?;
            let (m, enc) = ck.char_model()?;
            if enc != si.params.select(crate::aed::is_encoder_param) {
                return contract("character checkpoint was trained on a different SI encoder");
            }
            (m, ck.state.clone(), ck.restore_optimizer(fresh)?)
        }
        None => (
            init_char(cfg, &corpus.lexicon)?,
            TrainState {
                seed: cfg.seed,
                ..TrainState::default()
            },
            fresh,
        ),
    };
    let history = train_char_decoder(si, &mut model, &corpus.train, &cfg.char_train, state.seed, state.epochs_done, &mut opt)?;
    state.epochs_done = state.epochs_done.max(cfg.char_train.epochs);
    state.history.extend(history);
    let mut ck = Checkpoint::for_char(&model, si, &corpus.lexicon, state)?;
    ck.set_optimizer(&opt)?;
    Ok(ck)
}
