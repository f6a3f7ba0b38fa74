use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::DataConfig;
use crate::train::Adam;

fn dims(vocab: usize) -> AedDims {
    AedDims {
        feat: 4,
        vocab,
        enc_layers: 1,
        enc_hidden: 5,
        dim: 6,
        dec_layers: 2,
        att_dim: 4,
        ln_eps: 1e-5,
    }
}

fn lexicon() -> Lexicon {
    let cfg = DataConfig {
        letters: 4,
        wsus: 10,
        ..DataConfig::default()
    };
    Lexicon::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(3))
}

fn si() -> AedParams {
    AedParams::init(dims(12), 0.3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
}

fn files(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    (
        std::fs::read(dir.join("manifest.json")).unwrap(),
        std::fs::read(dir.join("params.bin")).unwrap(),
    )
}

fn assert_round_trip(ck: &Checkpoint) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ck.save(a.path()).unwrap();
    let back = Checkpoint::load(a.path()).unwrap();
    assert_eq!(&back, ck);
    back.save(b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
}

fn state() -> TrainState {
    TrainState {
        seed: 9,
        epochs_done: 2,
        adam_t: None,
        history: vec![3.25, 1.0 / 3.0],
        disc_history: Vec::new(),
    }
}

#[test]
fn wsu_checkpoint_round_trips_byte_for_byte() {
    let m = si();
    let ck = Checkpoint::for_model(ModelKind::SiWsu, &m, &lexicon(), state()).unwrap();
    assert_round_trip(&ck);
    let back = ck.model().unwrap();
    assert_eq!(back.params.fingerprint_bytes(|_| true), m.params.fingerprint_bytes(|_| true));
    assert_eq!(back.dims, m.dims);
}

#[test]
fn adam_state_survives_a_round_trip() {
    let mut m = si();
    let mut adam = Adam::new(0.01);
    for (_, t) in m.params.iter_mut() {
        let n = t.numel();
        *t.grad_mut() = (0..n).map(|i| i as f64 * 0.01 - 0.2).collect();
    }
    adam.step(&mut m.params, &|_| true);
    m.params.clear_grad();
    let mut ck = Checkpoint::for_model(ModelKind::SiWsu, &m, &lexicon(), state()).unwrap();
    ck.set_optimizer(&Optimizer::Adam(adam.clone())).unwrap();
    assert_eq!(ck.state.adam_t, Some(1));
    assert_round_trip(&ck);
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.model().unwrap().params.len(), m.params.len());
    let restored = back.restore_optimizer(Optimizer::Adam(Adam::new(0.01))).unwrap();
    assert_eq!(restored, Optimizer::Adam(adam));
    // Replacing the optimizer drops the stored moments.
    ck.set_optimizer(&Optimizer::Sgd(crate::train::Sgd { lr: 0.1 })).unwrap();
    assert_eq!(ck.params.len(), m.params.len());
    assert!(ck.restore_optimizer(Optimizer::Adam(Adam::new(0.01))).is_err());
}

#[test]
fn char_checkpoint_carries_the_encoder_it_was_trained_on() {
    let m = si();
    let lex = lexicon();
    let cd = AedDims {
        vocab: lex.char_vocab(),
        ..m.dims.clone()
    };
    let c = CharAedParams::init(cd, 0.3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let ck = Checkpoint::for_char(&c, &m, &lex, state()).unwrap();
    assert_round_trip(&ck);
    let (back, enc) = ck.char_model().unwrap();
    assert_eq!(back.params.fingerprint_bytes(|_| true), c.params.fingerprint_bytes(|_| true));
    assert_eq!(enc.fingerprint_bytes(|_| true), m.params.fingerprint_bytes(is_encoder_param));
    assert!(ck.model().is_err());
}

#[test]
fn disc_checkpoint_round_trips() {
    let mut p = ParamSet::new();
    crate::nn::init_discriminator(&mut p, 6, 4, 2, 0.3, &mut ChaCha8Rng::seed_from_u64(5));
    let ck = Checkpoint::for_disc(&p, DiscDims { input: 6, hidden: 4, layers: 2 }, TrainState::default());
    assert_round_trip(&ck);
    assert!(ck.dims().is_err());
    let bad = Checkpoint::for_disc(&p, DiscDims { input: 6, hidden: 4, layers: 3 }, TrainState::default());
    let dir = tempfile::tempdir().unwrap();
    bad.save(dir.path()).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
}

fn saved() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    Checkpoint::for_model(ModelKind::SdWsu, &si(), &lexicon(), state())
        .unwrap()
        .save(dir.path())
        .unwrap();
    dir
}

fn edit_manifest(dir: &Path, f: impl Fn(&mut serde_json::Value)) {
    let p = dir.join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn load_rejects_other_versions() {
    let dir = saved();
    edit_manifest(dir.path(), |v| v["format_version"] = 2.into());
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn load_rejects_shape_mismatches() {
    let dir = saved();
    // Architecture says 6 wide; entries were saved 6 wide. Claim 7.
    edit_manifest(dir.path(), |v| v["config"]["dim"] = 7.into());
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));

    let dir = saved();
    edit_manifest(dir.path(), |v| {
        let e = &mut v["entries"][0]["shape"];
        let first = e[0].as_u64().unwrap();
        e[0] = (first + 1).into();
    });
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn load_rejects_truncated_values() {
    let dir = saved();
    let p = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format(_))));
}

#[test]
fn architecture_and_lexicon_checks() {
    let ck = Checkpoint::load(saved().path()).unwrap();
    assert!(ck.check_dims(&dims(12)).is_ok());
    assert!(matches!(ck.check_dims(&dims(13)), Err(Error::Format(_))));
    assert!(ck.check_lexicon(&lexicon()).is_ok());
    let other = Lexicon::generate(
        &DataConfig {
            letters: 4,
            wsus: 10,
            ..DataConfig::default()
        },
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    assert!(ck.check_lexicon(&other).is_err());
}
