use proptest::prelude::*;
use sha2::{Digest, Sha256};

use super::*;

fn small_config() -> DataConfig {
    DataConfig {
        train_speakers: 2,
        heldout_speakers: 1,
        train_utts: 6,
        matched_test_utts: 2,
        adapt_utts: 4,
        test_utts: 3,
        ..DataConfig::default()
    }
}

// ---- stack_frames ----

fn seq_matrix(n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|v| v as f64 + 1.0).collect()).unwrap()
}

#[test]
fn unit_stack_and_stride_is_identity() {
    let raw = seq_matrix(5, 3);
    assert_eq!(stack_frames(&raw, 1, 1).unwrap(), raw);
}

#[test]
fn six_frames_stack_into_two() {
    let raw = seq_matrix(6, 2);
    let out = stack_frames(&raw, 3, 3).unwrap();
    assert_eq!(out.shape(), &[2, 6]);
    assert_eq!(out.row(0), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(out.row(1), &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
}

#[test]
fn tail_is_zero_padded() {
    let raw = seq_matrix(5, 2);
    let out = stack_frames(&raw, 3, 3).unwrap();
    assert_eq!(out.shape(), &[2, 6]);
    assert_eq!(out.row(1), &[7.0, 8.0, 9.0, 10.0, 0.0, 0.0]);
}

#[test]
fn stack_rejects_bad_arguments() {
    let raw = seq_matrix(4, 2);
    assert!(stack_frames(&raw, 0, 1).is_err());
    assert!(stack_frames(&raw, 1, 0).is_err());
    assert!(stack_frames(&Tensor::vector(vec![1.0, 2.0]), 1, 1).is_err());
}

proptest! {
    #[test]
    fn stacked_frames_index_raw_frames(n in 1usize..20, d in 1usize..4, stack in 1usize..5, stride in 1usize..5) {
        let raw = seq_matrix(n, d);
        let out = stack_frames(&raw, stack, stride).unwrap();
        prop_assert_eq!(out.rows(), n.div_ceil(stride));
        prop_assert_eq!(out.cols(), stack * d);
        for k in 0..out.rows() {
            for j in 0..stack {
                let src = k * stride + j;
                let got = &out.row(k)[j * d..(j + 1) * d];
                if src < n {
                    prop_assert_eq!(got, raw.row(src));
                } else {
                    prop_assert!(got.iter().all(|&v| v == 0.0));
                }
            }
        }
    }
}

// ---- lexicon ----

#[test]
fn lexicon_units_are_distinct_and_include_every_letter() {
    let cfg = DataConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lex = Lexicon::generate(&cfg, &mut rng);
    assert_eq!(lex.wsus.len(), 64);
    assert_eq!(lex.wsu_vocab(), 66);
    assert_eq!(lex.char_vocab(), 15);
    let set: BTreeSet<&String> = lex.wsus.iter().collect();
    assert_eq!(set.len(), 64);
    for c in &lex.letters {
        assert!(lex.wsus.contains(&c.to_string()));
    }
    assert!(lex.wsus.iter().all(|w| (1..=4).contains(&w.len())));
}

#[test]
fn expansion_joins_spellings_with_boundaries() {
    let lex = Lexicon {
        letters: vec!['a', 'b', 'c'],
        wsus: vec!["ab".into(), "c".into(), "a".into()],
    };
    // ids: 2 = "ab", 3 = "c", 4 = "a"; chars: a = 3, b = 4, c = 5
    assert_eq!(lex.expand(&[2, 3, EOS]).unwrap(), vec![3, 4, BOUNDARY, 5, EOS]);
    assert_eq!(lex.expand(&[4]).unwrap(), vec![3]);
    assert!(lex.expand(&[EOS, 2]).is_err());
    assert!(lex.expand(&[9]).is_err());
    assert!(lex.expand(&[SOS]).is_err());
    assert_eq!(lex.render(&[2, 3, EOS]), "ab c");
}

// ---- speakers ----

#[test]
fn speaker_transform_matches_its_singular_values() {
    let cfg = DataConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for shift in [0.0, 0.25, 0.8, 1.9] {
        let s = SpeakerProfile::sample(0, false, shift, &cfg, &mut rng);
        let n = cfg.raw_dim;
        assert!(s.condition_number() < 50.0);
        assert!(s.condition_number() <= (2.0 * shift).exp() + 1e-12);
        // trace(A^T A) = sum sigma^2 and ||A^T A||_F^2 = sum sigma^4.
        let mut ata = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                ata[i * n + j] = (0..n).map(|k| s.a[k * n + i] * s.a[k * n + j]).sum();
            }
        }
        let trace: f64 = (0..n).map(|i| ata[i * n + i]).sum();
        let fro: f64 = ata.iter().map(|v| v * v).sum();
        let s2: f64 = s.singular_values.iter().map(|v| v * v).sum();
        let s4: f64 = s.singular_values.iter().map(|v| v.powi(4)).sum();
        assert!((trace - s2).abs() < 1e-10 * s2);
        assert!((fro - s4).abs() < 1e-10 * s4);
        // Gains along random directions stay within the singular range.
        let lo = s.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        let hi = s.singular_values.iter().cloned().fold(f64::MIN, f64::max);
        for _ in 0..50 {
            let x: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
            let ax: Vec<f64> = (0..n).map(|i| (0..n).map(|k| s.a[i * n + k] * x[k]).sum()).collect();
            let r = (ax.iter().map(|v| v * v).sum::<f64>() / x.iter().map(|v| v * v).sum::<f64>()).sqrt();
            assert!(r >= lo - 1e-10 && r <= hi + 1e-10);
        }
        assert!((cfg.min_tempo..=cfg.max_tempo).contains(&s.tempo));
    }
}

#[test]
fn identity_speaker_without_noise_reproduces_prototypes() {
    let protos = vec![vec![0.0; 3], vec![0.0; 3], vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]];
    let spk = SpeakerProfile::identity(0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw = synthesize(&protos, &[2, 3], &[2, 1], &spk, &mut rng).unwrap();
    assert_eq!(raw.shape(), &[3, 3]);
    assert_eq!(raw.row(0), protos[2].as_slice());
    assert_eq!(raw.row(1), protos[2].as_slice());
    assert_eq!(raw.row(2), protos[3].as_slice());
}

// ---- corpus ----

#[test]
fn corpus_is_deterministic_in_config_and_seed() {
    let cfg = small_config();
    let a = generate_corpus(&cfg, 7).unwrap();
    let b = generate_corpus(&cfg, 7).unwrap();
    assert_eq!(a, b);
    let c = generate_corpus(&cfg, 8).unwrap();
    assert_ne!(a.train[0].x, c.train[0].x);
}

#[test]
fn corpus_utterances_satisfy_their_invariants() {
    let cfg = DataConfig::default();
    let corpus = generate_corpus(&cfg, 1).unwrap();
    assert_eq!(corpus.train.len(), 8 * cfg.train_utts);
    assert_eq!(corpus.adapt.len(), 3 * cfg.adapt_utts);
    assert_eq!(corpus.heldout_speakers(), vec![8, 9, 10]);
    for name in SPLITS {
        for u in corpus.split(name).unwrap() {
            assert_eq!(u.y.last(), Some(&EOS));
            let words = u.y.len() - 1;
            assert!((cfg.min_words..=cfg.max_words).contains(&words));
            assert!(u.y[..words].windows(2).all(|w| w[0] != w[1]));
            assert!(u.y[..words].iter().all(|&w| w >= 2 && w < corpus.lexicon.wsu_vocab()));
            assert_eq!(u.c, corpus.lexicon.expand(&u.y).unwrap());
            assert!(u.x.rows() >= u.y.len());
            assert_eq!(u.x.cols(), 24);
            let heldout = corpus.speakers[u.speaker].heldout;
            assert_eq!(heldout, name == "adapt" || name == "test");
        }
    }
    let adapt: BTreeSet<&str> = corpus.adapt.iter().map(|u| u.id.as_str()).collect();
    assert!(corpus.test.iter().all(|u| !adapt.contains(u.id.as_str())));
    for s in &corpus.speakers {
        assert!(s.condition_number() < 50.0);
    }
}

#[test]
fn adapt_set_takes_a_prefix_of_the_pool() {
    let corpus = generate_corpus(&small_config(), 3).unwrap();
    let spk = corpus.heldout_speakers()[0];
    let two = corpus.adapt_set(spk, 2).unwrap();
    let four = corpus.adapt_set(spk, 4).unwrap();
    assert_eq!(two[..], four[..2]);
    assert!(corpus.adapt_set(spk, 5).is_err());
    assert_eq!(corpus.test_set(spk).len(), 3);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        DataConfig { train_speakers: 1, ..DataConfig::default() },
        DataConfig { heldout_speakers: 0, ..DataConfig::default() },
        DataConfig { min_words: 5, max_words: 4, ..DataConfig::default() },
        DataConfig { wsus: 4, ..DataConfig::default() },
        DataConfig { heldout_shift: 2.5, ..DataConfig::default() },
        DataConfig { min_dur: 1, min_tempo: 0.4, ..DataConfig::default() },
    ];
    for cfg in bad {
        assert!(generate_corpus(&cfg, 0).is_err(), "{cfg:?}");
    }
}

// ---- coverage ----

fn utt(y: Vec<usize>, lex: &Lexicon) -> Utterance {
    Utterance {
        id: "u".into(),
        speaker: 0,
        x: Tensor::zeros(&[y.len(), 1]),
        c: lex.expand(&y).unwrap(),
        y,
    }
}

#[test]
fn set_with_every_unit_has_full_coverage() {
    let cfg = DataConfig::default();
    let lex = Lexicon::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let mut y: Vec<usize> = (2..lex.wsu_vocab()).collect();
    y.push(EOS);
    let cov = coverage_report(&[utt(y, &lex)], &lex).unwrap();
    assert_eq!(cov.wsu_coverage, 1.0);
    assert_eq!(cov.char_coverage, 1.0);
}

#[test]
fn single_short_utterance_coverage_is_counted() {
    let cfg = DataConfig::default();
    let lex = Lexicon::generate(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let a = 2 + lex.wsus.iter().position(|w| w == "a").unwrap();
    let b = 2 + lex.wsus.iter().position(|w| w == "b").unwrap();
    let cov = coverage_report(&[utt(vec![a, b, EOS], &lex)], &lex).unwrap();
    assert_eq!(cov.wsu_coverage, 2.0 / 64.0);
    // 'a', 'b' and the boundary out of 12 letters plus the boundary.
    assert_eq!(cov.char_coverage, 3.0 / 13.0);
    assert!(coverage_report(&[], &lex).is_err());
}

#[test]
fn default_adaptation_sets_show_sparse_units_and_full_characters() {
    let corpus = generate_corpus(&DataConfig::default(), 0).unwrap();
    for spk in corpus.heldout_speakers() {
        let set = corpus.adapt_set(spk, 20).unwrap();
        let cov = coverage_report(&set, &corpus.lexicon).unwrap();
        assert_eq!(cov.char_coverage, 1.0);
        assert!(cov.wsu_coverage < 0.8, "{cov:?}");
    }
}

// ---- persistence ----

fn dir_digest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let bytes = fs::read(dir.join(&n)).unwrap();
            (n, Sha256::digest(&bytes).to_vec())
        })
        .collect()
}

#[test]
fn corpus_round_trips_through_disk() {
    let corpus = generate_corpus(&small_config(), 11).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    save_corpus(&corpus, &a).unwrap();
    let loaded = load_corpus(&a).unwrap();
    assert_eq!(loaded, corpus);
    save_corpus(&loaded, &b).unwrap();
    assert_eq!(dir_digest(&a), dir_digest(&b));
    assert_eq!(dir_digest(&a).len(), 5);
}

#[test]
fn load_rejects_truncated_split() {
    let corpus = generate_corpus(&small_config(), 11).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    save_corpus(&corpus, tmp.path()).unwrap();
    let p = tmp.path().join("test.bin");
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_corpus(tmp.path()), Err(Error::Format(_))));
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_corpus(tmp.path()), Err(Error::Format(_))));
}
