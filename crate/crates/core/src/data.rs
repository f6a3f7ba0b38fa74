//! Synthetic multi-speaker corpus: a toy lexicon of word-like units, WSU
//! sequences drawn from a Zipf law, per-unit prototype frames distorted by
//! per-speaker affine transforms, and frame stacking.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::aed::{EOS, SOS};
use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};

/// Character ids: `sos`, `eos`, the word boundary, then the letters.
pub const BOUNDARY: usize = 2;
const FIRST_LETTER: usize = 3;
/// WSU ids: `sos`, `eos`, then the lexicon entries.
const FIRST_WSU: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub letters: usize,
    pub wsus: usize,
    pub max_wsu_chars: usize,
    pub raw_dim: usize,
    pub stack: usize,
    pub stride: usize,
    pub train_speakers: usize,
    pub heldout_speakers: usize,
    pub train_utts: usize,
    pub matched_test_utts: usize,
    pub adapt_utts: usize,
    pub test_utts: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Unit durations, in stacked frames.
    pub min_dur: usize,
    pub max_dur: usize,
    pub zipf_exponent: f64,
    pub noise: f64,
    pub train_shift: f64,
    pub heldout_shift: f64,
    pub min_tempo: f64,
    pub max_tempo: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            letters: 12,
            wsus: 64,
            max_wsu_chars: 4,
            raw_dim: 8,
            stack: 3,
            stride: 3,
            train_speakers: 8,
            heldout_speakers: 3,
            train_utts: 700,
            matched_test_utts: 25,
            adapt_utts: 40,
            test_utts: 80,
            min_words: 2,
            max_words: 8,
            min_dur: 2,
            max_dur: 5,
            zipf_exponent: 1.0,
            noise: 0.3,
            train_shift: 0.1,
            heldout_shift: 0.13,
            min_tempo: 0.9,
            max_tempo: 1.1,
        }
    }
}

impl DataConfig {
    pub fn feat_dim(&self) -> usize {
        self.stack * self.raw_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_speakers < 2 || self.heldout_speakers < 1 {
            return contract("need at least 2 training and 1 held-out speaker");
        }
        if self.letters == 0 || self.letters > 26 {
            return contract("letters must be in 1..=26");
        }
        if self.max_wsu_chars == 0 || self.wsus == 0 {
            return contract("lexicon must be non-empty");
        }
        let distinct: f64 = (1..=self.max_wsu_chars)
            .map(|k| (self.letters as f64).powi(k as i32))
            .sum();
        if (self.wsus as f64) > distinct || self.wsus < self.letters {
            return contract(format!(
                "cannot build {} distinct units over {} letters",
                self.wsus, self.letters
            ));
        }
        if self.raw_dim == 0 || self.stack == 0 || self.stride == 0 {
            return contract("raw_dim, stack and stride must be positive");
        }
        if self.min_words < 1 || self.min_words > self.max_words {
            return contract("need 1 <= min_words <= max_words");
        }
        if self.min_words < 2 && self.wsus < 2 {
            return contract("need two units to avoid repeats");
        }
        if self.min_dur < 1 || self.min_dur > self.max_dur {
            return contract("need 1 <= min_dur <= max_dur");
        }
        if !(self.min_tempo > 0.0 && self.min_tempo <= self.max_tempo) {
            return contract("need 0 < min_tempo <= max_tempo");
        }
        // A unit must keep at least one stacked frame per label at the
        // fastest tempo.
        let raw = (self.min_dur as f64 * self.min_tempo * self.stride as f64).round();
        if raw < self.stride as f64 {
            return contract("min_dur at min_tempo is shorter than one stacked frame");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("train_shift", self.train_shift),
            ("heldout_shift", self.heldout_shift),
            ("zipf_exponent", self.zipf_exponent),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return contract(format!("{name} must be finite and non-negative"));
            }
        }
        if self.train_shift.max(self.heldout_shift) > 1.9 {
            return contract("shift above 1.9 would break the conditioning bound");
        }
        Ok(())
    }
}

/// Letters, units spelled with them, and the unit→character expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub letters: Vec<char>,
    /// Spelling of unit id `FIRST_WSU + i`, in Zipf rank order.
    pub wsus: Vec<String>,
}

impl Lexicon {
    /// Every single letter is a unit; the rest are distinct random strings
    /// of 2..=max_chars letters. Order is shuffled so rank does not follow
    /// length.
    pub fn generate(cfg: &DataConfig, rng: &mut impl Rng) -> Self {
        let letters: Vec<char> = (0..cfg.letters).map(|i| (b'a' + i as u8) as char).collect();
        let mut seen: BTreeSet<String> = letters.iter().map(|c| c.to_string()).collect();
        let mut wsus: Vec<String> = letters.iter().map(|c| c.to_string()).collect();
        while wsus.len() < cfg.wsus {
            let len = rng.random_range(2..=cfg.max_wsu_chars.max(2));
            let s: String = (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
            if seen.insert(s.clone()) {
                wsus.push(s);
            }
        }
        wsus.shuffle(rng);
        Lexicon { letters, wsus }
    }

    /// WSU vocabulary size including `sos` and `eos`.
    pub fn wsu_vocab(&self) -> usize {
        FIRST_WSU + self.wsus.len()
    }

    /// Character vocabulary size including `sos`, `eos` and the boundary.
    pub fn char_vocab(&self) -> usize {
        FIRST_LETTER + self.letters.len()
    }

    pub fn char_id(&self, c: char) -> Result<usize> {
        match self.letters.iter().position(|&l| l == c) {
            Some(i) => Ok(FIRST_LETTER + i),
            None => contract(format!("character {c:?} not in lexicon")),
        }
    }

    pub fn wsu_spelling(&self, id: usize) -> Result<&str> {
        if !(FIRST_WSU..self.wsu_vocab()).contains(&id) {
            return contract(format!("unit id {id} is not a lexicon entry"));
        }
        Ok(&self.wsus[id - FIRST_WSU])
    }

    /// Characters of each unit joined by boundaries; a trailing `eos` in
    /// `y` maps to a trailing `eos`.
    pub fn expand(&self, y: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (i, &w) in y.iter().enumerate() {
            if w == EOS {
                if i + 1 != y.len() {
                    return contract("eos before the end of a label sequence");
                }
                out.push(EOS);
                break;
            }
            if i > 0 {
                out.push(BOUNDARY);
            }
            for c in self.wsu_spelling(w)?.chars() {
                out.push(self.char_id(c)?);
            }
        }
        Ok(out)
    }

    /// Human-readable rendering of unit ids, reserved tokens dropped.
    pub fn render(&self, y: &[usize]) -> String {
        y.iter()
            .filter(|&&w| w != SOS && w != EOS)
            .map(|&w| self.wsu_spelling(w).unwrap_or("?"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Per-speaker distortion of the raw frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: usize,
    pub heldout: bool,
    /// Row-major `[raw_dim, raw_dim]`; frame `= A (proto + noise) + b`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Singular values of `a`, by construction.
    pub singular_values: Vec<f64>,
    pub tempo: f64,
    pub noise: f64,
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Orthonormal columns from `I + scale * G` by Gram-Schmidt.
fn near_identity_rotation(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            (0..n)
                .map(|i| if i == j { 1.0 } else { 0.0 } + scale * gaussian(rng))
                .collect()
        })
        .collect();
    for j in 0..n {
        for k in 0..j {
            let dot: f64 = (0..n).map(|i| cols[j][i] * cols[k][i]).sum();
            for i in 0..n {
                cols[j][i] -= dot * cols[k][i];
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut cols[j] {
            *v /= norm;
        }
    }
    let mut m = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            m[i * n + j] = col[i];
        }
    }
    m
}

impl SpeakerProfile {
    pub fn identity(id: usize, dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        SpeakerProfile {
            id,
            heldout: false,
            a,
            b: vec![0.0; dim],
            singular_values: vec![1.0; dim],
            tempo: 1.0,
            noise: 0.0,
        }
    }

    /// `A = Q1 diag(exp(±shift)) Q2^T` with random signs, so the condition
    /// number is at most `exp(2 * shift)`; `b` points in a random direction
    /// with norm `shift * sqrt(n)`. Every speaker drawn with the same
    /// `shift` is equally far from the identity.
    pub fn sample(id: usize, heldout: bool, shift: f64, cfg: &DataConfig, rng: &mut impl Rng) -> Self {
        let n = cfg.raw_dim;
        let q1 = near_identity_rotation(n, shift, rng);
        let q2 = near_identity_rotation(n, shift, rng);
        let sv: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.5) { shift.exp() } else { (-shift).exp() })
            .collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| q1[i * n + k] * sv[k] * q2[j * n + k]).sum();
            }
        }
        let dir: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let b = dir.iter().map(|v| shift * (n as f64).sqrt() * v / norm).collect();
        let tempo = rng.random_range(cfg.min_tempo..=cfg.max_tempo);
        SpeakerProfile {
            id,
            heldout,
            a,
            b,
            singular_values: sv,
            tempo,
            noise: cfg.noise,
        }
    }

    pub fn condition_number(&self) -> f64 {
        let max = self.singular_values.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.singular_values.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            out[i] = (0..n).map(|k| self.a[i * n + k] * v[k]).sum::<f64>() + self.b[i];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: usize,
    /// Stacked frames `[T, stack * raw_dim]`.
    pub x: Tensor,
    /// Unit ids ending in `eos`.
    pub y: Vec<usize>,
    /// Character ids ending in `eos`.
    pub c: Vec<usize>,
}

/// Output frame `k` concatenates raw frames `[k*stride, k*stride+stack)`,
/// zero-padded past the end.
pub fn stack_frames(raw: &Tensor, stack: usize, stride: usize) -> Result<Tensor> {
    if raw.shape().len() != 2 {
        return contract(format!("stack_frames needs [N, d], got {:?}", raw.shape()));
    }
    if stack == 0 || stride == 0 {
        return contract("stack and stride must be at least 1");
    }
    let (n, d) = (raw.rows(), raw.cols());
    let out_rows = n.div_ceil(stride);
    let width = stack * d;
    let mut data = vec![0.0; out_rows * width];
    for k in 0..out_rows {
        for j in 0..stack {
            let src = k * stride + j;
            if src < n {
                data[k * width + j * d..k * width + (j + 1) * d].copy_from_slice(raw.row(src));
            }
        }
    }
    Tensor::matrix(out_rows, width, data)
}

/// Raw frames for a unit sequence: each unit holds its prototype for
/// `durations[i]` frames, with per-frame Gaussian noise, then the speaker
/// transform.
pub fn synthesize(
    prototypes: &[Vec<f64>],
    units: &[usize],
    durations: &[usize],
    speaker: &SpeakerProfile,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if units.len() != durations.len() || units.is_empty() {
        return contract("units and durations must align and be non-empty");
    }
    let d = speaker.b.len();
    let total: usize = durations.iter().sum();
    let mut data = vec![0.0; total * d];
    let mut row = 0;
    let mut v = vec![0.0; d];
    for (&u, &dur) in units.iter().zip(durations) {
        let proto = prototypes
            .get(u)
            .ok_or_else(|| Error::Contract(format!("no prototype for unit {u}")))?;
        for _ in 0..dur {
            for k in 0..d {
                v[k] = proto[k] + speaker.noise * gaussian(rng);
            }
            speaker.apply(&v, &mut data[row * d..(row + 1) * d]);
            row += 1;
        }
    }
    Tensor::matrix(total, d, data)
}

/// Unit-id sampler over lexicon ranks with no immediate repeats.
struct UnitSampler {
    zipf: Zipf<f64>,
}

impl UnitSampler {
    fn new(cfg: &DataConfig) -> Result<Self> {
        let zipf = Zipf::new(cfg.wsus as f64, cfg.zipf_exponent)
            .map_err(|e| Error::Contract(format!("zipf: {e}")))?;
        Ok(UnitSampler { zipf })
    }

    fn sequence(&self, cfg: &DataConfig, rng: &mut impl Rng) -> Vec<usize> {
        let n = rng.random_range(cfg.min_words..=cfg.max_words);
        let mut out: Vec<usize> = Vec::with_capacity(n);
        while out.len() < n {
            let id = FIRST_WSU + self.zipf.sample(rng) as usize - 1;
            if out.last() != Some(&id) {
                out.push(id);
            }
        }
        out
    }
}

/// The full synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: DataConfig,
    pub seed: u64,
    pub lexicon: Lexicon,
    /// Indexed by unit id; rows for `sos`/`eos` are unused.
    pub prototypes: Vec<Vec<f64>>,
    pub speakers: Vec<SpeakerProfile>,
    pub train: Vec<Utterance>,
    /// Unseen utterances from the training speakers.
    pub matched_test: Vec<Utterance>,
    /// Adaptation pools of the held-out speakers.
    pub adapt: Vec<Utterance>,
    /// Test sets of the held-out speakers.
    pub test: Vec<Utterance>,
}

pub const SPLITS: [&str; 4] = ["train", "matched_test", "adapt", "test"];

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Utterance]> {
        match name {
            "train" => Ok(&self.train),
            "matched_test" => Ok(&self.matched_test),
            "adapt" => Ok(&self.adapt),
            "test" => Ok(&self.test),
            _ => contract(format!("unknown split {name}")),
        }
    }

    pub fn heldout_speakers(&self) -> Vec<usize> {
        self.speakers.iter().filter(|s| s.heldout).map(|s| s.id).collect()
    }

    /// The first `n` adaptation utterances of `speaker`.
    pub fn adapt_set(&self, speaker: usize, n: usize) -> Result<Vec<Utterance>> {
        let all: Vec<Utterance> = self.adapt.iter().filter(|u| u.speaker == speaker).cloned().collect();
        if all.len() < n {
            return contract(format!(
                "speaker {speaker} has {} adaptation utterances, {n} requested",
                all.len()
            ));
        }
        Ok(all.into_iter().take(n).collect())
    }

    pub fn test_set(&self, speaker: usize) -> Vec<Utterance> {
        self.test.iter().filter(|u| u.speaker == speaker).cloned().collect()
    }
}

fn make_utterance(
    id: String,
    speaker: &SpeakerProfile,
    cfg: &DataConfig,
    lexicon: &Lexicon,
    prototypes: &[Vec<f64>],
    sampler: &UnitSampler,
    rng: &mut impl Rng,
) -> Result<Utterance> {
    let units = sampler.sequence(cfg, rng);
    let durations: Vec<usize> = units
        .iter()
        .map(|_| {
            let d = rng.random_range(cfg.min_dur..=cfg.max_dur) as f64;
            (d * speaker.tempo * cfg.stride as f64).round() as usize
        })
        .collect();
    let raw = synthesize(prototypes, &units, &durations, speaker, rng)?;
    let x = stack_frames(&raw, cfg.stack, cfg.stride)?;
    let mut y = units;
    y.push(EOS);
    let c = lexicon.expand(&y)?;
    if x.rows() < y.len() {
        return contract(format!("utterance {id}: {} frames for {} labels", x.rows(), y.len()));
    }
    Ok(Utterance {
        id,
        speaker: speaker.id,
        x,
        y,
        c,
    })
}

/// Deterministic in `(cfg, seed)`. Training speakers come first, held-out
/// speakers after; held-out speakers use the larger shift.
pub fn generate_corpus(cfg: &DataConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::generate(cfg, &mut rng);
    let mut prototypes = vec![vec![0.0; cfg.raw_dim]; FIRST_WSU];
    for _ in 0..cfg.wsus {
        prototypes.push((0..cfg.raw_dim).map(|_| gaussian(&mut rng)).collect());
    }
    let n_spk = cfg.train_speakers + cfg.heldout_speakers;
    let speakers: Vec<SpeakerProfile> = (0..n_spk)
        .map(|id| {
            let heldout = id >= cfg.train_speakers;
            let shift = if heldout { cfg.heldout_shift } else { cfg.train_shift };
            SpeakerProfile::sample(id, heldout, shift, cfg, &mut rng)
        })
        .collect();
    let sampler = UnitSampler::new(cfg)?;
    let mut corpus = Corpus {
        config: cfg.clone(),
        seed,
        lexicon,
        prototypes,
        speakers,
        train: Vec::new(),
        matched_test: Vec::new(),
        adapt: Vec::new(),
        test: Vec::new(),
    };
    for spk in corpus.speakers.clone() {
        let plan: &[(&str, usize)] = if spk.heldout {
            &[("adapt", cfg.adapt_utts), ("test", cfg.test_utts)]
        } else {
            &[("train", cfg.train_utts), ("matched_test", cfg.matched_test_utts)]
        };
        for &(split, n) in plan {
            for i in 0..n {
                let id = format!("s{:02}-{split}-{i:04}", spk.id);
                let u = make_utterance(
                    id,
                    &spk,
                    cfg,
                    &corpus.lexicon,
                    &corpus.prototypes,
                    &sampler,
                    &mut rng,
                )?;
                match split {
                    "train" => corpus.train.push(u),
                    "matched_test" => corpus.matched_test.push(u),
                    "adapt" => corpus.adapt.push(u),
                    _ => corpus.test.push(u),
                }
            }
        }
    }
    check_split_hygiene(&corpus)?;
    Ok(corpus)
}

fn check_split_hygiene(c: &Corpus) -> Result<()> {
    let adapt: BTreeSet<&str> = c.adapt.iter().map(|u| u.id.as_str()).collect();
    if let Some(u) = c.test.iter().find(|u| adapt.contains(u.id.as_str())) {
        return contract(format!("utterance {} is in both adaptation and test sets", u.id));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coverage {
    pub wsu_coverage: f64,
    pub char_coverage: f64,
}

/// Fraction of lexicon units, and of characters (letters plus boundary),
/// seen at least once in `utts`.
pub fn coverage_report(utts: &[Utterance], lexicon: &Lexicon) -> Result<Coverage> {
    if utts.is_empty() {
        return contract("coverage of an empty set");
    }
    let wsus: BTreeSet<usize> = utts
        .iter()
        .flat_map(|u| u.y.iter().copied())
        .filter(|&w| w >= FIRST_WSU)
        .collect();
    let chars: BTreeSet<usize> = utts
        .iter()
        .flat_map(|u| u.c.iter().copied())
        .filter(|&c| c >= BOUNDARY)
        .collect();
    Ok(Coverage {
        wsu_coverage: wsus.len() as f64 / lexicon.wsus.len() as f64,
        char_coverage: chars.len() as f64 / (lexicon.char_vocab() - BOUNDARY) as f64,
    })
}

// ---- on-disk form ----

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UttEntry {
    id: String,
    speaker: usize,
    frames: usize,
    /// Offset into the split file, in values.
    offset: usize,
    y: Vec<usize>,
    c: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusManifest {
    format_version: u32,
    seed: u64,
    config: DataConfig,
    lexicon: Lexicon,
    prototypes: Vec<Vec<f64>>,
    speakers: Vec<SpeakerProfile>,
    feat_dim: usize,
    splits: BTreeMap<String, Vec<UttEntry>>,
}

/// Writes `manifest.json` and one `<split>.bin` of little-endian `f64`
/// frames per split.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let feat = corpus.config.feat_dim();
    let mut splits = BTreeMap::new();
    for name in SPLITS {
        let mut bytes = Vec::new();
        let mut entries = Vec::new();
        let mut offset = 0;
        for u in corpus.split(name)? {
            for v in u.x.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(UttEntry {
                id: u.id.clone(),
                speaker: u.speaker,
                frames: u.x.rows(),
                offset,
                y: u.y.clone(),
                c: u.c.clone(),
            });
            offset += u.x.numel();
        }
        fs::write(dir.join(format!("{name}.bin")), bytes)?;
        splits.insert(name.to_string(), entries);
    }
    let manifest = CorpusManifest {
        format_version: CORPUS_FORMAT_VERSION,
        seed: corpus.seed,
        config: corpus.config.clone(),
        lexicon: corpus.lexicon.clone(),
        prototypes: corpus.prototypes.clone(),
        speakers: corpus.speakers.clone(),
        feat_dim: feat,
        splits,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub(crate) fn read_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "corpus format version {} (expected {CORPUS_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let feat = manifest.feat_dim;
    let mut corpus = Corpus {
        config: manifest.config,
        seed: manifest.seed,
        lexicon: manifest.lexicon,
        prototypes: manifest.prototypes,
        speakers: manifest.speakers,
        train: Vec::new(),
        matched_test: Vec::new(),
        adapt: Vec::new(),
        test: Vec::new(),
    };
    let mut splits = manifest.splits;
    for name in SPLITS {
        let values = read_f64s(&fs::read(dir.join(format!("{name}.bin")))?)?;
        let entries = splits
            .remove(name)
            .ok_or_else(|| Error::Format(format!("manifest lacks split {name}")))?;
        let mut utts = Vec::with_capacity(entries.len());
        for e in entries {
            let end = e.offset + e.frames * feat;
            if end > values.len() {
                return Err(Error::Format(format!("utterance {} runs past {name}.bin", e.id)));
            }
            utts.push(Utterance {
                x: Tensor::matrix(e.frames, feat, values[e.offset..end].to_vec())?,
                id: e.id,
                speaker: e.speaker,
                y: e.y,
                c: e.c,
            });
        }
        match name {
            "train" => corpus.train = utts,
            "matched_test" => corpus.matched_test = utts,
            "adapt" => corpus.adapt = utts,
            _ => corpus.test = utts,
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests;
