//! Word error rate over unit sequences and the adaptation experiment
//! harness that produces the results table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{adapt_labelled, hypothesis_labels, AdaptJob, Method};
use crate::aed::{beam_decode, AedParams, CharAedParams, EOS};
use crate::config::{Config, DecodeConfig, Supervision};
use crate::data::{Corpus, Utterance};
use crate::error::{contract, Error, Result};

/// Edit operations of one alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
}

impl EditCounts {
    pub fn cost(&self) -> usize {
        self.sub + self.del + self.ins
    }

    // Lower is better: total cost, then fewer insert/delete operations.
    fn key(&self) -> (usize, usize, usize) {
        (self.cost(), self.del + self.ins, self.del)
    }
}

/// Minimum-cost alignment of `hyp` against `reference`. Among alignments of
/// equal cost the one with the most substitutions wins.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let m = hyp.len();
    let mut prev: Vec<EditCounts> = (0..=m).map(|j| EditCounts { ins: j, ..Default::default() }).collect();
    for (i, r) in reference.iter().enumerate() {
        let mut cur = Vec::with_capacity(m + 1);
        cur.push(EditCounts { del: i + 1, ..Default::default() });
        for (j, h) in hyp.iter().enumerate() {
            let mut diag = prev[j];
            if r != h {
                diag.sub += 1;
            }
            let mut up = prev[j + 1];
            up.del += 1;
            let mut left = cur[j];
            left.ins += 1;
            let best = [diag, up, left].into_iter().min_by_key(EditCounts::key).unwrap();
            cur.push(best);
        }
        prev = cur;
    }
    prev[m]
}

/// Error counts against `words` reference units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
    pub words: usize,
}

impl Counts {
    pub fn add_edits(&mut self, e: EditCounts, words: usize) {
        self.sub += e.sub;
        self.del += e.del;
        self.ins += e.ins;
        self.words += words;
    }

    pub fn merge(&mut self, o: &Counts) {
        self.sub += o.sub;
        self.del += o.del;
        self.ins += o.ins;
        self.words += o.words;
    }

    pub fn errors(&self) -> usize {
        self.sub + self.del + self.ins
    }

    /// Percent; zero for an empty reference without errors, infinite for
    /// one with insertions.
    pub fn wer(&self) -> f64 {
        if self.words == 0 {
            return if self.errors() == 0 { 0.0 } else { f64::INFINITY };
        }
        100.0 * self.errors() as f64 / self.words as f64
    }
}

/// Unit sequence of one utterance, without `eos`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub speaker: usize,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_speaker: BTreeMap<usize, Counts>,
    pub total: Counts,
    pub wer: f64,
}

/// Scores `hyps` against `refs`, matched by position.
pub fn score(refs: &[Transcript], hyps: &[Transcript]) -> Result<ScoreReport> {
    if refs.len() != hyps.len() {
        return contract(format!("{} references but {} hypotheses", refs.len(), hyps.len()));
    }
    let mut per_speaker: BTreeMap<usize, Counts> = BTreeMap::new();
    for (r, h) in refs.iter().zip(hyps) {
        if r.id != h.id {
            return contract(format!("reference {} paired with hypothesis {}", r.id, h.id));
        }
        let e = edit_distance(&r.tokens, &h.tokens);
        per_speaker.entry(r.speaker).or_default().add_edits(e, r.tokens.len());
    }
    let mut total = Counts::default();
    for c in per_speaker.values() {
        total.merge(c);
    }
    Ok(ScoreReport {
        per_speaker,
        wer: total.wer(),
        total,
    })
}

pub fn reference_transcripts(utts: &[Utterance]) -> Vec<Transcript> {
    utts.iter()
        .map(|u| Transcript {
            id: u.id.clone(),
            speaker: u.speaker,
            tokens: u.y.iter().copied().filter(|&t| t != EOS).collect(),
        })
        .collect()
}

/// One-best beam decode of every utterance.
pub fn decode_transcripts(model: &AedParams, utts: &[Utterance], decode: &DecodeConfig) -> Result<Vec<Transcript>> {
    utts.iter()
        .map(|u| {
            let h = beam_decode(model, &u.x, decode.beam_width, decode.max_len)?;
            Ok(Transcript {
                id: u.id.clone(),
                speaker: u.speaker,
                tokens: h.labels().to_vec(),
            })
        })
        .collect()
}

/// Decodes `utts` and scores against their labels.
pub fn evaluate(model: &AedParams, utts: &[Utterance], decode: &DecodeConfig) -> Result<ScoreReport> {
    score(&reference_transcripts(utts), &decode_transcripts(model, utts, decode)?)
}

/// One line per utterance: `id speaker unit unit ...`.
pub fn format_transcripts(ts: &[Transcript]) -> String {
    let mut out = String::new();
    for t in ts {
        write!(out, "{} {}", t.id, t.speaker).unwrap();
        for tok in &t.tokens {
            write!(out, " {tok}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_transcripts(text: &str) -> Result<Vec<Transcript>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("transcript line {}: {line:?}", n + 1));
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or_else(bad)?.to_string();
        let speaker = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let tokens = parts.map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        out.push(Transcript { id, speaker, tokens });
    }
    Ok(out)
}

// ---- experiment ----

/// One adaptation run: a speaker and a seed within a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub speaker: usize,
    pub seed: u64,
    pub utterances: usize,
    pub counts: Option<Counts>,
    pub wer: Option<f64>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub weight: f64,
    pub supervision: Supervision,
    pub size: usize,
    pub runs: Vec<RunResult>,
    /// Median over seeds of the WER pooled over speakers.
    pub median_wer: Option<f64>,
    /// Median over seeds for each speaker.
    pub speaker_median_wer: BTreeMap<usize, f64>,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiReport {
    pub matched: ScoreReport,
    pub heldout: ScoreReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub speakers: Vec<usize>,
    pub sizes: Vec<usize>,
    pub supervision: Vec<Supervision>,
    pub seeds: Vec<u64>,
    pub si: SiReport,
    pub cells: Vec<CellReport>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Checks that `si` (and `char_model`) were built for `corpus`.
pub fn check_models(corpus: &Corpus, si: &AedParams, char_model: Option<&CharAedParams>) -> Result<()> {
    let feat = corpus.config.feat_dim();
    if si.dims.feat != feat || si.dims.vocab != corpus.lexicon.wsu_vocab() {
        return contract(format!(
            "model expects {} features and {} units, corpus has {feat} and {}",
            si.dims.feat,
            si.dims.vocab,
            corpus.lexicon.wsu_vocab()
        ));
    }
    if let Some(c) = char_model {
        c.check_encoder(&si.dims)?;
        if c.dims.vocab != corpus.lexicon.char_vocab() {
            return contract(format!(
                "character model has {} symbols, lexicon has {}",
                c.dims.vocab,
                corpus.lexicon.char_vocab()
            ));
        }
    }
    Ok(())
}

struct Job {
    method: Method,
    weight: f64,
    supervision: Supervision,
    size: usize,
    speaker: usize,
    seed: u64,
}

/// Runs the adaptation grid of `cfg` for every selected held-out speaker.
/// A failing run is recorded in the report and the rest continue.
pub fn run_experiment(cfg: &Config, corpus: &Corpus, si: &AedParams, char_model: Option<&CharAedParams>) -> Result<ExperimentReport> {
    check_models(corpus, si, char_model)?;
    let grid = &cfg.grid;
    let speakers = if grid.speakers.is_empty() {
        corpus.heldout_speakers()
    } else {
        let held = corpus.heldout_speakers();
        if let Some(s) = grid.speakers.iter().find(|s| !held.contains(s)) {
            return contract(format!("speaker {s} is not a held-out speaker"));
        }
        grid.speakers.clone()
    };
    if speakers.is_empty() || grid.seeds.is_empty() || grid.sizes.is_empty() || grid.supervision.is_empty() {
        return contract("experiment grid needs speakers, seeds, sizes and supervision modes");
    }
    let max_size = *grid.sizes.iter().max().unwrap();
    let pools: Vec<Vec<Utterance>> = speakers.iter().map(|&s| corpus.adapt_set(s, max_size)).collect::<Result<_>>()?;
    let tests: Vec<Vec<Utterance>> = speakers.iter().map(|&s| corpus.test_set(s)).collect();

    let heldout_utts: Vec<Utterance> = tests.iter().flatten().cloned().collect();
    let si_report = SiReport {
        matched: evaluate(si, &corpus.matched_test, &cfg.decode)?,
        heldout: evaluate(si, &heldout_utts, &cfg.decode)?,
    };
    info!("SI WER: matched {:.2}%, held-out {:.2}%", si_report.matched.wer, si_report.heldout.wer);

    // One frozen SI decode of each pool, shared by every unsupervised cell.
    let hypotheses: Vec<Vec<Option<Utterance>>> = if grid.supervision.contains(&Supervision::Unsup) {
        pools
            .par_iter()
            .map(|pool| pool.iter().map(|u| hypothesis_labels(si, u, &corpus.lexicon, &cfg.decode)).collect())
            .collect::<Result<_>>()?
    } else {
        vec![Vec::new(); pools.len()]
    };

    let mut rows: Vec<(Method, f64)> = Vec::new();
    for (m, ws) in [(Method::Kld, &grid.kld_weights), (Method::Asa, &grid.asa_weights), (Method::Mtl, &grid.mtl_weights)] {
        rows.extend(ws.iter().map(|&w| (m, w)));
    }
    let mut jobs = Vec::new();
    for &(method, weight) in &rows {
        for &supervision in &grid.supervision {
            for &size in &grid.sizes {
                for &speaker in &speakers {
                    for &seed in &grid.seeds {
                        jobs.push(Job { method, weight, supervision, size, speaker, seed });
                    }
                }
            }
        }
    }

    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|job| {
            let k = speakers.iter().position(|&s| s == job.speaker).unwrap();
            let set: Vec<Utterance> = match job.supervision {
                Supervision::Sup => pools[k][..job.size].to_vec(),
                Supervision::Unsup => hypotheses[k][..job.size].iter().flatten().cloned().collect(),
            };
            let adapt_job = AdaptJob::from_config(cfg, job.method, job.weight, job.supervision, job.seed);
            let outcome = adapt_job
                .validate()
                .and_then(|_| adapt_labelled(si, char_model, &set, &adapt_job))
                .and_then(|o| Ok((evaluate(&o.model, &tests[k], &cfg.decode)?, o)));
            match outcome {
                Ok((rep, o)) => {
                    info!(
                        "{} {}={} {} n={} speaker {} seed {}: WER {:.2}%",
                        job.method.as_str(),
                        job.method.weight_name(),
                        job.weight,
                        job.supervision.as_str(),
                        job.size,
                        job.speaker,
                        job.seed,
                        rep.wer
                    );
                    RunResult {
                        speaker: job.speaker,
                        seed: job.seed,
                        utterances: o.utterances,
                        counts: Some(rep.total),
                        wer: Some(rep.wer),
                        final_loss: o.history.last().copied(),
                        error: None,
                    }
                }
                Err(e) => {
                    warn!("{} cell for speaker {} seed {} failed: {e}", job.method.as_str(), job.speaker, job.seed);
                    RunResult {
                        speaker: job.speaker,
                        seed: job.seed,
                        utterances: set.len(),
                        counts: None,
                        wer: None,
                        final_loss: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();

    let per_cell = speakers.len() * grid.seeds.len();
    let mut cells = Vec::new();
    for (chunk, job) in results.chunks(per_cell).zip(jobs.iter().step_by(per_cell)) {
        cells.push(summarize(job, chunk.to_vec(), &speakers, &grid.seeds));
    }
    Ok(ExperimentReport {
        format_version: 1,
        speakers,
        sizes: grid.sizes.clone(),
        supervision: grid.supervision.clone(),
        seeds: grid.seeds.clone(),
        si: si_report,
        cells,
    })
}

fn summarize(job: &Job, runs: Vec<RunResult>, speakers: &[usize], seeds: &[u64]) -> CellReport {
    let mut pooled = Vec::new();
    for &seed in seeds {
        let of_seed: Vec<&RunResult> = runs.iter().filter(|r| r.seed == seed).collect();
        if of_seed.iter().all(|r| r.counts.is_some()) {
            let mut c = Counts::default();
            of_seed.iter().for_each(|r| c.merge(r.counts.as_ref().unwrap()));
            pooled.push(c.wer());
        }
    }
    let mut speaker_median_wer = BTreeMap::new();
    for &s in speakers {
        let w: Vec<f64> = runs.iter().filter(|r| r.speaker == s).filter_map(|r| r.wer).collect();
        if let Some(m) = median(&w) {
            speaker_median_wer.insert(s, m);
        }
    }
    CellReport {
        method: job.method,
        weight: job.weight,
        supervision: job.supervision,
        size: job.size,
        failures: runs.iter().filter(|r| r.error.is_some()).count(),
        median_wer: median(&pooled),
        speaker_median_wer,
        runs,
    }
}

fn symbol(m: Method) -> &'static str {
    match m {
        Method::Kld => "ρ",
        Method::Asa => "λ",
        Method::Mtl => "β",
    }
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn cell(&self, method: Method, weight: f64, supervision: Supervision, size: usize) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.weight == weight && c.supervision == supervision && c.size == size)
    }

    /// Results table: SI and one row per method and weight, one column per
    /// supervision mode and set size. The lowest WER of each column is bold.
    pub fn render_markdown(&self) -> String {
        let columns: Vec<(Supervision, usize)> = self
            .supervision
            .iter()
            .flat_map(|&s| self.sizes.iter().map(move |&n| (s, n)))
            .collect();
        let mut rows: Vec<(String, Vec<Option<f64>>)> = vec![("SI".into(), vec![Some(self.si.heldout.wer); columns.len()])];
        let mut seen: Vec<(Method, f64)> = Vec::new();
        for c in &self.cells {
            if !seen.contains(&(c.method, c.weight)) {
                seen.push((c.method, c.weight));
            }
        }
        for (m, w) in seen {
            let vals = columns.iter().map(|&(s, n)| self.cell(m, w, s, n).and_then(|c| c.median_wer)).collect();
            rows.push((format!("{} {}={w}", m.as_str().to_uppercase(), symbol(m)), vals));
        }

        let mut out = String::new();
        writeln!(out, "# Speaker adaptation results\n").unwrap();
        writeln!(
            out,
            "WER (%) on the test sets of held-out speakers {:?}, median over seeds {:?}. SI WER on matched speakers: {:.2}%.\n",
            self.speakers, self.seeds, self.si.matched.wer
        )
        .unwrap();
        let mut header = String::from("| System |");
        let mut rule = String::from("|---|");
        for (s, n) in &columns {
            let name = match s {
                Supervision::Sup => "Supervised",
                Supervision::Unsup => "Unsupervised",
            };
            write!(header, " {name} {n} |").unwrap();
            rule.push_str("---|");
        }
        writeln!(out, "{header}\n{rule}").unwrap();
        let best: Vec<Option<f64>> = (0..columns.len())
            .map(|j| rows.iter().filter_map(|r| r.1[j]).min_by(f64::total_cmp))
            .collect();
        for (name, vals) in &rows {
            let mut line = format!("| {name} |");
            for (v, b) in vals.iter().zip(&best) {
                match v {
                    Some(v) if Some(*v) == *b => write!(line, " **{v:.2}** |").unwrap(),
                    Some(v) => write!(line, " {v:.2} |").unwrap(),
                    None => line.push_str(" failed |"),
                }
            }
            writeln!(out, "{line}").unwrap();
        }
        writeln!(out, "\n## SI per speaker\n").unwrap();
        for (s, c) in &self.si.heldout.per_speaker {
            writeln!(out, "- speaker {s}: {:.2}%", c.wer()).unwrap();
        }
        let failed: usize = self.cells.iter().map(|c| c.failures).sum();
        if failed > 0 {
            writeln!(out, "\n{failed} adaptation runs failed; see report.json.").unwrap();
        }
        out
    }

    /// Writes `report.json` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.md"), self.render_markdown())?;
        Ok(())
    }
}
