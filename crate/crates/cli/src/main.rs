use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use aedapt_core::adapt::{adapt_labelled, asa_adapt, unsupervised_labels, AdaptJob, AdaptOutcome, Method};
use aedapt_core::aed::{AedParams, CharAedParams};
use aedapt_core::checkpoint::{Checkpoint, DiscDims, ModelKind, TrainState};
use aedapt_core::config::{Config, Supervision};
use aedapt_core::data::{generate_corpus, load_corpus, save_corpus, Corpus};
use aedapt_core::eval::{
    decode_transcripts, format_transcripts, parse_transcripts, reference_transcripts, run_experiment, score,
};
use aedapt_core::pipeline::{char_dims, train_char_checkpoint, train_si_checkpoint, wsu_dims};
use aedapt_core::verify::{gradcheck_suite, TOLERANCE};
use aedapt_core::Error;

#[derive(Parser)]
#[command(name = "aedapt", version, about = "Speaker adaptation for attention encoder-decoder recognizers on synthetic speech")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every command. Precedence: built-in defaults, then
/// the config file, then flags.
#[derive(Args)]
struct Common {
    /// JSON config file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Kld,
    Asa,
    Mtl,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Kld => Method::Kld,
            MethodArg::Asa => Method::Asa,
            MethodArg::Mtl => Method::Mtl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SupervisionArg {
    Sup,
    Unsup,
}

impl From<SupervisionArg> for Supervision {
    fn from(s: SupervisionArg) -> Supervision {
        match s {
            SupervisionArg::Sup => Supervision::Sup,
            SupervisionArg::Unsup => Supervision::Unsup,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the speaker-independent WSU model.
    TrainSi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this SI checkpoint up to the configured epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the character decoder on the frozen SI encoder.
    TrainChar {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        si: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adapt the SI model to one held-out speaker.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        si: PathBuf,
        /// Character checkpoint, required for MTL.
        #[arg(long = "char")]
        char_model: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Method weight: rho (kld), lambda (asa) or beta (mtl).
        #[arg(long, conflicts_with_all = ["rho", "alpha", "beta"])]
        weight: Option<f64>,
        #[arg(long, conflicts_with_all = ["alpha", "beta"])]
        rho: Option<f64>,
        #[arg(long, visible_alias = "lambda", conflicts_with = "beta")]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_enum, default_value = "sup")]
        supervision: SupervisionArg,
        #[arg(long)]
        speaker: usize,
        /// Number of adaptation utterances.
        #[arg(long, default_value_t = 20)]
        n_utts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Beam-decode a corpus split and write transcripts.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// SI-WSU or SD-WSU checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        speaker: Option<usize>,
        /// Hypothesis file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the reference transcripts here.
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Word error rate of hypotheses against references.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the adaptation grid and write report.json and report.md.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Existing corpus; generated into <out>/corpus when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Existing SI checkpoint; trained into <out>/si when absent.
        #[arg(long)]
        si: Option<PathBuf>,
        /// Existing character checkpoint; trained into <out>/char when absent.
        #[arg(long = "char")]
        char_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every training objective on a toy model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Core(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(common: &Common) -> Result<Config, Failure> {
    let mut cfg = match &common.config {
        Some(p) => Config::load(p).map_err(|e| Failure::Usage(format!("config {}: {e}", p.display())))?,
        None => Config::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Loads a corpus and adopts its data settings, which fix the feature
/// width and lexicon.
fn open_corpus(cfg: &mut Config, dir: &Path) -> Result<Corpus, Failure> {
    let corpus = load_corpus(dir)?;
    if corpus.config != cfg.data {
        warn!("using the data settings stored with the corpus at {}", dir.display());
        cfg.data = corpus.config.clone();
    }
    Ok(corpus)
}

fn load_wsu(path: &Path, cfg: &Config, corpus: &Corpus) -> Result<AedParams, Failure> {
    let ck = Checkpoint::load(path)?;
    ck.check_dims(&wsu_dims(cfg, &corpus.lexicon))?;
    ck.check_lexicon(&corpus.lexicon)?;
    Ok(ck.model()?)
}

fn load_char(path: &Path, cfg: &Config, corpus: &Corpus, si: &AedParams) -> Result<CharAedParams, Failure> {
    let ck = Checkpoint::load(path)?;
    ck.check_dims(&char_dims(cfg, &corpus.lexicon))?;
    ck.check_lexicon(&corpus.lexicon)?;
    let (model, enc) = ck.char_model()?;
    if enc != si.params.select(aedapt_core::aed::is_encoder_param) {
        return Err(Failure::Usage(
            "character checkpoint was trained on a different SI encoder".into(),
        ));
    }
    Ok(model)
}

fn log_history(what: &str, state: &TrainState) {
    if let Some(last) = state.history.last() {
        println!("{what}: {} epochs, final loss {last:.6}", state.epochs_done);
    } else {
        println!("{what}: {} epochs", state.epochs_done);
    }
}

fn gen_data(common: &Common, out: &Path) -> CmdResult {
    let cfg = load_config(common)?;
    let corpus = generate_corpus(&cfg.data, cfg.seed)?;
    save_corpus(&corpus, out)?;
    println!(
        "wrote {} train, {} matched-test, {} adapt, {} test utterances to {}",
        corpus.train.len(),
        corpus.matched_test.len(),
        corpus.adapt.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}

fn train_si_cmd(common: &Common, corpus: &Path, out: &Path, resume: Option<&Path>, epochs: Option<usize>) -> CmdResult {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    let corpus = open_corpus(&mut cfg, corpus)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let ck = train_si_checkpoint(&cfg, &corpus, resume.as_ref())?;
    ck.save(out)?;
    log_history("SI", &ck.state);
    Ok(())
}

fn train_char_cmd(
    common: &Common,
    corpus: &Path,
    si: &Path,
    out: &Path,
    resume: Option<&Path>,
    epochs: Option<usize>,
) -> CmdResult {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.char_train.epochs = e;
    }
    let corpus = open_corpus(&mut cfg, corpus)?;
    let si = load_wsu(si, &cfg, &corpus)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let ck = train_char_checkpoint(&cfg, &corpus, &si, resume.as_ref())?;
    ck.save(out)?;
    log_history("character decoder", &ck.state);
    Ok(())
}

/// Resolves `--weight` or the alias belonging to `method`.
fn method_weight(cfg: &Config, method: Method, weight: Option<f64>, rho: Option<f64>, alpha: Option<f64>, beta: Option<f64>) -> Result<f64, Failure> {
    let (own, others) = match method {
        Method::Kld => (rho, [("--alpha", alpha), ("--beta", beta)]),
        Method::Asa => (alpha, [("--rho", rho), ("--beta", beta)]),
        Method::Mtl => (beta, [("--rho", rho), ("--alpha", alpha)]),
    };
    if let Some((flag, _)) = others.iter().find(|(_, v)| v.is_some()) {
        return Err(Failure::Usage(format!("{flag} does not apply to {}", method.as_str())));
    }
    Ok(weight.or(own).unwrap_or(match method {
        Method::Kld => cfg.adapt.rho,
        Method::Asa => cfg.adapt.lambda,
        Method::Mtl => cfg.adapt.beta,
    }))
}

struct AdaptArgs<'a> {
    common: &'a Common,
    corpus: &'a Path,
    si: &'a Path,
    char_model: Option<&'a Path>,
    method: Method,
    weight: f64,
    supervision: Supervision,
    speaker: usize,
    n_utts: usize,
    out: &'a Path,
}

fn adapt_cmd(a: AdaptArgs) -> CmdResult {
    let mut cfg = load_config(a.common)?;
    if a.method == Method::Mtl && a.char_model.is_none() {
        return Err(Failure::Usage("MTL adaptation needs --char".into()));
    }
    let corpus = open_corpus(&mut cfg, a.corpus)?;
    if !corpus.heldout_speakers().contains(&a.speaker) {
        return Err(Failure::Usage(format!("speaker {} is not a held-out speaker", a.speaker)));
    }
    let si = load_wsu(a.si, &cfg, &corpus)?;
    let char_model = a.char_model.map(|p| load_char(p, &cfg, &corpus, &si)).transpose()?;
    let job = AdaptJob::from_config(&cfg, a.method, a.weight, a.supervision, cfg.seed);
    job.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let pool = corpus.adapt_set(a.speaker, a.n_utts).map_err(|e| Failure::Usage(e.to_string()))?;
    let set = match a.supervision {
        Supervision::Sup => pool,
        Supervision::Unsup => unsupervised_labels(&si, &pool, &corpus.lexicon, &cfg.decode)?,
    };
    let (outcome, disc): (AdaptOutcome, _) = if a.method == Method::Asa {
        let o = asa_adapt(&si, &set, &job)?;
        (o.outcome, Some(o.disc))
    } else {
        (adapt_labelled(&si, char_model.as_ref(), &set, &job)?, None)
    };
    let state = TrainState {
        seed: job.seed,
        epochs_done: job.epochs,
        adam_t: None,
        history: outcome.history.clone(),
        disc_history: outcome.disc_history.clone(),
    };
    Checkpoint::for_model(ModelKind::SdWsu, &outcome.model, &corpus.lexicon, state.clone())?.save(a.out)?;
    if let Some(d) = disc {
        let dims = DiscDims {
            input: si.dims.dim,
            hidden: job.disc_hidden,
            layers: job.disc_layers,
        };
        Checkpoint::for_disc(&d, dims, state).save(&a.out.join("disc"))?;
    }
    let log = json!({
        "job": job,
        "speaker": a.speaker,
        "requested_utterances": a.n_utts,
        "utterances": outcome.utterances,
        "history": outcome.history,
        "disc_history": outcome.disc_history,
    });
    fs::write(a.out.join("job.json"), serde_json::to_string_pretty(&log).map_err(Error::from)? + "\n")?;
    println!(
        "{} {}={} on speaker {} with {} utterances: final loss {:.6}",
        a.method.as_str(),
        a.method.weight_name(),
        a.weight,
        a.speaker,
        outcome.utterances,
        outcome.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn decode_cmd(
    common: &Common,
    corpus: &Path,
    model: &Path,
    split: &str,
    speaker: Option<usize>,
    out: Option<&Path>,
    references: Option<&Path>,
) -> CmdResult {
    let mut cfg = load_config(common)?;
    let corpus = open_corpus(&mut cfg, corpus)?;
    let ck = Checkpoint::load(model)?;
    ck.check_lexicon(&corpus.lexicon)?;
    let model = ck.model()?;
    let utts: Vec<_> = corpus
        .split(split)
        .map_err(|e| Failure::Usage(e.to_string()))?
        .iter()
        .filter(|u| speaker.is_none_or(|s| u.speaker == s))
        .cloned()
        .collect();
    let hyps = decode_transcripts(&model, &utts, &cfg.decode)?;
    match out {
        Some(p) => fs::write(p, format_transcripts(&hyps))?,
        None => print!("{}", format_transcripts(&hyps)),
    }
    if let Some(p) = references {
        fs::write(p, format_transcripts(&reference_transcripts(&utts)))?;
    }
    info!("decoded {} utterances", hyps.len());
    Ok(())
}

fn score_cmd(reference: &Path, hyp: &Path, json_out: Option<&Path>) -> CmdResult {
    let refs = parse_transcripts(&fs::read_to_string(reference)?)?;
    let hyps = parse_transcripts(&fs::read_to_string(hyp)?)?;
    let rep = score(&refs, &hyps)?;
    for (s, c) in &rep.per_speaker {
        println!("speaker {s}: WER {:.2}% ({} sub, {} del, {} ins, {} words)", c.wer(), c.sub, c.del, c.ins, c.words);
    }
    let t = &rep.total;
    println!("total: WER {:.2}% ({} sub, {} del, {} ins, {} words)", rep.wer, t.sub, t.del, t.ins, t.words);
    if let Some(p) = json_out {
        fs::write(p, serde_json::to_string_pretty(&rep).map_err(Error::from)? + "\n")?;
    }
    Ok(())
}

fn experiment_cmd(
    common: &Common,
    corpus: Option<&Path>,
    si: Option<&Path>,
    char_model: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let mut cfg = load_config(common)?;
    let corpus = match corpus {
        Some(p) => open_corpus(&mut cfg, p)?,
        None => {
            let c = generate_corpus(&cfg.data, cfg.seed)?;
            save_corpus(&c, &out.join("corpus"))?;
            c
        }
    };
    let si = match si {
        Some(p) => load_wsu(p, &cfg, &corpus)?,
        None => {
            info!("training the SI model");
            let ck = train_si_checkpoint(&cfg, &corpus, None)?;
            ck.save(&out.join("si"))?;
            ck.model()?
        }
    };
    let needs_char = !cfg.grid.mtl_weights.is_empty();
    let char_model = match char_model {
        Some(p) => Some(load_char(p, &cfg, &corpus, &si)?),
        None if needs_char => {
            info!("training the character decoder");
            let ck = train_char_checkpoint(&cfg, &corpus, &si, None)?;
            ck.save(&out.join("char"))?;
            Some(ck.char_model()?.0)
        }
        None => None,
    };
    let report = run_experiment(&cfg, &corpus, &si, char_model.as_ref())?;
    report.write(out)?;
    print!("{}", report.render_markdown());
    Ok(())
}

fn gradcheck_cmd(seed: u64) -> CmdResult {
    let checks = gradcheck_suite(seed)?;
    let mut failed = Vec::new();
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<5} max rel error {:.3e} ({} coords, worst {}[{}]: {:.6e} vs {:.6e}) {verdict}",
            c.objective,
            c.report.max_rel_error,
            c.report.coords_checked,
            c.report.worst_param,
            c.report.worst_index,
            c.report.worst_analytic,
            c.report.worst_numeric
        );
        if !c.passed() {
            failed.push(c.objective);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "gradient check above {TOLERANCE:e} for {}",
            failed.join(", ")
        )))
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenData { common, out } => gen_data(&common, &out),
        Command::TrainSi { common, corpus, out, resume, epochs } => {
            train_si_cmd(&common, &corpus, &out, resume.as_deref(), epochs)
        }
        Command::TrainChar { common, corpus, si, out, resume, epochs } => {
            train_char_cmd(&common, &corpus, &si, &out, resume.as_deref(), epochs)
        }
        Command::Adapt {
            common,
            corpus,
            si,
            char_model,
            method,
            weight,
            rho,
            alpha,
            beta,
            supervision,
            speaker,
            n_utts,
            out,
        } => {
            let cfg = load_config(&common)?;
            let method = Method::from(method);
            let weight = method_weight(&cfg, method, weight, rho, alpha, beta)?;
            adapt_cmd(AdaptArgs {
                common: &common,
                corpus: &corpus,
                si: &si,
                char_model: char_model.as_deref(),
                method,
                weight,
                supervision: supervision.into(),
                speaker,
                n_utts,
                out: &out,
            })
        }
        Command::Decode { common, corpus, model, split, speaker, out, references } => decode_cmd(
            &common,
            &corpus,
            &model,
            &split,
            speaker,
            out.as_deref(),
            references.as_deref(),
        ),
        Command::Score { reference, hyp, json } => score_cmd(&reference, &hyp, json.as_deref()),
        Command::Experiment { common, corpus, si, char_model, out } => {
            experiment_cmd(&common, corpus.as_deref(), si.as_deref(), char_model.as_deref(), &out)
        }
        Command::Gradcheck { seed } => gradcheck_cmd(seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
