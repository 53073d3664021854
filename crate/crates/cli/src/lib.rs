//! Command-line front end: corpus synthesis, training, scoring, evaluation
//! and explanation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric abort.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use vhd::eval::{evaluate, explain, explanations_to_jsonl};
use vhd::featureio::{generate_synthetic, load_split, read_container, resolve_manifest, HistorySegment, SynthConfig};
use vhd::preference::AttentionStrategy;
use vhd::tensor::Real;
use vhd::trainer::{load_model, resume_trainer, TrainConfig, Trainer};
use vhd::{atomic_write, Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const AFTER_HELP: &str = "Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric abort.";

#[derive(Parser, Debug)]
#[command(name = "vhd", version, about = "Personalized video highlight detection", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Score every frame of one video.
    Predict(PredictArgs),
    /// Compute per-video AP and mAP on a corpus split.
    Eval(EvalArgs),
    /// Report the most attended history segments per frame.
    Explain(ExplainArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Full,
    GenericOnly,
    UserOnly,
    MeanHistory,
    MeanHistoryPlusGeneric,
}

impl From<StrategyArg> for AttentionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Full => AttentionStrategy::Full,
            StrategyArg::GenericOnly => AttentionStrategy::GenericOnly,
            StrategyArg::UserOnly => AttentionStrategy::UserOnly,
            StrategyArg::MeanHistory => AttentionStrategy::MeanHistory,
            StrategyArg::MeanHistoryPlusGeneric => AttentionStrategy::MeanHistoryPlusGeneric,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Generator configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus root containing `train/` (and optionally `val/`) manifests.
    #[arg(long)]
    corpus: PathBuf,
    /// Training configuration (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Continue from `<out>/last.prck`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    video: PathBuf,
    /// Directory of history segment containers, read in file-name order.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus root or manifest file.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Comma-separated frame indices, or `all`.
    #[arg(long, default_value = "all")]
    frames: String,
    #[arg(long, default_value_t = 3)]
    top: usize,
    /// Output file (JSON lines); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum, default_value = "f64")]
    precision: Precision,
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric_abort() || matches!(e, Error::LogDomain { .. }) {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => match a.precision {
            Precision::F32 => train::<f32>(a),
            Precision::F64 => train::<f64>(a),
        },
        Command::Predict(a) => match a.precision {
            Precision::F32 => predict::<f32>(a),
            Precision::F64 => predict::<f64>(a),
        },
        Command::Eval(a) => match a.precision {
            Precision::F32 => eval::<f32>(a),
            Precision::F64 => eval::<f64>(a),
        },
        Command::Explain(a) => match a.precision {
            Precision::F32 => explain_cmd::<f32>(a),
            Precision::F64 => explain_cmd::<f64>(a),
        },
    }
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::Io {
                context: format!("reading {}", p.display()),
                source: e,
            })?;
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = read_json(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let summary = generate_synthetic(&cfg, &a.out)?;
    log::info!(
        "wrote {} frames ({} positive, {} near-duplicate) to {}",
        summary.frames,
        summary.positives,
        summary.near_duplicates,
        a.out.display()
    );
    Ok(())
}

fn train<F: Real>(a: TrainArgs) -> Result<()> {
    let train_manifest = resolve_manifest(&a.corpus, "train");
    let (manifest, train_users) = load_split(&train_manifest)?;
    let val_manifest = a.corpus.join("val").join("manifest.json");
    let val_users = if val_manifest.is_file() {
        load_split(&val_manifest)?.1
    } else {
        log::warn!("no validation split at {}", val_manifest.display());
        Vec::new()
    };
    let mut trainer = if a.resume {
        resume_trainer::<F>(&a.out, a.epochs, &train_users, &val_users)?
    } else {
        let mut cfg: TrainConfig = read_json(a.config.as_deref())?;
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(s) = a.strategy {
            cfg.strategy = s.into();
        }
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        Trainer::<F>::new(cfg, manifest.d, &train_users, &val_users)?
    }
    .with_threads(a.threads)?;
    log::info!(
        "training {} users for {} epochs ({})",
        trainer.effective_users(),
        trainer.config().epochs,
        F::DTYPE
    );
    trainer.train(Some(&a.out))
}

/// History containers of a directory, sorted by file name.
fn read_history(dir: Option<&Path>) -> Result<Vec<HistorySegment>> {
    let Some(dir) = dir else {
        return Ok(Vec::new());
    };
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        context: format!("listing {}", dir.display()),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "prft"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_container(p).map(HistorySegment)).collect()
}

fn capped(mut history: Vec<HistorySegment>, cap: Option<usize>) -> Vec<HistorySegment> {
    if let Some(c) = cap {
        if history.len() > c {
            history.drain(..history.len() - c);
        }
    }
    history
}

fn predict<F: Real>(a: PredictArgs) -> Result<()> {
    let (params, cfg) = load_model::<F>(&a.checkpoint)?;
    let video = read_container(&a.video)?;
    let history = capped(read_history(a.history.as_deref())?, cfg.max_history);
    let strategy = a.strategy.map_or(cfg.strategy, Into::into);
    let trace = params.predict(strategy, &video, &history)?;
    atomic_write(&a.out, trace.to_jsonl()?.as_bytes())
}

fn eval<F: Real>(a: EvalArgs) -> Result<()> {
    let (params, cfg) = load_model::<F>(&a.checkpoint)?;
    let (_, mut users) = load_split(&resolve_manifest(&a.corpus, &a.split))?;
    users.iter_mut().for_each(|u| u.cap_history(cfg.max_history));
    let strategy = a.strategy.map_or(cfg.strategy, Into::into);
    let report = match a.threads {
        Some(n) => rayon_pool(n)?.install(|| evaluate(&params, &users, strategy))?,
        None => evaluate(&params, &users, strategy)?,
    };
    match report.map {
        Some(m) => log::info!(
            "mAP {m:.6} over {} videos ({} excluded)",
            report.videos.len(),
            report.n_excluded
        ),
        None => log::warn!("no video has a positive label"),
    }
    write_json(&a.out, &report)
}

fn rayon_pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn parse_frames(list: &str) -> Result<Option<Vec<usize>>> {
    if list == "all" {
        return Ok(None);
    }
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad frame index {s:?}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn explain_cmd<F: Real>(a: ExplainArgs) -> Result<()> {
    let (params, cfg) = load_model::<F>(&a.checkpoint)?;
    let video = read_container(&a.video)?;
    let history = capped(read_history(a.history.as_deref())?, cfg.max_history);
    let strategy = a.strategy.map_or(cfg.strategy, Into::into);
    let frames = parse_frames(&a.frames)?;
    let rows = explain(&params, strategy, &video, &history, frames.as_deref(), a.top)?;
    let text = explanations_to_jsonl(&rows)?;
    match a.out {
        Some(p) => atomic_write(&p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
