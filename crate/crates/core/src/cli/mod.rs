//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and maps failures to exit codes.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::analysis::{
    bits_per_word, compare_surprise, load_position_bits, save_position_bits, save_surprise_curve, surprise_report_on,
    word_scores_from_bits, write_comparison, write_sweep, SurpriseReport, SurpriseSet, SweepRow, SURPRISE_OFFSETS,
};
use crate::cells::{grad_check_report, param_count, Arch, ArchKind, GradCheckDims, LstmVariant};
use crate::data::{load_corpus, split, Corpus, Vocab};
use crate::error::{Error, Result};
use crate::math::{Precision, Real};
use crate::regularization::DropoutConfig;
use crate::training::{
    evaluate_stream, peek_header, resume, sample, train, Checkpoint, RunConfig, StopReason, TrainOptions,
    CONFIG_KEYS, PRESETS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Largest relative error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "mlstm", version, about = "Byte-level recurrent language models: train, evaluate, sample, analyze")]
pub struct Cli {
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON config or a preset.
    Train(TrainArgs),
    /// Score a split of a corpus with a checkpoint.
    Eval(EvalArgs),
    /// Generate bytes from a checkpoint.
    Sample(SampleArgs),
    /// Surprise-recovery analysis and word scores.
    Analyze(AnalyzeArgs),
    /// Convert bits/symbol to bits/word and perplexity.
    Perplexity(PerplexityArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Train mLSTM and stacked LSTM across sizes; write params vs bits.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct ConfigSource {
    /// JSON run config (unknown keys are rejected).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset: hutter-unreg, hutter-wn-vd, hutter-large, text8-small, wikitext2-byte.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<Option<RunConfig>> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p).map(Some),
            (None, Some(name)) => RunConfig::preset(name).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Corpus file; read as raw bytes.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for best.ckpt, last.ckpt, log.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a last.ckpt written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many windows, leaving a resumable last.ckpt.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
    /// The whole file.
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Write per-position losses as `position,bits`.
    #[arg(long)]
    pub losses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub length: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Text fed to the model before sampling.
    #[arg(long, default_value = "\n")]
    pub prime: String,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Per-position loss CSVs (`position,bits`), one per model.
    #[arg(long = "losses", num_args = 1..)]
    pub losses: Vec<PathBuf>,
    /// Checkpoints to score on `--data`, one per model.
    #[arg(long = "ckpt", num_args = 1..)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Draw one surprise set from the models' mean losses.
    #[arg(long)]
    pub shared_set: bool,
    /// Also write per-word scores of the first checkpoint (`word,start,bytes,bits`).
    #[arg(long)]
    pub words: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerplexityArgs {
    /// Bits per symbol.
    #[arg(long)]
    pub bits: f64,
    /// Symbols in the evaluated text.
    #[arg(long)]
    pub symbols: u64,
    /// Words in the evaluated text.
    #[arg(long)]
    pub words: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "mlstm")]
    pub arch: String,
    #[arg(long, default_value_t = 11)]
    pub hidden: usize,
    #[arg(long, default_value_t = 7)]
    pub vocab: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 23)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub embed: usize,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub weight_norm: bool,
    #[arg(long)]
    pub gate_inside_tanh: bool,
    #[arg(long, default_value_t = 0.0)]
    pub dropout_hidden: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout_embed: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Shared settings; `arch` and `hidden` are overridden per run.
    #[command(flatten)]
    pub source: ConfigSource,
    #[arg(long)]
    pub data: PathBuf,
    /// mLSTM hidden sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    pub mlstm_hidden: Vec<usize>,
    /// Stacked-LSTM hidden sizes (two layers).
    #[arg(long, value_delimiter = ',', default_values_t = [24usize, 48, 96])]
    pub lstm_hidden: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn config_help() -> String {
    let mut s = String::from("Config keys (JSON object; unknown keys are an error):\n");
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    s.push_str("\nPresets: ");
    s.push_str(&PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "));
    s.push_str("\n\nExit codes: 0 success, 1 usage, 2 data or IO, 3 numeric failure.\n");
    s
}

/// Full command definition, including the config-key reference in `--help`.
pub fn command() -> clap::Command {
    let help = config_help();
    Cli::command()
        .after_help(help.clone())
        .mut_subcommand("train", |c| c.after_help(help.clone()))
        .mut_subcommand("sweep", |c| c.after_help(help))
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } | Error::GradientMismatch { .. } => EXIT_NUMERIC,
        Error::Config(_) | Error::Parameter(_) => EXIT_USAGE,
        Error::Dimension(_)
        | Error::Index { .. }
        | Error::DegenerateRow { .. }
        | Error::Integrity { .. }
        | Error::ShapeManifest(_)
        | Error::OutOfVocab { .. }
        | Error::Io { .. }
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

/// Parse `argv` (program name first), run the command, return the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .try_init();
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Perplexity(a) => cmd_perplexity(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn stdout_line(s: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

/// Bytes of one split of `path`, encoded with a checkpoint's vocabulary.
fn split_bytes(path: &Path, vocab: &Vocab, config: &RunConfig, which: SplitName) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (a, b) = config.split.boundaries(bytes.len());
    let range = match which {
        SplitName::All => 0..bytes.len(),
        SplitName::Train => 0..a,
        SplitName::Valid => a..b,
        SplitName::Test => b..bytes.len(),
    };
    let text = bytes[range].to_vec();
    let ids = vocab.encode(&text)?;
    Ok((text, ids))
}

/// Stored dtype of a checkpoint's parameters.
fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let header = peek_header(path)?;
    Ok(match header.manifest.first().map(|e| e.dtype.as_str()) {
        Some("f32") => Precision::Training,
        _ => Precision::Verification,
    })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let options = TrainOptions {
        stop_after_windows: a.stop_after,
        out_dir: Some(a.out.clone()),
    };
    let precision = match &a.resume {
        Some(p) => checkpoint_precision(p)?,
        None => a
            .source
            .load()?
            .ok_or_else(|| Error::Config("train needs --config or --preset".into()))?
            .precision,
    };
    match precision {
        Precision::Training => train_as::<f32>(&a, &corpus, &options),
        Precision::Verification => train_as::<f64>(&a, &corpus, &options),
    }
}

fn train_as<T: Real>(a: &TrainArgs, corpus: &Corpus, options: &TrainOptions) -> Result<()> {
    let out = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::<T>::load(path)?;
            if let Some(cfg) = a.source.load()? {
                if cfg != ckpt.config {
                    return Err(Error::Config("--config differs from the checkpoint's config".into()));
                }
            }
            resume(ckpt, corpus, options)?
        }
        None => {
            let cfg = a.source.load()?.expect("checked by caller");
            train::<T>(&cfg, corpus, options)?
        }
    };
    let stop = match out.stop {
        StopReason::Budget => "budget",
        StopReason::EarlyStopped => "early-stopped",
        StopReason::Interrupted => "interrupted",
    };
    stdout_line(
        &json!({
            "stop": stop,
            "steps": out.last.progress.step,
            "chars_seen": out.last.progress.chars_seen,
            "best_valid_bits": out.best.best_valid,
            "out": a.out,
        })
        .to_string(),
    )
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    match checkpoint_precision(&a.ckpt)? {
        Precision::Training => eval_as::<f32>(&a),
        Precision::Verification => eval_as::<f64>(&a),
    }
}

fn eval_as<T: Real>(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::<T>::load(&a.ckpt)?;
    let (_, ids) = split_bytes(&a.data, &ckpt.vocab, &ckpt.config, a.split)?;
    let ev = evaluate_stream(&ckpt.params, &ids)?;
    if let Some(p) = &a.losses {
        save_position_bits(p, &ev.bits)?;
    }
    stdout_line(
        &json!({
            "mean_bits": ev.mean_bits,
            "total_bits": ev.total_bits,
            "scored": ev.scored(),
        })
        .to_string(),
    )
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let bytes = match checkpoint_precision(&a.ckpt)? {
        Precision::Training => {
            let c = Checkpoint::<f32>::load(&a.ckpt)?;
            sample(&c.params, &c.vocab, a.prime.as_bytes(), a.length, a.temperature, a.seed)?
        }
        Precision::Verification => {
            let c = Checkpoint::<f64>::load(&a.ckpt)?;
            sample(&c.params, &c.vocab, a.prime.as_bytes(), a.length, a.temperature, a.seed)?
        }
    };
    let mut out = std::io::stdout().lock();
    out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| Error::io("<stdout>", e))
}

/// Loss streams of the models named on the command line, plus word scores
/// of the first checkpoint when asked.
fn analysis_streams(a: &AnalyzeArgs) -> Result<(Vec<Vec<f64>>, Option<crate::analysis::WordScores>)> {
    let mut streams = Vec::new();
    for p in &a.losses {
        streams.push(load_position_bits(p)?);
    }
    let mut words = None;
    if !a.ckpts.is_empty() {
        let data = a
            .data
            .as_ref()
            .ok_or_else(|| Error::Config("--ckpt needs --data".into()))?;
        for (i, p) in a.ckpts.iter().enumerate() {
            let ckpt = Checkpoint::<f64>::load(p)?;
            let (text, ids) = split_bytes(data, &ckpt.vocab, &ckpt.config, a.split)?;
            let ev = evaluate_stream(&ckpt.params, &ids)?;
            if a.words && i == 0 {
                words = Some(word_scores_from_bits(&text, &ev.bits)?);
            }
            streams.push(ev.bits);
        }
    } else if a.words {
        return Err(Error::Config("--words needs --ckpt".into()));
    }
    if streams.is_empty() {
        return Err(Error::Config("analyze needs --losses or --ckpt".into()));
    }
    Ok((streams, words))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let (streams, words) = analysis_streams(&a)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let refs: Vec<&[f64]> = streams.iter().map(Vec::as_slice).collect();
    let shared = if a.shared_set { Some(SurpriseSet::shared(&refs)?) } else { None };
    let mut reports: Vec<SurpriseReport> = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        if s.len() < 10 {
            return Err(Error::Parameter(format!("stream {i} has fewer than 10 positions")));
        }
        let set = match &shared {
            Some(set) => set.clone(),
            None => SurpriseSet::from_losses(s)?,
        };
        let r = surprise_report_on(s, &set, SURPRISE_OFFSETS)?;
        save_surprise_curve(a.out.join(format!("surprise_{i}.csv")), &r)?;
        reports.push(r);
    }
    let mut summary = json!({ "reports": reports });
    if reports.len() >= 2 {
        let cmp = compare_surprise(&reports[0], &reports[1])?;
        let path = a.out.join("comparison.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_comparison(f, &reports[0], &reports[1], &cmp)?;
        summary["comparison"] = json!(cmp);
        summary["larger_after_surprise"] = json!(cmp.larger_after_surprise());
    }
    if let Some(w) = words {
        let path = a.out.join("words.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut cw = csv::Writer::from_writer(f);
        cw.write_record(["word", "start", "bytes", "bits"])?;
        for s in &w.words {
            cw.serialize((&s.word, s.start, s.scored_bytes, s.bits))?;
        }
        cw.flush().map_err(|e| Error::io(&path, e))?;
        let word_bits: f64 = w.words.iter().map(|s| s.bits).sum();
        summary["words"] = json!({
            "count": w.words.len(),
            "word_bits": word_bits,
            "stray_bits": w.stray_bits,
            "total_bits": w.total_bits,
        });
    }
    stdout_line(&summary.to_string())
}

fn cmd_perplexity(a: PerplexityArgs) -> Result<()> {
    let w = bits_per_word(a.bits, a.symbols, a.words)?;
    stdout_line(&format!(
        "symbols/word {:.4}  bits/word {:.4}  perplexity {:.1}",
        w.symbols_per_word, w.bits_per_word, w.perplexity
    ))
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let kind = ArchKind::parse(&a.arch)?;
    let mut arch = Arch::new(kind, a.hidden)
        .with_embed(a.embed)
        .with_weight_norm(a.weight_norm)
        .with_variant(if a.gate_inside_tanh {
            LstmVariant::GateInsideTanh
        } else {
            LstmVariant::Standard
        });
    if let Some(l) = a.layers {
        arch = arch.with_layers(l);
    }
    arch.validate(a.vocab)?;
    let dropout = DropoutConfig {
        hidden: a.dropout_hidden,
        embed: a.dropout_embed,
        output_path: true,
    };
    dropout.validate()?;
    let dims = GradCheckDims::new(a.vocab, a.hidden, a.window);
    let report = grad_check_report(&arch, dims, a.seed, dropout.is_active().then_some(&dropout))?;
    stdout_line(&format!(
        "max relative error {:.3e} ({} coordinates; worst {}[{}])",
        report.max_relative_error, report.coordinates, report.worst_tensor, report.worst_index
    ))?;
    if report.max_relative_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Error::GradientMismatch {
            error: report.max_relative_error,
            tolerance: GRADCHECK_TOLERANCE,
            location: format!("{}[{}]", report.worst_tensor, report.worst_index),
        })
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let base = a.source.load()?.unwrap_or_default();
    let corpus = load_corpus(&a.data)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut runs: Vec<RunConfig> = Vec::new();
    for &h in &a.mlstm_hidden {
        runs.push(RunConfig {
            arch: ArchKind::Mlstm,
            hidden: h,
            layers: None,
            ..base.clone()
        });
    }
    for &h in &a.lstm_hidden {
        runs.push(RunConfig {
            arch: ArchKind::StackedLstm,
            hidden: h,
            layers: Some(2),
            ..base.clone()
        });
    }
    for r in &runs {
        r.validate()?;
    }
    let vocab = corpus.vocab().len();
    let rows: Vec<SweepRow> = runs
        .par_iter()
        .map(|cfg| -> Result<SweepRow> {
            let dir = a.out.join(format!("{}-{}", cfg.arch.name(), cfg.hidden));
            let options = TrainOptions {
                stop_after_windows: None,
                out_dir: Some(dir),
            };
            let (valid, test) = match cfg.precision {
                Precision::Training => sweep_one::<f32>(cfg, &corpus, &options)?,
                Precision::Verification => sweep_one::<f64>(cfg, &corpus, &options)?,
            };
            Ok(SweepRow {
                arch: cfg.arch.name().to_string(),
                hidden: cfg.hidden,
                params: param_count(&cfg.arch_spec(), vocab).total,
                valid_bits: valid,
                test_bits: test,
            })
        })
        .collect::<Result<_>>()?;
    let path = a.out.join("sweep.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_sweep(f, &rows)?;
    let mut out = Vec::new();
    write_sweep(&mut out, &rows)?;
    stdout_line(String::from_utf8_lossy(&out).trim_end())
}

fn sweep_one<T: Real>(cfg: &RunConfig, corpus: &Corpus, options: &TrainOptions) -> Result<(f64, f64)> {
    let out = train::<T>(cfg, corpus, options)?;
    let s = split(corpus, &cfg.split)?;
    let valid = out
        .best
        .best_valid
        .map_or_else(|| evaluate_stream(&out.best.params, s.valid.ids).map(|e| e.mean_bits), Ok)?;
    let test = evaluate_stream(&out.best.params, s.test.ids)?.mean_bits;
    Ok((valid, test))
}
