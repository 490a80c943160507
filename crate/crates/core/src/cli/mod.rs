//! The `robust-se` command line.

pub mod bench;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::data::{analyze_corpus, AnalyzerConfig, ClipReport, Corpus, CorpusManifest, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_corpus;
use crate::train::{self, Checkpoint, RunRecord};

pub use bench::{run_suite, BenchReport, ExperimentSuite};

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for bad arguments, configs, recipes or manifests.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "robust-se", version, about = "Speech enhancement trained on noisy targets")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a corpus from the `[data]` section and write WAVs plus manifests.
    Synth(SynthArgs),
    /// Train a model; writes config.snapshot, metrics.jsonl and checkpoints/ to the run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Train and evaluate every run of a suite and print a comparison table.
    Bench(BenchArgs),
    /// Flag silence, pure noise and clicks in a corpus.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Valid => Some(Split::Valid),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Config override `section.key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Experiment config (TOML); only `[data]` is used.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives clips/, manifest.jsonl and synth.jsonl.
    #[arg(short, long, required_unless_present = "dry_run")]
    pub out: Option<PathBuf>,
    /// Corpus seed (overrides `data.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the synthesis manifest to stdout and write nothing.
    #[arg(long)]
    pub dry_run: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML). Optional with --resume.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(short, long)]
    pub out: PathBuf,
    /// traditional | mixit | mixit_aug
    #[arg(long)]
    pub scheme: Option<String>,
    /// Aggregation name, e.g. sample_median_tf_mean.
    #[arg(long)]
    pub loss: Option<String>,
    /// mse | sdr
    #[arg(long)]
    pub distance: Option<String>,
    /// Training seed (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum epochs (overrides `train.epochs`; with --resume, extends the run).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Full-length schedule and network: 1000 epochs, patience 140, bottleneck 512, 3 recurrent layers.
    #[arg(long)]
    pub paper_scale: bool,
    /// Continue the run in --out from its last checkpoint.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus manifest (JSONL).
    #[arg(short, long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Experiment config whose corpus is evaluated, instead of --manifest.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write per-clip CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Output format on stdout.
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Suite file (TOML).
    #[arg(short, long)]
    pub suite: PathBuf,
    /// Output directory (overrides the suite's `out_dir`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Corpus manifest (JSONL).
    #[arg(short, long)]
    pub manifest: PathBuf,
    /// Clip RMS below this is silence.
    #[arg(long, default_value_t = AnalyzerConfig::default().silence_rms)]
    pub silence_rms: f64,
    /// Click threshold as a multiple of the median short-window peak.
    #[arg(long, default_value_t = AnalyzerConfig::default().click_crest)]
    pub click_crest: f64,
    /// Write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p, overrides),
        None => ExperimentConfig::parse("", overrides, None),
    }
}

fn json_pretty<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut ov = args.overrides.set.clone();
    if let Some(s) = args.seed {
        ov.push(format!("data.seed={s}"));
    }
    let cfg = load_config(args.config.as_deref(), &ov)?;
    if cfg.manifest.is_some() {
        return Err(Error::Config("synth needs a [data] recipe, not data.manifest".into()));
    }
    let manifest = crate::data::build_corpus(&cfg.data)?;
    if args.dry_run {
        print!("{}", manifest.to_jsonl());
        return Ok(());
    }
    let out = args.out.as_deref().expect("clap requires --out without --dry-run");
    let corpus = Corpus::load(&manifest)?;
    fs::create_dir_all(out)?;
    let files = corpus.write_wavs(out)?;
    manifest.write(&out.join("synth.jsonl"))?;
    files.write(&out.join("manifest.jsonl"))?;
    println!(
        "wrote {} clips to {} ({} train, {} valid, {} test)",
        corpus.clips.len(),
        out.join("manifest.jsonl").display(),
        corpus.split(Split::Train).len(),
        corpus.split(Split::Valid).len(),
        corpus.split(Split::Test).len(),
    );
    Ok(())
}

fn summarize(rec: &RunRecord) -> String {
    format!(
        "stopped after epoch {} ({}); best epoch {} valid loss {:.6}; checkpoint {}",
        rec.stopping_epoch,
        rec.stop_reason,
        rec.best_epoch,
        rec.best_valid,
        rec.best_checkpoint.display()
    )
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunRecord> {
    let snapshot = args.out.join("experiment.json");
    if args.resume {
        let cfg: ExperimentConfig = match &args.config {
            Some(p) => ExperimentConfig::load(p, &args.overrides.set)?,
            None => {
                let text = fs::read_to_string(&snapshot).map_err(|e| Error::Load {
                    path: snapshot.clone(),
                    reason: e.to_string(),
                })?;
                serde_json::from_str(&text).map_err(|e| Error::Load {
                    path: snapshot.clone(),
                    reason: e.to_string(),
                })?
            }
        };
        let corpus = cfg.corpus()?;
        let rec = train::resume(&corpus, &args.out, args.epochs)?;
        println!("{}", summarize(&rec));
        return Ok(rec);
    }

    let config = args
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("train needs --config (or --resume)".into()))?;
    let mut ov = args.overrides.set.clone();
    let flags = [
        ("train.scheme", args.scheme.clone()),
        ("train.loss", args.loss.clone()),
        ("train.distance", args.distance.clone()),
        ("train.seed", args.seed.map(|s| s.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            ov.push(format!("{k}={v}"));
        }
    }
    if args.paper_scale {
        let p = crate::train::TrainConfig::default().paper_scale();
        let m = crate::model::MaskNetConfig::default();
        ov.push(format!("train.epochs={}", p.epochs));
        ov.push(format!("train.early_stop_patience={}", p.early_stop_patience));
        ov.push(format!("model.bottleneck={}", m.bottleneck));
        ov.push(format!("model.recurrent_layers={}", m.recurrent_layers));
    }
    if let Some(e) = args.epochs {
        ov.push(format!("train.epochs={e}"));
    }
    let cfg = ExperimentConfig::load(config, &ov)?;
    let corpus = cfg.corpus()?;
    fs::create_dir_all(&args.out)?;
    let rec = {
        let mut trainer = train::Trainer::new(cfg.train.clone(), &corpus, cfg.model, cfg.stft, &args.out)?;
        fs::write(&snapshot, json_pretty(&cfg)?)?;
        trainer.run()?
    };
    println!("{}", summarize(&rec));
    Ok(rec)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let net = ck.model()?;
    let manifest = match (&args.manifest, &args.config) {
        (Some(m), _) => CorpusManifest::read(m)?,
        (None, Some(c)) => ExperimentConfig::load(c, &args.overrides.set)?.manifest()?,
        (None, None) => return Err(Error::Config("eval needs --manifest or --config".into())),
    };
    let corpus = Corpus::load(&manifest)?;
    let report = evaluate_corpus(&net, &ck.stft, &corpus, args.split.split())?;
    if report.clips.is_empty() && report.skipped.is_empty() {
        return Err(Error::Manifest(format!("no clips in split {:?}", args.split)));
    }
    if let Some(p) = &args.json {
        fs::write(p, json_pretty(&report)?)?;
    }
    if let Some(p) = &args.csv {
        fs::write(p, report.to_csv())?;
    }
    Ok(match args.format {
        Format::Table => report.table(),
        Format::Json => json_pretty(&report)?,
    })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    let suite = ExperimentSuite::load(&args.suite)?;
    let out = args.out.clone().unwrap_or_else(|| suite.out_dir.clone());
    let report = run_suite(&suite, &out)?;
    match args.format {
        Format::Table => print!("{}", report.table()),
        Format::Json => print!("{}", json_pretty(&report)?),
    }
    Ok(report)
}

pub fn analysis_table(manifest: &CorpusManifest, reports: &[ClipReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:<13} {:>7} {:>10} {:>6} {:>7} {:>8}",
        "clip", "category", "silence", "pure_noise", "clicks", "voiced", "snr_db"
    );
    let (mut silent, mut noise, mut clicky, mut failed) = (0, 0, 0, 0);
    for (e, r) in manifest.entries.iter().zip(reports) {
        let cat = e.category().map_or("-", |c| c.name());
        if let Some(err) = &r.error {
            failed += 1;
            let _ = writeln!(out, "{:<14} {:<13} ERROR: {err}", r.id, cat);
            continue;
        }
        silent += r.silence as usize;
        noise += r.pure_noise as usize;
        clicky += (r.clicks > 0) as usize;
        let snr = r.est_snr_db.map_or("-".to_string(), |v| format!("{v:.1}"));
        let _ = writeln!(
            out,
            "{:<14} {:<13} {:>7} {:>10} {:>6} {:>7.2} {:>8}",
            r.id, cat, r.silence, r.pure_noise, r.clicks, r.voiced_fraction, snr
        );
    }
    let _ = writeln!(
        out,
        "{} clips: {silent} silence, {noise} pure noise, {clicky} with clicks, {failed} unreadable",
        reports.len()
    );
    out
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<String> {
    let manifest = CorpusManifest::read(&args.manifest)?;
    let cfg = AnalyzerConfig {
        silence_rms: args.silence_rms,
        click_crest: args.click_crest,
        ..AnalyzerConfig::default()
    };
    if !(cfg.silence_rms >= 0.0 && cfg.click_crest > 0.0) {
        return Err(Error::Config("thresholds must be positive".into()));
    }
    let reports = analyze_corpus(&manifest, &cfg);
    if let Some(p) = &args.json {
        fs::write(p, json_pretty(&reports)?)?;
    }
    Ok(match args.format {
        Format::Table => analysis_table(&manifest, &reports),
        Format::Json => json_pretty(&reports)?,
    })
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Eval(a) => cmd_eval(a).map(|s| print!("{s}")),
        Command::Bench(a) => cmd_bench(a).map(drop),
        Command::Analyze(a) => cmd_analyze(a).map(|s| print!("{s}")),
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
