//! Experiment suites: train and evaluate several configurations and compare them.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Table;

use crate::config::{apply_overrides, merge, resolve_path, ExperimentConfig};
use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, EvalReport};
use crate::train::{self, Checkpoint};

/// One row of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub name: String,
    pub config: ExperimentConfig,
    /// Training seeds; results are averaged over them.
    pub seeds: Vec<u64>,
    /// Evaluate this checkpoint instead of training.
    pub checkpoint: Option<PathBuf>,
}

/// Ordering check between two rows: `a` must exceed `b` on `metric` by at
/// least `margin`, and strictly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: Metric,
    #[serde(default)]
    pub margin: f64,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Metric {
    NoisySiSdr,
    SiSdr,
    Improvement,
    SegSnr,
    /// Speech-energy fraction of output branch `n` (1-based).
    Leak(usize),
}

impl TryFrom<String> for Metric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "noisy_si_sdr" => Metric::NoisySiSdr,
            "si_sdr" => Metric::SiSdr,
            "improvement" => Metric::Improvement,
            "seg_snr" => Metric::SegSnr,
            other => match other.strip_prefix("leak").and_then(|n| n.parse().ok()) {
                Some(n) if n >= 1 => Metric::Leak(n),
                _ => {
                    return Err(Error::Config(format!(
                        "unknown metric '{s}', expected noisy_si_sdr|si_sdr|improvement|seg_snr|leakN"
                    )))
                }
            },
        })
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        match m {
            Metric::NoisySiSdr => "noisy_si_sdr".into(),
            Metric::SiSdr => "si_sdr".into(),
            Metric::Improvement => "improvement".into(),
            Metric::SegSnr => "seg_snr".into(),
            Metric::Leak(n) => format!("leak{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSuite {
    pub runs: Vec<SuiteRun>,
    pub compare: Vec<Comparison>,
    pub out_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    out_dir: Option<String>,
    base: Option<String>,
    #[serde(default)]
    defaults: Table,
    #[serde(default)]
    run: Vec<RawRun>,
    #[serde(default)]
    compare: Vec<Comparison>,
}

/// Unknown keys land in `sections` and are rejected by the config parser.
#[derive(Deserialize)]
struct RawRun {
    name: String,
    seeds: Option<Vec<u64>>,
    checkpoint: Option<String>,
    #[serde(default)]
    set: Vec<String>,
    #[serde(flatten)]
    sections: Table,
}

impl ExperimentSuite {
    /// Parse a suite file. `base` names a config file merged beneath every
    /// run, `[defaults]` is merged over it, then each run's own sections and
    /// `set` overrides.
    pub fn parse(text: &str, dir: Option<&Path>) -> Result<Self> {
        let raw: RawSuite = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let mut common = match &raw.base {
            Some(b) => {
                let path = resolve_path(dir, b);
                let text = fs::read_to_string(&path).map_err(|e| Error::Load {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                text.parse::<Table>()
                    .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => Table::new(),
        };
        merge(&mut common, &raw.defaults);

        let mut runs = Vec::new();
        let mut names = HashSet::new();
        for r in raw.run {
            let ok = !r.name.is_empty()
                && r.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
            if !ok {
                return Err(Error::Config(format!("run name '{}' must be non-empty [A-Za-z0-9_.-]", r.name)));
            }
            if !names.insert(r.name.clone()) {
                return Err(Error::Config(format!("duplicate run name '{}'", r.name)));
            }
            let mut table = common.clone();
            merge(&mut table, &r.sections);
            apply_overrides(&mut table, &r.set)?;
            let config = ExperimentConfig::from_table(table, dir)
                .map_err(|e| Error::Config(format!("run '{}': {e}", r.name)))?;
            let seeds = r.seeds.unwrap_or_else(|| vec![config.train.seed]);
            if seeds.is_empty() {
                return Err(Error::Config(format!("run '{}' has no seeds", r.name)));
            }
            runs.push(SuiteRun {
                name: r.name,
                seeds,
                checkpoint: r.checkpoint.map(|c| resolve_path(dir, &c)),
                config,
            });
        }
        if runs.is_empty() {
            return Err(Error::Config("suite has no [[run]] entries".into()));
        }
        for c in &raw.compare {
            for n in [&c.a, &c.b] {
                if !names.contains(n) {
                    return Err(Error::Config(format!("comparison refers to unknown run '{n}'")));
                }
            }
        }
        let out = raw.out_dir.as_deref().unwrap_or("bench-out");
        Ok(Self {
            runs,
            compare: raw.compare,
            out_dir: resolve_path(dir, out),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path.parent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub report: EvalReport,
}

/// Averages over seeds of the per-seed corpus means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowMeans {
    pub noisy_si_sdr: f64,
    pub si_sdr: f64,
    pub improvement: f64,
    pub seg_snr: f64,
    pub speech_leak: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub name: String,
    pub scheme: String,
    pub loss: String,
    pub distance: String,
    /// Failure message; the row carries no results when set.
    pub failed: Option<String>,
    pub seeds: Vec<SeedResult>,
    pub means: Option<RowMeans>,
}

impl BenchRow {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        let means = self.means.as_ref()?;
        match m {
            Metric::NoisySiSdr => Some(means.noisy_si_sdr),
            Metric::SiSdr => Some(means.si_sdr),
            Metric::Improvement => Some(means.improvement),
            Metric::SegSnr => Some(means.seg_snr),
            Metric::Leak(n) => means.speech_leak.as_ref()?.get(n - 1).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub comparison: Comparison,
    pub a_value: Option<f64>,
    pub b_value: Option<f64>,
    pub pass: bool,
}

impl ComparisonResult {
    pub fn line(&self) -> String {
        let c = &self.comparison;
        let label = c.label.clone().unwrap_or_else(|| format!("{} vs {}", c.a, c.b));
        let metric = String::from(c.metric);
        match (self.a_value, self.b_value) {
            (Some(a), Some(b)) => {
                let need = if c.margin > 0.0 { format!(">= {}", c.margin) } else { "> 0".into() };
                format!(
                    "{} {label}: {metric} {a:.3} - {b:.3} = {:.3} (need {need})",
                    if self.pass { "PASS" } else { "FAIL" },
                    a - b,
                )
            }
            _ => format!("FAIL {label}: {metric} unavailable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub comparisons: Vec<ComparisonResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

impl BenchReport {
    fn new(rows: Vec<BenchRow>, compare: &[Comparison]) -> Self {
        let find = |n: &str, m: Metric| rows.iter().find(|r| r.name == n).and_then(|r| r.metric(m));
        let comparisons = compare
            .iter()
            .map(|c| {
                let (a, b) = (find(&c.a, c.metric), find(&c.b, c.metric));
                let pass = match (a, b) {
                    (Some(a), Some(b)) => a - b > 0.0 && a - b >= c.margin,
                    _ => false,
                };
                ComparisonResult {
                    comparison: c.clone(),
                    a_value: a,
                    b_value: b,
                    pass,
                }
            })
            .collect();
        Self { rows, comparisons }
    }

    /// Aligned table; the best value of each ranked column is starred.
    pub fn table(&self) -> String {
        let ranked = [Metric::SiSdr, Metric::Improvement, Metric::SegSnr];
        let best: Vec<Option<f64>> = ranked
            .iter()
            .map(|&m| self.rows.iter().filter_map(|r| r.metric(m)).reduce(f64::max))
            .collect();
        let leaks = self
            .rows
            .iter()
            .filter_map(|r| r.means.as_ref()?.speech_leak.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);

        let mut out = String::new();
        let _ = write!(
            out,
            "{:<20} {:<12} {:<28} {:>5} {:>9} {:>10} {:>10} {:>10}",
            "run", "scheme", "loss", "seeds", "noisy", "si_sdr", "delta", "segsnr"
        );
        for i in 0..leaks {
            let _ = write!(out, " {:>7}", format!("leak{}", i + 1));
        }
        out.push('\n');
        for r in &self.rows {
            let loss = format!("{}/{}", r.loss, r.distance);
            let _ = write!(out, "{:<20} {:<12} {:<28} {:>5}", r.name, r.scheme, loss, r.seeds.len());
            if let Some(f) = &r.failed {
                let _ = writeln!(out, " FAILED: {f}");
                continue;
            }
            let _ = write!(out, " {:>9.3}", r.metric(Metric::NoisySiSdr).unwrap_or(f64::NAN));
            for (m, b) in ranked.iter().zip(&best) {
                let v = r.metric(*m).unwrap_or(f64::NAN);
                let star = if Some(v) == *b { "*" } else { " " };
                let _ = write!(out, " {:>9}", format!("{v:.3}{star}"));
            }
            for i in 0..leaks {
                match r.metric(Metric::Leak(i + 1)) {
                    Some(v) => {
                        let _ = write!(out, " {v:>7.3}");
                    }
                    None => {
                        let _ = write!(out, " {:>7}", "-");
                    }
                }
            }
            out.push('\n');
        }
        for c in &self.comparisons {
            out.push_str(&c.line());
            out.push('\n');
        }
        out
    }
}

fn corpus_key(cfg: &ExperimentConfig) -> String {
    match &cfg.manifest {
        Some(p) => format!("manifest:{}", p.display()),
        None => serde_json::to_string(&cfg.data).unwrap_or_default(),
    }
}

fn run_row(run: &SuiteRun, corpus: &Corpus, out: &Path) -> Result<Vec<SeedResult>> {
    let split = if corpus.split(Split::Test).is_empty() {
        return Err(Error::Config("corpus has no test clips".into()));
    } else {
        Some(Split::Test)
    };
    let cfg = &run.config;
    if let Some(ck) = &run.checkpoint {
        let ck = Checkpoint::load(ck)?;
        let report = evaluate_corpus(&ck.model()?, &ck.stft, corpus, split)?;
        return Ok(vec![SeedResult {
            seed: cfg.train.seed,
            best_epoch: Some(ck.epoch),
            report,
        }]);
    }
    let mut results = Vec::new();
    for &seed in &run.seeds {
        let tc = crate::train::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let dir = out.join(&run.name).join(format!("seed-{seed}"));
        log::info!("training {} seed {seed} -> {}", run.name, dir.display());
        let rec = train::train(&tc, corpus, cfg.model, cfg.stft, &dir)?;
        let net = Checkpoint::load(&rec.best_checkpoint)?.model()?;
        let report = evaluate_corpus(&net, &cfg.stft, corpus, split)?;
        fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
        results.push(SeedResult {
            seed,
            best_epoch: Some(rec.best_epoch),
            report,
        });
    }
    Ok(results)
}

/// Run every row; a failing row is recorded and the rest continue.
pub fn run_suite(suite: &ExperimentSuite, out_dir: &Path) -> Result<BenchReport> {
    fs::create_dir_all(out_dir)?;
    let mut corpora: HashMap<String, std::result::Result<Corpus, String>> = HashMap::new();
    let mut rows = Vec::new();
    for run in &suite.runs {
        let cfg = &run.config;
        let corpus = corpora
            .entry(corpus_key(cfg))
            .or_insert_with(|| cfg.corpus().map_err(|e| e.to_string()));
        let result = match corpus {
            Ok(c) => run_row(run, c, out_dir).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        let mut row = BenchRow {
            name: run.name.clone(),
            scheme: cfg.train.scheme.to_string(),
            loss: cfg.train.loss.to_string(),
            distance: cfg.train.distance.to_string(),
            failed: None,
            seeds: Vec::new(),
            means: None,
        };
        match result {
            Ok(seeds) => {
                let leak_len = seeds[0].report.mean_speech_leak.as_ref().map(Vec::len);
                row.means = Some(RowMeans {
                    noisy_si_sdr: mean(seeds.iter().map(|s| s.report.mean_noisy_si_sdr)),
                    si_sdr: mean(seeds.iter().map(|s| s.report.mean_si_sdr)),
                    improvement: mean(seeds.iter().map(|s| s.report.mean_improvement)),
                    seg_snr: mean(seeds.iter().map(|s| s.report.mean_seg_snr)),
                    speech_leak: leak_len.map(|n| {
                        (0..n)
                            .map(|i| mean(seeds.iter().filter_map(|s| s.report.mean_speech_leak.as_ref().map(|l| l[i]))))
                            .collect()
                    }),
                });
                row.seeds = seeds;
            }
            Err(e) => {
                log::warn!("run {} failed: {e}", run.name);
                row.failed = Some(e);
            }
        }
        rows.push(row);
    }
    let report = BenchReport::new(rows, &suite.compare);
    fs::write(out_dir.join("bench.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_runs_and_comparisons() {
        let text = r#"
            out_dir = "out"
            [defaults.train]
            epochs = 3
            early_stop_patience = 1
            [[run]]
            name = "mean"
            seeds = [0, 1]
            [run.train]
            loss = "sample_tf_mean"
            [[run]]
            name = "median"
            set = ["train.loss=sample_median_tf_mean"]
            [[compare]]
            a = "median"
            b = "mean"
            metric = "improvement"
            margin = 0.5
        "#;
        let s = ExperimentSuite::parse(text, Some(Path::new("/x"))).unwrap();
        assert_eq!(s.out_dir, Path::new("/x/out"));
        assert_eq!(s.runs.len(), 2);
        assert_eq!(s.runs[0].seeds, vec![0, 1]);
        assert_eq!(s.runs[1].seeds, vec![0]);
        assert_eq!(s.runs[1].config.train.epochs, 3);
        assert_eq!(s.runs[1].config.train.loss.name(), "sample_median_tf_mean");
        assert_eq!(s.compare[0].metric, Metric::Improvement);
    }

    #[test]
    fn rejects_bad_suites() {
        for text in [
            "[[run]]\nname = \"a\"\n[[run]]\nname = \"a\"",
            "[[run]]\nname = \"a b\"",
            "",
            "[[run]]\nname = \"a\"\n[[compare]]\na = \"a\"\nb = \"z\"\nmetric = \"si_sdr\"",
            "[[run]]\nname = \"a\"\n[[compare]]\na = \"a\"\nb = \"a\"\nmetric = \"pesq\"",
            "[[run]]\nname = \"a\"\nseeds = []",
        ] {
            assert!(ExperimentSuite::parse(text, None).is_err(), "{text}");
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::NoisySiSdr, Metric::SiSdr, Metric::Improvement, Metric::SegSnr, Metric::Leak(3)] {
            assert_eq!(Metric::try_from(String::from(m)).unwrap(), m);
        }
    }
}
