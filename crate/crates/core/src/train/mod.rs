//! Training loop for the traditional, MixIT and augmented MixIT schemes.

mod checkpoint;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use crate::data::{magnitudes, Batch, Batcher, Corpus, Split};
use crate::dsp::{StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::loss::{self, Aggregation, AggregationSpec, Distance, DistanceKind, Grid3};
use crate::mixit::{self, AugmentationSpec, MixItBatch};
use crate::model::{clip_global_norm, InputNorm, MaskNet, MaskNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[serde(try_from = "String")]
pub enum Scheme {
    Traditional,
    Mixit,
    MixitAug,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Traditional, Scheme::Mixit, Scheme::MixitAug];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Traditional => "traditional",
            Scheme::Mixit => "mixit",
            Scheme::MixitAug => "mixit_aug",
        }
    }

    pub fn n_outputs(self) -> usize {
        match self {
            Scheme::Traditional => 1,
            Scheme::Mixit | Scheme::MixitAug => 3,
        }
    }

    pub fn is_mixit(self) -> bool {
        self != Scheme::Traditional
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|v| v.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}', expected traditional|mixit|mixit_aug")))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub distance: Distance,
    pub loss: Aggregation,
    pub trim_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub segment_s: f64,
    pub grad_clip: f64,
    /// SNR range for the MIXIT_AUG input augmentation.
    pub augment_snr_db: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Traditional,
            distance: Distance::Mse,
            loss: Aggregation::SampleTfMean,
            trim_fraction: 0.25,
            batch_size: 16,
            epochs: 50,
            early_stop_patience: 10,
            lr: 1e-3,
            seed: 0,
            segment_s: 1.0,
            grad_clip: 5.0,
            augment_snr_db: AugmentationSpec::default().snr_db,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: 1000 epochs, patience 140.
    pub fn paper_scale(mut self) -> Self {
        self.epochs = 1000;
        self.early_stop_patience = 140;
        self
    }

    pub fn distance_kind(&self) -> DistanceKind {
        self.distance.into()
    }

    pub fn aggregation(&self) -> AggregationSpec {
        AggregationSpec {
            order: self.loss,
            trim_fraction: self.trim_fraction,
        }
    }

    pub fn augmentation(&self) -> AugmentationSpec {
        AugmentationSpec {
            enabled: self.scheme == Scheme::MixitAug,
            snr_db: self.augment_snr_db,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.early_stop_patience >= self.epochs {
            return Err(Error::Config(format!(
                "early_stop_patience ({}) must be below epochs ({})",
                self.early_stop_patience, self.epochs
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.segment_s > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("segment_s and grad_clip must be positive".into()));
        }
        self.aggregation().validate()?;
        self.distance_kind().validate()?;
        self.augmentation().validate()
    }

    /// Scheme and network head count must agree.
    pub fn check_model(&self, model: &MaskNetConfig) -> Result<()> {
        if model.n_outputs != self.scheme.n_outputs() {
            return Err(Error::Config(format!(
                "scheme {} needs a {}-output model, got n_outputs = {}",
                self.scheme,
                self.scheme.n_outputs(),
                model.n_outputs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    /// Epochs since the last improvement.
    pub stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| loss < b);
        if improved {
            self.best = Some(loss);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience && self.patience > 0 && !improved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixitMetrics {
    pub train_loss_a: f64,
    pub train_loss_b: f64,
    /// Fraction of training batches won by assignment A.
    pub train_a_wins: f64,
    pub valid_loss_a: f64,
    pub valid_loss_b: f64,
}

/// One line of `metrics.jsonl`. Deterministic given config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub best_valid: f64,
    pub best_epoch: usize,
    pub improved: bool,
    pub grad_norm: f64,
    pub batches: usize,
    pub padded_crops: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixit: Option<MixitMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochMetrics>,
    /// Wall-clock seconds per epoch run in this process (absent for epochs
    /// restored from an earlier process).
    pub wall_time_s: Vec<f64>,
    pub best_checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub stopping_epoch: usize,
    pub stop_reason: String,
    pub config: serde_json::Value,
}

impl RunRecord {
    pub fn valid_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.valid_loss).collect()
    }
}

/// Snapshot written to `config.snapshot` at the start of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: MaskNetConfig,
    pub stft: StftConfig,
}

struct StepOut {
    loss: f64,
    split: Option<(f64, f64, bool)>,
    grad: Option<Vec<f64>>,
}

const TAG_EPOCH: u64 = 0x0E90_C400;
const TAG_AUG: u64 = 0x0A06_0000;
const TAG_VALID_AUG: u64 = 0x0A06_FFFF;

pub struct Trainer<'a> {
    cfg: TrainConfig,
    stft: StftConfig,
    pub net: MaskNet,
    adam: Adam,
    stopping: EarlyStopping,
    epoch: usize,
    finished: Option<String>,
    train: Batcher<'a>,
    valid: Vec<Batch>,
    /// Noise-only clips of the training split, for MIXIT_AUG.
    noise_pool: Vec<&'a [f64]>,
    run_dir: PathBuf,
    history: Vec<EpochMetrics>,
}

fn open_batchers<'a>(
    cfg: &TrainConfig,
    corpus: &'a Corpus,
) -> Result<(Batcher<'a>, Vec<Batch>, Vec<&'a [f64]>)> {
    let seg = (cfg.segment_s * corpus.sample_rate as f64).round() as usize;
    let train: Vec<_> = corpus.split(Split::Train).into_iter().map(|c| &c.example).collect();
    let valid: Vec<_> = corpus.split(Split::Valid).into_iter().map(|c| &c.example).collect();
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut noise_pool = Vec::new();
    if cfg.scheme.is_mixit() {
        for ex in train.iter().chain(&valid) {
            if ex.noise_only.is_none() {
                return Err(Error::Config(format!(
                    "scheme {} needs noise-only companions for every training clip",
                    cfg.scheme
                )));
            }
        }
        noise_pool = train
            .iter()
            .map(|ex| ex.noise_only.as_ref().unwrap().samples.as_slice())
            .collect();
    }
    let valid = Batcher::new(valid, cfg.batch_size, seg)?.fixed();
    Ok((Batcher::new(train, cfg.batch_size, seg)?, valid, noise_pool))
}

fn seeded(seed: u64, tag: u64, n: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::data::sub_seed(crate::data::sub_seed(seed, tag), n))
}

fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        corpus: &'a Corpus,
        model: MaskNetConfig,
        stft: StftConfig,
        run_dir: &Path,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.check_model(&model)?;
        stft.validate()?;
        if model.n_freq != stft.n_freq() {
            return Err(Error::Config(format!(
                "model n_freq {} does not match STFT bins {}",
                model.n_freq,
                stft.n_freq()
            )));
        }
        model.validate()?;
        let (train, valid, noise_pool) = open_batchers(&cfg, corpus)?;
        let mut net = MaskNet::new(model, cfg.seed)?;

        let mut trainer = Self {
            adam: Adam::new(net.param_count()),
            stopping: EarlyStopping::new(cfg.early_stop_patience),
            epoch: 0,
            finished: None,
            train,
            valid,
            noise_pool,
            run_dir: run_dir.to_path_buf(),
            history: Vec::new(),
            stft,
            cfg,
            net: {
                net.norm = InputNorm::identity(model.n_freq);
                net
            },
        };
        trainer.net.norm = trainer.fit_norm()?;

        fs::create_dir_all(trainer.run_dir.join("checkpoints"))?;
        let snapshot = RunConfig {
            train: trainer.cfg.clone(),
            model,
            stft,
        };
        write_file_atomic(
            &trainer.run_dir.join("config.snapshot"),
            serde_json::to_string_pretty(&snapshot)?.as_bytes(),
        )?;
        fs::write(trainer.run_dir.join("metrics.jsonl"), b"")?;
        Ok(trainer)
    }

    /// Continue from a checkpoint carrying training state. With `epochs`
    /// set, the epoch budget is extended to that total.
    pub fn resume(
        checkpoint: &Path,
        corpus: &'a Corpus,
        run_dir: &Path,
        epochs: Option<usize>,
    ) -> Result<Self> {
        let ck = Checkpoint::load(checkpoint)?;
        let state = ck.state.clone().ok_or_else(|| Error::Load {
            path: checkpoint.to_path_buf(),
            reason: "checkpoint carries no training state".into(),
        })?;
        let mut cfg = ck.train.clone().ok_or_else(|| Error::Load {
            path: checkpoint.to_path_buf(),
            reason: "checkpoint carries no training config".into(),
        })?;
        let metrics_path = run_dir.join("metrics.jsonl");
        let text = fs::read_to_string(&metrics_path).unwrap_or_default();
        let history: Vec<EpochMetrics> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .take(ck.epoch)
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Load {
                path: metrics_path.clone(),
                reason: e.to_string(),
            })?;
        if history.len() != ck.epoch {
            return Err(Error::Load {
                path: metrics_path,
                reason: format!("{} metric lines for {} completed epochs", history.len(), ck.epoch),
            });
        }
        let mut finished = state.finished.clone();
        if let Some(n) = epochs {
            if n > cfg.epochs && finished.as_deref() == Some("max_epochs") {
                finished = None;
            }
            cfg.epochs = cfg.epochs.max(n);
        }
        let (train, valid, noise_pool) = open_batchers(&cfg, corpus)?;
        let net = ck.model()?;
        let mut lines = String::new();
        for h in &history {
            lines.push_str(&serde_json::to_string(h)?);
            lines.push('\n');
        }
        fs::create_dir_all(run_dir.join("checkpoints"))?;
        fs::write(&metrics_path, lines)?;
        Ok(Self {
            cfg,
            stft: ck.stft,
            net,
            adam: state.adam,
            stopping: state.stopping,
            epoch: ck.epoch,
            finished,
            train,
            valid,
            noise_pool,
            run_dir: run_dir.to_path_buf(),
            history,
        })
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn best_checkpoint_path(&self) -> PathBuf {
        self.run_dir.join("checkpoints").join("best.ckpt")
    }

    pub fn last_checkpoint_path(&self) -> PathBuf {
        self.run_dir.join("checkpoints").join("last.ckpt")
    }

    fn fit_norm(&self) -> Result<InputNorm> {
        let mut mags = Vec::new();
        for b in self.train.fixed() {
            let x = if self.cfg.scheme.is_mixit() {
                &b.target + b.noise.as_ref().expect("mixit batches carry noise")
            } else {
                b.input.clone()
            };
            mags.push(magnitudes(&x, b.sample_rate, &self.stft)?);
        }
        Ok(InputNorm::fit(self.net.cfg.n_freq, &mags))
    }

    fn augment(&self, target: &Array2<f64>, clips: &[usize], rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        let spec = self.cfg.augmentation();
        let (k, len) = target.dim();
        let mut out = target.clone();
        for row in 0..k {
            let own = clips[row];
            let pool = self.noise_pool.len();
            let mut j = rng.random_range(0..pool);
            if pool > 1 && j == own {
                j = (j + 1 + rng.random_range(0..pool - 1)) % pool;
            }
            let src = self.noise_pool[j];
            let n_art: Vec<f64> = if src.len() > len {
                let off = rng.random_range(0..=src.len() - len);
                src[off..off + len].to_vec()
            } else {
                let mut v = src.to_vec();
                v.resize(len, 0.0);
                v
            };
            let sr = self.train_sample_rate();
            let x = Waveform {
                samples: target.row(row).to_vec(),
                sample_rate: sr,
            };
            let n = Waveform {
                samples: n_art,
                sample_rate: sr,
            };
            let (aug, _) = mixit::augment_input(&x, &n, &spec, rng)?;
            out.row_mut(row).assign(&ArrayView1::from(&aug.samples));
        }
        Ok(out)
    }

    fn train_sample_rate(&self) -> u32 {
        self.valid.first().map_or(16_000, |b| b.sample_rate)
    }

    fn step(&self, b: &Batch, aug_rng: Option<&mut ChaCha8Rng>, with_grad: bool) -> Result<StepOut> {
        let d = self.cfg.distance_kind();
        let spec = self.cfg.aggregation();
        let sr = b.sample_rate;
        if !self.cfg.scheme.is_mixit() {
            let y = magnitudes(&b.input, sr, &self.stft)?;
            let s = magnitudes(&b.target, sr, &self.stft)?;
            if !with_grad {
                let masks = self.net.forward(&y)?;
                let est = &masks.masks[0] * &y;
                return Ok(StepOut {
                    loss: loss::loss_value(&est, &s, &d, &spec)?,
                    split: None,
                    grad: None,
                });
            }
            let (masks, trace) = self.net.forward_trace(&y)?;
            let est = &masks.masks[0] * &y;
            let (value, g) = loss::loss_gradient(&est, &s, &d, &spec)?;
            let dm = g * &y;
            let grad = self.net.backward(&trace, &[dm])?;
            return Ok(StepOut {
                loss: value,
                split: None,
                grad: Some(grad),
            });
        }

        let noise = b
            .noise
            .as_ref()
            .ok_or_else(|| Error::Config("MixIT batch without noise-only data".into()))?;
        let x = match aug_rng {
            Some(rng) if self.cfg.scheme == Scheme::MixitAug => self.augment(&b.target, &b.clips, rng)?,
            _ => b.target.clone(),
        };
        let mix = &x + noise;
        let y = magnitudes(&mix, sr, &self.stft)?;
        let xm = magnitudes(&x, sr, &self.stft)?;
        let nm = magnitudes(noise, sr, &self.stft)?;
        let (masks, trace) = if with_grad {
            let (m, t) = self.net.forward_trace(&y)?;
            (m, Some(t))
        } else {
            (self.net.forward(&y)?, None)
        };
        let outputs: Vec<Grid3> = masks.masks.iter().map(|m| m * &y).collect();
        let batch = MixItBatch {
            mixture: xm,
            noise: nm,
            outputs: [outputs[0].clone(), outputs[1].clone(), outputs[2].clone()],
        };
        let ml = mixit::mixit_loss(&batch, &d, &spec)?;
        let (expect, _) = mixit::select_assignment(ml.loss_a, ml.loss_b);
        if expect.to_bits() != ml.value.to_bits() && ml.value.is_finite() {
            return Err(Error::Shape(format!(
                "MixIT loss {} is not min({}, {})",
                ml.value, ml.loss_a, ml.loss_b
            )));
        }
        let grad = match trace {
            Some(t) => {
                let dms: Vec<Grid3> = ml.grads.iter().map(|g| g * &y).collect();
                Some(self.net.backward(&t, &dms)?)
            }
            None => None,
        };
        Ok(StepOut {
            loss: ml.value,
            split: Some((ml.loss_a, ml.loss_b, ml.assignment == mixit::Assignment::A)),
            grad,
        })
    }

    fn dump_batch(&self, epoch: usize, index: usize, b: &Batch, loss: f64) -> PathBuf {
        let path = self.run_dir.join(format!("nonfinite_epoch{epoch}_batch{index}.json"));
        let stats = |a: &Array2<f64>| {
            let finite = a.iter().all(|v| v.is_finite());
            let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            serde_json::json!({ "all_finite": finite, "peak": peak })
        };
        let dump = serde_json::json!({
            "epoch": epoch,
            "batch": index,
            "loss": loss.to_string(),
            "clips": b.clips,
            "offsets": b.offsets,
            "padded": b.padded,
            "input": stats(&b.input),
            "target": stats(&b.target),
            "params_finite": self.net.params.iter().all(|v| v.is_finite()),
        });
        let _ = fs::write(&path, serde_json::to_string_pretty(&dump).unwrap_or_default());
        path
    }

    fn validate_epoch(&self) -> Result<(f64, Option<(f64, f64)>)> {
        let mut rng = seeded(self.cfg.seed, TAG_VALID_AUG, 0);
        let (mut sum, mut sa, mut sb, mut n) = (0.0, 0.0, 0.0, 0usize);
        for b in &self.valid {
            let out = self.step(b, Some(&mut rng), false)?;
            let w = b.len();
            sum += out.loss * w as f64;
            if let Some((a, bb, _)) = out.split {
                sa += a * w as f64;
                sb += bb * w as f64;
            }
            n += w;
        }
        let n = n as f64;
        Ok((sum / n, self.cfg.scheme.is_mixit().then_some((sa / n, sb / n))))
    }

    fn save(&self, path: &Path, state: bool, valid_loss: Option<f64>) -> Result<()> {
        let mut ck = Checkpoint::from_model(&self.net, self.stft);
        ck.epoch = self.epoch;
        ck.valid_loss = valid_loss;
        ck.train = Some(self.cfg.clone());
        if state {
            ck.state = Some(TrainState {
                adam: self.adam.clone(),
                stopping: self.stopping.clone(),
                finished: self.finished.clone(),
            });
        }
        ck.save(path)
    }

    /// Train one epoch and return its metrics; `valid_override` replaces
    /// the measured validation loss (used to exercise stopping logic).
    fn run_epoch(&mut self, valid_override: &mut dyn FnMut(usize, f64) -> f64) -> Result<EpochMetrics> {
        let epoch = self.epoch + 1;
        let mut rng = seeded(self.cfg.seed, TAG_EPOCH, epoch as u64);
        let mut aug_rng = seeded(self.cfg.seed, TAG_AUG, epoch as u64);
        let batches: Vec<Batch> = self.train.epoch(&mut rng).collect();
        let (mut sum, mut sa, mut sb, mut wins, mut gn, mut n, mut padded) =
            (0.0, 0.0, 0.0, 0usize, 0.0, 0usize, 0usize);
        for (i, b) in batches.iter().enumerate() {
            let out = self.step(b, Some(&mut aug_rng), true)?;
            let mut grad = out.grad.expect("gradient requested");
            if !out.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let dump = self.dump_batch(epoch, i, b, out.loss);
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: i,
                    dump,
                });
            }
            gn += clip_global_norm(&mut grad, self.cfg.grad_clip);
            self.adam.update(&mut self.net.params, &grad, self.cfg.lr);
            let w = b.len() as f64;
            sum += out.loss * w;
            if let Some((a, bb, a_won)) = out.split {
                sa += a * w;
                sb += bb * w;
                wins += a_won as usize;
            }
            n += b.len();
            padded += b.padded.iter().filter(|p| **p).count();
        }
        let nf = n as f64;
        let (measured, valid_split) = self.validate_epoch()?;
        if !measured.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                dump: self.dump_batch(epoch, usize::MAX, &self.valid[0], measured),
            });
        }
        let valid_loss = valid_override(epoch, measured);
        self.epoch = epoch;
        let decision = self.stopping.observe(epoch, valid_loss);
        if decision.stop {
            self.finished = Some("early_stop".into());
        } else if epoch >= self.cfg.epochs {
            self.finished = Some("max_epochs".into());
        }
        if decision.improved {
            self.save(&self.best_checkpoint_path(), false, Some(valid_loss))?;
        }
        self.save(&self.last_checkpoint_path(), true, Some(valid_loss))?;

        let metrics = EpochMetrics {
            epoch,
            train_loss: sum / nf,
            valid_loss,
            best_valid: self.stopping.best.unwrap_or(valid_loss),
            best_epoch: self.stopping.best_epoch,
            improved: decision.improved,
            grad_norm: gn / batches.len() as f64,
            batches: batches.len(),
            padded_crops: padded,
            mixit: valid_split.map(|(va, vb)| MixitMetrics {
                train_loss_a: sa / nf,
                train_loss_b: sb / nf,
                train_a_wins: wins as f64 / batches.len() as f64,
                valid_loss_a: va,
                valid_loss_b: vb,
            }),
        };
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(self.run_dir.join("metrics.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(&metrics)?)?;
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    pub fn run(&mut self) -> Result<RunRecord> {
        self.run_with_validation(|_, v| v)
    }

    pub fn run_with_validation<F: FnMut(usize, f64) -> f64>(&mut self, mut valid: F) -> Result<RunRecord> {
        let mut wall = Vec::new();
        if let Some(reason) = &self.finished {
            log::info!("run already finished ({reason}); nothing to do");
        }
        while self.finished.is_none() {
            let t0 = Instant::now();
            let m = self.run_epoch(&mut valid)?;
            wall.push(t0.elapsed().as_secs_f64());
            log::info!(
                "epoch {:>4}  train {:.6}  valid {:.6}{}",
                m.epoch,
                m.train_loss,
                m.valid_loss,
                if m.improved { "  *" } else { "" }
            );
        }
        // Leave the trainer holding the best weights.
        let best = self.best_checkpoint_path();
        if best.exists() {
            self.net = Checkpoint::load(&best)?.model()?;
        }
        let record = RunRecord {
            epochs: self.history.clone(),
            wall_time_s: wall,
            best_checkpoint: best,
            best_epoch: self.stopping.best_epoch,
            best_valid: self.stopping.best.unwrap_or(f64::NAN),
            stopping_epoch: self.epoch,
            stop_reason: self.finished.clone().unwrap_or_default(),
            config: serde_json::to_value(RunConfig {
                train: self.cfg.clone(),
                model: self.net.cfg,
                stft: self.stft,
            })?,
        };
        write_file_atomic(
            &self.run_dir.join("run_record.json"),
            serde_json::to_string_pretty(&record)?.as_bytes(),
        )?;
        Ok(record)
    }
}

/// Train from scratch into `run_dir`.
pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    model: MaskNetConfig,
    stft: StftConfig,
    run_dir: &Path,
) -> Result<RunRecord> {
    Trainer::new(cfg.clone(), corpus, model, stft, run_dir)?.run()
}

/// Continue the run in `run_dir` from its last checkpoint.
pub fn resume(corpus: &Corpus, run_dir: &Path, epochs: Option<usize>) -> Result<RunRecord> {
    let ck = run_dir.join("checkpoints").join("last.ckpt");
    Trainer::resume(&ck, corpus, run_dir, epochs)?.run()
}
