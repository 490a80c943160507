//! Synthetic corpus generation, manifests, audio I/O, batching and corpus
//! triage.

mod analyze;
mod batch;
mod corpus;
pub mod synth;
pub mod wav;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use analyze::{analyze_clip, analyze_corpus, AnalyzerConfig, ClipReport};
pub use batch::{magnitudes, Batch, Batcher};
pub use corpus::{
    build_corpus, ClipSource, Corpus, CorpusExample, CorpusManifest, CorpusRecipe, FileClip,
    ManifestEntry, NoiseRecipe, Split, MANIFEST_SCHEMA,
};
pub use synth::{ClickEvent, NoiseFamily};

use crate::dsp::{energy, Waveform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Clean,
    NoisySpeech,
    PureNoise,
    Silence,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Clean,
        Category::NoisySpeech,
        Category::PureNoise,
        Category::Silence,
    ];

    pub fn has_speech(self) -> bool {
        matches!(self, Category::Clean | Category::NoisySpeech)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Clean => "CLEAN",
            Category::NoisySpeech => "NOISY_SPEECH",
            Category::PureNoise => "PURE_NOISE",
            Category::Silence => "SILENCE",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeechSource {
    Synthetic,
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    Family(NoiseFamily),
    File { path: PathBuf },
}

/// A noise component mixed at `snr_db` relative to the clip's speech, or
/// relative to the nominal speech level when the clip has no speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub source: NoiseSource,
    pub snr_db: f64,
}

/// Declarative recipe for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub category: Category,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub speech: Option<SpeechSource>,
    /// Nominal RMS of synthetic speech; also the reference level for noise
    /// in clips without speech.
    #[serde(default = "default_level")]
    pub level_rms: f64,
    #[serde(default)]
    pub recording_noise: Option<NoiseSpec>,
    #[serde(default)]
    pub clicks: Vec<ClickEvent>,
    /// Noise added on top of the target to form the network input.
    #[serde(default)]
    pub input_noise: Option<NoiseSpec>,
    /// Independent noise-only companion clip used as `N` by MixIT.
    #[serde(default)]
    pub noise_only: Option<NoiseSpec>,
}

fn default_level() -> f64 {
    0.03
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Manifest(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if !self.category.has_speech() && self.speech.is_some() {
            return Err(Error::Manifest(format!(
                "{} clips cannot carry a speech source",
                self.category
            )));
        }
        if self.category.has_speech() && self.speech.is_none() {
            return Err(Error::Manifest(format!(
                "{} clips need a speech source",
                self.category
            )));
        }
        if !(self.level_rms > 0.0) {
            return Err(Error::Manifest("level_rms must be positive".into()));
        }
        for c in &self.clicks {
            if !(c.time_s >= 0.0 && c.time_s < self.duration_s) || !c.amplitude.is_finite() {
                return Err(Error::Manifest(format!(
                    "click at {} s lies outside the clip",
                    c.time_s
                )));
            }
        }
        Ok(())
    }
}

/// One clip as seen by training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub input: Waveform,
    pub target: Waveform,
    /// Oracle clean speech, used only by evaluation.
    pub clean_ref: Option<Waveform>,
    pub noise_only: Option<Waveform>,
}

impl TrainingExample {
    pub fn validate(&self) -> Result<()> {
        let (len, sr) = (self.target.len(), self.target.sample_rate);
        let others = [Some(&self.input), self.clean_ref.as_ref(), self.noise_only.as_ref()];
        for w in others.into_iter().flatten() {
            if w.len() != len || w.sample_rate != sr {
                return Err(Error::Shape(format!(
                    "example waveforms disagree: {}@{} vs {}@{}",
                    w.len(),
                    w.sample_rate,
                    len,
                    sr
                )));
            }
        }
        Ok(())
    }
}

/// Derive an independent stream seed for one component of a clip.
pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn fit_length(mut x: Vec<f64>, len: usize, tile: bool) -> Vec<f64> {
    if x.len() >= len {
        x.truncate(len);
        return x;
    }
    if tile && !x.is_empty() {
        let src = x.clone();
        while x.len() < len {
            let need = len - x.len();
            x.extend_from_slice(&src[..need.min(src.len())]);
        }
    } else {
        x.resize(len, 0.0);
    }
    x
}

fn noise_signal(
    spec: &NoiseSpec,
    len: usize,
    sr: u32,
    seed: u64,
    base: Option<&Path>,
    ref_energy: f64,
) -> Result<Vec<f64>> {
    let raw = match &spec.source {
        NoiseSource::Family(f) => synth::noise(*f, len, sr, &mut ChaCha8Rng::seed_from_u64(seed)),
        NoiseSource::File { path } => {
            let w = wav::read_wav(&resolve(base, path), Some(sr)).map_err(|e| {
                Error::Manifest(format!("noise source {}: {e}", path.display()))
            })?;
            fit_length(w.samples, len, true)
        }
    };
    let e = energy(&raw);
    if e == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let g = (ref_energy / (e * 10f64.powf(spec.snr_db / 10.0))).sqrt();
    Ok(raw.into_iter().map(|v| v * g).collect())
}

const TAG_SPEECH: u64 = 1;
const TAG_RECORDING: u64 = 2;
const TAG_CLICKS: u64 = 3;
const TAG_INPUT: u64 = 4;
const TAG_NOISE_ONLY: u64 = 5;
const TAG_DITHER: u64 = 6;

/// Render a clip. Relative file references resolve against `base`.
pub fn synth_clip_at(spec: &MixSpec, sample_rate: u32, base: Option<&Path>) -> Result<TrainingExample> {
    spec.validate()?;
    let len = (spec.duration_s * sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::Manifest("clip shorter than one sample".into()));
    }
    let speech = match &spec.speech {
        None => vec![0.0; len],
        Some(SpeechSource::Synthetic) => synth::speech(
            len,
            sample_rate,
            spec.level_rms,
            &mut ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, TAG_SPEECH)),
        ),
        Some(SpeechSource::File { path }) => {
            let w = wav::read_wav(&resolve(base, path), Some(sample_rate)).map_err(|e| {
                Error::Manifest(format!("speech source {}: {e}", path.display()))
            })?;
            fit_length(w.samples, len, false)
        }
    };
    let speech_energy = energy(&speech);
    let ref_energy = if speech_energy > 0.0 {
        speech_energy
    } else {
        spec.level_rms * spec.level_rms * len as f64
    };

    let mut target = speech.clone();
    if let Some(rec) = &spec.recording_noise {
        let n = noise_signal(rec, len, sample_rate, sub_seed(spec.seed, TAG_RECORDING), base, ref_energy)?;
        target.iter_mut().zip(&n).for_each(|(t, v)| *t += v);
    }
    if spec.category == Category::Silence {
        // Faint dither instead of digital zero.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, TAG_DITHER));
        target.iter_mut().for_each(|t| *t += rng.random_range(-2e-5..2e-5));
    }
    synth::add_clicks(
        &mut target,
        sample_rate,
        &spec.clicks,
        &mut ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, TAG_CLICKS)),
    );

    let mut input = target.clone();
    if let Some(inp) = &spec.input_noise {
        let n = noise_signal(inp, len, sample_rate, sub_seed(spec.seed, TAG_INPUT), base, ref_energy)?;
        input.iter_mut().zip(&n).for_each(|(t, v)| *t += v);
    }
    let noise_only = spec
        .noise_only
        .as_ref()
        .map(|n| noise_signal(n, len, sample_rate, sub_seed(spec.seed, TAG_NOISE_ONLY), base, ref_energy))
        .transpose()?;

    let wave = |s: Vec<f64>| Waveform {
        samples: s,
        sample_rate,
    };
    Ok(TrainingExample {
        input: wave(input),
        target: wave(target),
        clean_ref: spec.category.has_speech().then(|| wave(speech)),
        noise_only: noise_only.map(wave),
    })
}

pub fn synth_clip(spec: &MixSpec, sample_rate: u32) -> Result<TrainingExample> {
    synth_clip_at(spec, sample_rate, None)
}
