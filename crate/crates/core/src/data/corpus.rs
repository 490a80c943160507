use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{ClickEvent, NoiseFamily};
use super::{
    resolve, sub_seed, synth_clip_at, wav, Category, MixSpec, NoiseSource, NoiseSpec, SpeechSource,
    TrainingExample,
};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Pre-rendered clip stored as WAV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileClip {
    pub target: PathBuf,
    /// Network input; defaults to the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSource {
    Synth(MixSpec),
    Files(FileClip),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    #[serde(flatten)]
    pub source: ClipSource,
}

impl ManifestEntry {
    pub fn category(&self) -> Option<Category> {
        match &self.source {
            ClipSource::Synth(s) => Some(s.category),
            ClipSource::Files(f) => f.category,
        }
    }

    /// Ground-truth click count, known for synthesized clips.
    pub fn injected_clicks(&self) -> Option<usize> {
        match &self.source {
            ClipSource::Synth(s) => Some(s.clicks.len()),
            ClipSource::Files(_) => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    schema: u32,
    sample_rate: u32,
    #[serde(flatten)]
    entry: ManifestEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative file references resolve against.
    pub base_dir: Option<PathBuf>,
}

impl CorpusManifest {
    pub fn new(sample_rate: u32, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            sample_rate,
            entries,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Manifest("sample_rate must be positive".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate clip id '{}'", e.id)));
            }
            if let ClipSource::Synth(s) = &e.source {
                s.validate()
                    .map_err(|err| Error::Manifest(format!("clip '{}': {err}", e.id)))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let line = Line {
                schema: MANIFEST_SCHEMA,
                sample_rate: self.sample_rate,
                entry: e.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut sample_rate = None;
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
            if line.schema != MANIFEST_SCHEMA {
                return Err(Error::Manifest(format!(
                    "line {}: schema {} unsupported (expected {MANIFEST_SCHEMA})",
                    n + 1,
                    line.schema
                )));
            }
            match sample_rate {
                None => sample_rate = Some(line.sample_rate),
                Some(sr) if sr != line.sample_rate => {
                    return Err(Error::Manifest(format!(
                        "line {}: sample rate {} differs from {sr}",
                        n + 1,
                        line.sample_rate
                    )))
                }
                _ => {}
            }
            entries.push(line.entry);
        }
        let sample_rate =
            sample_rate.ok_or_else(|| Error::Manifest("manifest has no entries".into()))?;
        Self::new(sample_rate, entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut m = Self::from_jsonl(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    /// Write atomically: a failed write leaves no partial manifest behind.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_jsonl().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<TrainingExample> {
        let base = self.base_dir.as_deref();
        match &entry.source {
            ClipSource::Synth(spec) => synth_clip_at(spec, self.sample_rate, base),
            ClipSource::Files(f) => {
                let read = |p: &Path| wav::read_wav(&resolve(base, p), Some(self.sample_rate));
                let target = read(&f.target)?;
                let ex = TrainingExample {
                    input: match &f.input {
                        Some(p) => read(p)?,
                        None => target.clone(),
                    },
                    clean_ref: f.clean.as_deref().map(read).transpose()?,
                    noise_only: f.noise.as_deref().map(read).transpose()?,
                    target,
                };
                ex.validate()
                    .map_err(|e| Error::Manifest(format!("clip '{}': {e}", entry.id)))?;
                Ok(ex)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRecipe {
    pub families: Vec<NoiseFamily>,
    pub snr_db: (f64, f64),
}

impl NoiseRecipe {
    fn validate(&self, what: &str) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Recipe(format!("{what}: no noise families")));
        }
        let (lo, hi) = self.snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Recipe(format!("{what}: bad SNR range ({lo}, {hi})")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> NoiseSpec {
        let family = self.families[rng.random_range(0..self.families.len())];
        NoiseSpec {
            source: NoiseSource::Family(family),
            snr_db: uniform(rng, self.snr_db),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn all_families(snr_db: (f64, f64)) -> NoiseRecipe {
    NoiseRecipe {
        families: NoiseFamily::ALL.to_vec(),
        snr_db,
    }
}

/// Corpus-level generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusRecipe {
    /// Train plus validation clips.
    pub clips: usize,
    /// Clean-target test clips, generated in addition to `clips`.
    pub test_clips: usize,
    pub valid_fraction: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub level_rms: f64,
    pub noisy_speech_rate: f64,
    pub pure_noise_rate: f64,
    pub silence_rate: f64,
    pub recording_noise: NoiseRecipe,
    /// SNR range for PURE_NOISE clips, relative to the nominal speech level.
    pub pure_noise_snr_db: (f64, f64),
    /// Fraction of speech clips in train/valid that carry click events.
    pub click_rate: f64,
    pub clicks_per_clip: (usize, usize),
    pub click_amplitude: (f64, f64),
    pub input_noise: Option<NoiseRecipe>,
    pub noise_only: Option<NoiseRecipe>,
}

impl Default for CorpusRecipe {
    fn default() -> Self {
        Self {
            clips: 200,
            test_clips: 30,
            valid_fraction: 0.1,
            duration_s: 2.0,
            sample_rate: 16_000,
            seed: 0,
            level_rms: 0.03,
            noisy_speech_rate: 0.2,
            pure_noise_rate: 0.0,
            silence_rate: 0.0,
            recording_noise: all_families((0.0, 5.0)),
            pure_noise_snr_db: (-5.0, 10.0),
            click_rate: 0.0,
            clicks_per_clip: (1, 3),
            click_amplitude: (0.7, 0.95),
            input_noise: Some(all_families((0.0, 10.0))),
            noise_only: Some(all_families((0.0, 10.0))),
        }
    }
}

impl CorpusRecipe {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("noisy_speech_rate", self.noisy_speech_rate),
            ("pure_noise_rate", self.pure_noise_rate),
            ("silence_rate", self.silence_rate),
            ("click_rate", self.click_rate),
            ("valid_fraction", self.valid_fraction),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Recipe(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        let sum = self.noisy_speech_rate + self.pure_noise_rate + self.silence_rate;
        if sum > 1.0 + 1e-12 {
            return Err(Error::Recipe(format!("category rates sum to {sum} > 1")));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Recipe("duration_s must be positive".into()));
        }
        if self.sample_rate == 0 || !(self.level_rms > 0.0) {
            return Err(Error::Recipe("sample_rate and level_rms must be positive".into()));
        }
        let (cmin, cmax) = self.clicks_per_clip;
        if cmin > cmax {
            return Err(Error::Recipe("clicks_per_clip min exceeds max".into()));
        }
        let (amin, amax) = self.click_amplitude;
        if !(amin > 0.0 && amin <= amax) {
            return Err(Error::Recipe("click_amplitude must be a positive range".into()));
        }
        if self.click_rate > 0.0 && cmax > 0 {
            let need = 0.1 + (cmax as f64 - 1.0) * CLICK_SPACING_S;
            if need > self.duration_s {
                return Err(Error::Recipe(format!(
                    "{cmax} clicks do not fit in {} s clips",
                    self.duration_s
                )));
            }
        }
        self.recording_noise.validate("recording_noise")?;
        if let Some(n) = &self.input_noise {
            n.validate("input_noise")?;
        }
        if let Some(n) = &self.noise_only {
            n.validate("noise_only")?;
        }
        Ok(())
    }
}

const CLICK_SPACING_S: f64 = 0.1;

fn click_times(rng: &mut ChaCha8Rng, n: usize, duration: f64) -> Vec<f64> {
    // Evenly spread slots with jitter keep clicks at least CLICK_SPACING_S apart.
    let span = duration - 0.1;
    let slot = span / n as f64;
    let jitter = (slot - CLICK_SPACING_S).max(0.0);
    (0..n)
        .map(|i| 0.05 + i as f64 * slot + if jitter > 0.0 { rng.random_range(0.0..jitter) } else { 0.0 })
        .collect()
}

fn category_counts(recipe: &CorpusRecipe) -> [(Category, usize); 3] {
    let n = recipe.clips;
    let mut left = n;
    let mut take = |rate: f64| {
        let c = ((rate * n as f64).round() as usize).min(left);
        left -= c;
        c
    };
    [
        (Category::PureNoise, take(recipe.pure_noise_rate)),
        (Category::Silence, take(recipe.silence_rate)),
        (Category::NoisySpeech, take(recipe.noisy_speech_rate)),
    ]
}

/// Generate a manifest from a recipe. Deterministic in `recipe.seed`.
pub fn build_corpus(recipe: &CorpusRecipe) -> Result<CorpusManifest> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(recipe.seed, 0xC0_4905));
    let mut cats: Vec<Category> = Vec::with_capacity(recipe.clips);
    for (c, k) in category_counts(recipe) {
        cats.extend(std::iter::repeat_n(c, k));
    }
    cats.resize(recipe.clips, Category::Clean);
    cats.shuffle(&mut rng);

    let speech_idx: Vec<usize> = (0..cats.len()).filter(|&i| cats[i].has_speech()).collect();
    let n_click = (recipe.click_rate * speech_idx.len() as f64).round() as usize;
    let mut click_idx = speech_idx.clone();
    click_idx.shuffle(&mut rng);
    click_idx.truncate(n_click);
    let with_clicks: HashSet<usize> = click_idx.into_iter().collect();

    let n_valid = (recipe.valid_fraction * recipe.clips as f64).round() as usize;
    let mut entries = Vec::with_capacity(recipe.clips + recipe.test_clips);
    for (i, &category) in cats.iter().enumerate() {
        let mut crng = ChaCha8Rng::seed_from_u64(sub_seed(recipe.seed, 1_000 + i as u64));
        let mut spec = base_spec(recipe, category, crng.random());
        match category {
            Category::NoisySpeech => spec.recording_noise = Some(recipe.recording_noise.draw(&mut crng)),
            Category::PureNoise => {
                let mut n = recipe.recording_noise.draw(&mut crng);
                n.snr_db = uniform(&mut crng, recipe.pure_noise_snr_db);
                spec.recording_noise = Some(n);
            }
            _ => {}
        }
        if with_clicks.contains(&i) {
            let (lo, hi) = recipe.clicks_per_clip;
            let n = crng.random_range(lo..=hi);
            spec.clicks = click_times(&mut crng, n, recipe.duration_s)
                .into_iter()
                .map(|time_s| ClickEvent {
                    time_s,
                    amplitude: uniform(&mut crng, recipe.click_amplitude),
                })
                .collect();
        }
        fill_noises(recipe, &mut spec, &mut crng);
        entries.push(ManifestEntry {
            id: format!("clip-{i:05}"),
            split: if i < n_valid { Split::Valid } else { Split::Train },
            source: ClipSource::Synth(spec),
        });
    }
    for j in 0..recipe.test_clips {
        let mut crng = ChaCha8Rng::seed_from_u64(sub_seed(recipe.seed, 1 << 40 | j as u64));
        let mut spec = base_spec(recipe, Category::Clean, crng.random());
        fill_noises(recipe, &mut spec, &mut crng);
        entries.push(ManifestEntry {
            id: format!("test-{j:05}"),
            split: Split::Test,
            source: ClipSource::Synth(spec),
        });
    }
    CorpusManifest::new(recipe.sample_rate, entries)
}

fn base_spec(recipe: &CorpusRecipe, category: Category, seed: u64) -> MixSpec {
    MixSpec {
        category,
        duration_s: recipe.duration_s,
        seed,
        speech: category.has_speech().then_some(SpeechSource::Synthetic),
        level_rms: recipe.level_rms,
        recording_noise: None,
        clicks: vec![],
        input_noise: None,
        noise_only: None,
    }
}

fn fill_noises(recipe: &CorpusRecipe, spec: &mut MixSpec, rng: &mut ChaCha8Rng) {
    spec.input_noise = recipe.input_noise.as_ref().map(|n| n.draw(rng));
    spec.noise_only = recipe.noise_only.as_ref().map(|n| n.draw(rng));
}

/// One rendered clip with its manifest metadata.
#[derive(Debug, Clone)]
pub struct CorpusExample {
    pub id: String,
    pub split: Split,
    pub category: Option<Category>,
    pub example: TrainingExample,
}

/// Rendered corpus held in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sample_rate: u32,
    pub clips: Vec<CorpusExample>,
}

impl Corpus {
    pub fn load(manifest: &CorpusManifest) -> Result<Self> {
        let clips = manifest
            .entries
            .iter()
            .map(|e| {
                Ok(CorpusExample {
                    id: e.id.clone(),
                    split: e.split,
                    category: e.category(),
                    example: manifest.load_entry(e)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            sample_rate: manifest.sample_rate,
            clips,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&CorpusExample> {
        self.clips.iter().filter(|c| c.split == split).collect()
    }

    /// Write every clip as WAV files under `dir` and return a manifest that
    /// references them (paths relative to `dir`).
    pub fn write_wavs(&self, dir: &Path) -> Result<CorpusManifest> {
        let clips_dir = dir.join("clips");
        fs::create_dir_all(&clips_dir)?;
        let mut entries = Vec::with_capacity(self.clips.len());
        for c in &self.clips {
            let rel = |kind: &str| PathBuf::from("clips").join(format!("{}_{kind}.wav", c.id));
            let put = |kind: &str, w: &Waveform| -> Result<PathBuf> {
                let r = rel(kind);
                wav::write_wav(&dir.join(&r), w)?;
                Ok(r)
            };
            let ex = &c.example;
            entries.push(ManifestEntry {
                id: c.id.clone(),
                split: c.split,
                source: ClipSource::Files(FileClip {
                    target: put("target", &ex.target)?,
                    input: Some(put("input", &ex.input)?),
                    clean: ex.clean_ref.as_ref().map(|w| put("clean", w)).transpose()?,
                    noise: ex.noise_only.as_ref().map(|w| put("noise", w)).transpose()?,
                    category: c.category,
                }),
            });
        }
        let mut m = CorpusManifest::new(self.sample_rate, entries)?;
        m.base_dir = Some(dir.to_path_buf());
        Ok(m)
    }
}
