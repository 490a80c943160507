//! Experiment configuration files.
//!
//! A config is a TOML document with `[data]`, `[train]`, `[model]`, `[stft]`
//! and `[mixit.augment]` sections. Every key is optional. Overrides of the
//! form `train.lr=3e-3` are applied on top of the parsed file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{build_corpus, Corpus, CorpusManifest, CorpusRecipe};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::loss::Distance;
use crate::model::MaskNetConfig;
use crate::train::{Scheme, TrainConfig};

/// Network size; the head count and frequency bins follow from the scheme and STFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub bottleneck: usize,
    pub recurrent_layers: usize,
    pub bidirectional: bool,
    /// Explicit head count. Normally left unset so it matches the scheme.
    pub n_outputs: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = MaskNetConfig::desk(513, 1);
        Self {
            bottleneck: desk.bottleneck,
            recurrent_layers: desk.recurrent_layers,
            bidirectional: desk.bidirectional,
            n_outputs: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: Option<bool>,
    pub snr_db: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixitSection {
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    data: CorpusRecipe,
    train: TrainConfig,
    model: ModelSection,
    stft: StftConfig,
    mixit: MixitSection,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: CorpusRecipe,
    /// Existing manifest to train on instead of synthesizing `data`.
    pub manifest: Option<PathBuf>,
    pub train: TrainConfig,
    pub model: MaskNetConfig,
    pub stft: StftConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_table(Table::new(), None).expect("default config is valid")
    }
}

impl ExperimentConfig {
    /// Parse `text`, apply `overrides`, and resolve. Relative paths are taken
    /// from `base_dir`.
    pub fn parse(text: &str, overrides: &[String], base_dir: Option<&Path>) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        apply_overrides(&mut table, overrides)?;
        Self::from_table(table, base_dir)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides, path.parent())
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn from_table(mut table: Table, base_dir: Option<&Path>) -> Result<Self> {
        let manifest = match table.get_mut("data").and_then(Value::as_table_mut) {
            Some(data) => match data.remove("manifest") {
                Some(Value::String(p)) => Some(resolve_path(base_dir, &p)),
                Some(other) => {
                    return Err(Error::Config(format!("data.manifest must be a path, got {other}")))
                }
                None => None,
            },
            None => None,
        };
        let explicit_distance = table
            .get("train")
            .and_then(Value::as_table)
            .is_some_and(|t| t.contains_key("distance"));
        let raw: RawConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;

        let mut train = raw.train;
        if let Some(enabled) = raw.mixit.augment.enabled {
            train.scheme = match (train.scheme, enabled) {
                (Scheme::Traditional, true) => {
                    return Err(Error::Config(
                        "mixit.augment.enabled needs scheme mixit or mixit_aug".into(),
                    ))
                }
                (Scheme::Traditional, false) => Scheme::Traditional,
                (_, true) => Scheme::MixitAug,
                (_, false) => Scheme::Mixit,
            };
        }
        // MixIT trains with the SDR distance unless told otherwise.
        if train.scheme.is_mixit() && !explicit_distance {
            train.distance = Distance::Sdr;
        }
        if let Some(snr) = raw.mixit.augment.snr_db {
            train.augment_snr_db = snr;
        }
        raw.stft.validate()?;
        let model = MaskNetConfig {
            n_freq: raw.stft.n_freq(),
            bottleneck: raw.model.bottleneck,
            recurrent_layers: raw.model.recurrent_layers,
            bidirectional: raw.model.bidirectional,
            n_outputs: raw.model.n_outputs.unwrap_or(train.scheme.n_outputs()),
        };
        let cfg = Self {
            data: raw.data,
            manifest,
            train,
            model,
            stft: raw.stft,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.train.check_model(&self.model)?;
        if self.manifest.is_none() {
            self.data.validate()?;
        }
        Ok(())
    }

    /// The manifest this experiment trains on.
    pub fn manifest(&self) -> Result<CorpusManifest> {
        match &self.manifest {
            Some(p) => CorpusManifest::read(p),
            None => build_corpus(&self.data),
        }
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.manifest()?)
    }

    /// Full-length schedule and full-size network.
    pub fn paper_scale(mut self) -> Self {
        let full = MaskNetConfig::default();
        self.train = self.train.paper_scale();
        self.model.bottleneck = full.bottleneck;
        self.model.recurrent_layers = full.recurrent_layers;
        self
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

pub(crate) fn resolve_path(base: Option<&Path>, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path,
    }
}

/// Parse an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("bad override key '{key}'")));
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a section")))?;
        }
        node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

/// Recursively overlay `top` onto `base`.
pub fn merge(base: &mut Table, top: &Table) {
    for (k, v) in top {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
