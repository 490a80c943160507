use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, EarlyStopping, TrainConfig};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::{InputNorm, MaskNet, MaskNetConfig};

pub const CHECKPOINT_FORMAT: &str = "robust-se/checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer and bookkeeping needed to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub adam: Adam,
    pub stopping: EarlyStopping,
    /// Why the run ended, once it has.
    pub finished: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: MaskNetConfig,
    pub stft: StftConfig,
    pub norm: InputNorm,
    pub params: Vec<f64>,
    /// Epochs completed when this was written.
    pub epoch: usize,
    pub valid_loss: Option<f64>,
    pub train: Option<TrainConfig>,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_model(net: &MaskNet, stft: StftConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: net.cfg,
            stft,
            norm: net.norm.clone(),
            params: net.params.clone(),
            epoch: 0,
            valid_loss: None,
            train: None,
            state: None,
        }
    }

    pub fn model(&self) -> Result<MaskNet> {
        MaskNet::from_parts(self.model, self.norm.clone(), self.params.clone())
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let err = |reason: String| Error::Load {
            path: origin.to_path_buf(),
            reason,
        };
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| err(format!("not a checkpoint: {e}")))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(err("not a checkpoint: missing format tag".into()));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(err(format!(
                "checkpoint version {version:?} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let ck: Checkpoint =
            serde_json::from_value(value).map_err(|e| err(format!("malformed checkpoint: {e}")))?;
        ck.stft.validate().map_err(|e| err(e.to_string()))?;
        if ck.stft.n_freq() != ck.model.n_freq {
            return Err(err("STFT and model frequency bins disagree".into()));
        }
        ck.model().map_err(|e| err(e.to_string()))?;
        if let Some(st) = &ck.state {
            if st.adam.m.len() != ck.params.len() || st.adam.v.len() != ck.params.len() {
                return Err(err("optimizer state does not match parameters".into()));
            }
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text, path)
    }

    /// Write to a temporary sibling, then rename over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.flush()?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
