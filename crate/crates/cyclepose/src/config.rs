//! Run configuration file: one JSON document holding the model, training and
//! data sections. Every field is optional with documented defaults; unknown
//! keys are rejected at parse time.

use crate::data::DataConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validate each section and the fields that must agree across sections.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.model.image_size != self.data.image_size {
            return Err(Error::Config(format!(
                "model.image_size {:?} != data.image_size {:?}",
                self.model.image_size, self.data.image_size
            )));
        }
        if self.model.num_keypoints != self.data.num_keypoints {
            return Err(Error::Config(format!(
                "model.num_keypoints {} != data.num_keypoints {}",
                self.model.num_keypoints, self.data.num_keypoints
            )));
        }
        if self.model.heatmap_size != self.data.heatmap_size {
            return Err(Error::Config(format!(
                "model.heatmap_size {:?} != data.heatmap_size {:?}",
                self.model.heatmap_size, self.data.heatmap_size
            )));
        }
        if self.model.in_channels != self.data.channels() {
            return Err(Error::Config(format!(
                "model.in_channels {} != the {} channels the generator renders",
                self.model.in_channels,
                self.data.channels()
            )));
        }
        Ok(())
    }

    /// Hash of the fully resolved config, embedded in every output file.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// Short content hash of a serializable value (first 16 hex chars of the
/// SHA-256 of its canonical JSON).
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialization cannot fail");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(16);
    for b in &digest[..8] {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
