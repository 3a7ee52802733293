//! Whole-pipeline configuration, loadable from JSON with per-field defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gsa::GsaConfig;
use crate::preprocess::PreprocessConfig;
use crate::roi::ChestwallSide;
use crate::select::SelectConfig;
use crate::spectrum::WelchConfig;
use crate::svm::SvmConfig;

/// Which channels feed selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// All six channels, most periodic one selected.
    #[default]
    MultiRoi,
    /// Chest minus pelvis only.
    SingleRoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub splits: usize,
    /// Subjects held out for testing in each split, as a fraction.
    pub test_fraction: f64,
    /// Give up after this many degenerate draws in a row.
    pub max_redraws: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            splits: 200,
            test_fraction: 1.0 / 3.0,
            max_redraws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub extraction: Extraction,
    pub chestwall_side: ChestwallSide,
    pub preprocess: PreprocessConfig,
    /// Run graph smoothing after the bandpass.
    pub use_gsa: bool,
    pub gsa: GsaConfig,
    pub select: SelectConfig,
    /// Welch settings for the spectral features.
    pub features: WelchConfig,
    pub svm: SvmConfig,
    pub protocol: ProtocolConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            extraction: Extraction::MultiRoi,
            chestwall_side: ChestwallSide::Right,
            preprocess: PreprocessConfig::default(),
            use_gsa: true,
            gsa: GsaConfig::default(),
            select: SelectConfig::default(),
            features: WelchConfig::default(),
            svm: SvmConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.gsa.validate()?;
        self.select.validate()?;
        self.features.validate()?;
        self.svm.validate()?;
        if self.protocol.splits == 0 {
            return Err(Error::parameter("protocol.splits", "must be >= 1"));
        }
        if !(self.protocol.test_fraction > 0.0 && self.protocol.test_fraction < 1.0) {
            return Err(Error::parameter("protocol.test_fraction", "must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::format("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialises");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..8])
}
