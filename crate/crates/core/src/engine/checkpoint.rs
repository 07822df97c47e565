//! Frozen model states and their text container.
//!
//! A checkpoint file is TOML. Scalar header keys come first (`format`,
//! `step`, `config_hash`, `params_hash`, `forget_set`), followed by the
//! tables `schedule`, `provenance`, `architecture` and `config` (tagged by
//! `kind = "pretrain" | "unlearn"`), and finally `[params]` whose `values`
//! array holds every parameter as a shortest round-trip decimal, so reading
//! a file back yields bit-identical doubles.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PretrainConfig, UnlearnStepConfig};
use crate::diffusion::ScheduleParams;
use crate::error::{Error, Result};
use crate::nn::{Architecture, DenoiserNet, ParamVector};

pub const CHECKPOINT_FORMAT: &str = "cullab-checkpoint/1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Configuration that produced a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepConfig {
    Pretrain(PretrainConfig),
    Unlearn(UnlearnStepConfig),
}

impl StepConfig {
    pub fn hash(&self) -> String {
        sha256_hex(toml::to_string(self).expect("step config serialises").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub iterations: usize,
}

/// Model state `theta_i` after step `i`; step 0 is the pretrained base.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub architecture: Architecture,
    pub params: ParamVector,
    pub schedule: ScheduleParams,
    pub config: StepConfig,
    /// Concept ids erased so far, in order.
    pub forget_set: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ParamsTable {
    len: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    step: usize,
    config_hash: String,
    params_hash: String,
    forget_set: Vec<String>,
    schedule: ScheduleParams,
    provenance: Provenance,
    architecture: Architecture,
    config: StepConfig,
    params: ParamsTable,
}

impl Checkpoint {
    pub fn net(&self) -> Result<DenoiserNet> {
        DenoiserNet::new(self.architecture.clone(), self.params.clone())
    }

    /// SHA-256 over the little-endian bytes of the parameters.
    pub fn params_hash(&self) -> String {
        let bytes: Vec<u8> = self.params.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        sha256_hex(&bytes)
    }

    pub fn to_toml(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            step: self.step,
            config_hash: self.config.hash(),
            params_hash: self.params_hash(),
            forget_set: self.forget_set.clone(),
            schedule: self.schedule,
            provenance: self.provenance.clone(),
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            params: ParamsTable { len: self.params.len(), values: self.params.as_slice().to_vec() },
        };
        toml::to_string(&file).expect("checkpoint serialises")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let file: CheckpointFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(format!("unsupported checkpoint format `{}`", file.format));
        }
        if file.params.len != file.params.values.len() {
            return Err(format!("params.len is {} but {} values follow", file.params.len, file.params.values.len()));
        }
        if file.architecture.param_count() != file.params.len {
            return Err("parameter count does not match the architecture".into());
        }
        let ckpt = Checkpoint {
            step: file.step,
            architecture: file.architecture,
            params: ParamVector::new(file.params.values).map_err(|e| e.to_string())?,
            schedule: file.schedule,
            config: file.config,
            forget_set: file.forget_set,
            provenance: file.provenance,
        };
        if ckpt.config.hash() != file.config_hash {
            return Err("config_hash does not match the embedded config".into());
        }
        if ckpt.params_hash() != file.params_hash {
            return Err("params_hash does not match the parameter values".into());
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_toml(&text).map_err(|m| Error::parse(path, m))
    }
}
