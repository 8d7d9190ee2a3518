use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dims, IknetParams, TrainConfig};
use crate::dataset::{FoldSpec, Scaler};
use crate::error::{Error, Result};
use crate::nn::{GruMode, Parameters};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "iknet-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON container: every parameter tensor plus what produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub dims: Dims,
    pub lstm_layers: usize,
    pub gru_mode: GruMode,
    pub fold: Option<FoldSpec>,
    pub scaler: Scaler,
    pub scaler_fingerprint: String,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(params: &IknetParams, config: &TrainConfig, scaler: &Scaler, fold: Option<FoldSpec>) -> Self {
        let tensors = params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            dims: params.dims,
            lstm_layers: params.lstm_layers(),
            gru_mode: params.gru_mode(),
            fold,
            scaler: scaler.clone(),
            scaler_fingerprint: scaler.fingerprint(),
            tensors,
        }
    }

    /// Rebuild the network; every expected tensor must be present with its shape.
    pub fn params(&self) -> Result<IknetParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::validation(
                "checkpoint",
                format!("unsupported format {} v{}", self.format, self.version),
            ));
        }
        let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for t in &self.tensors {
            if by_name.insert(&t.name, t).is_some() {
                return Err(Error::validation("checkpoint", format!("duplicate tensor `{}`", t.name)));
            }
        }
        let mut params = IknetParams::zeros(self.dims, self.lstm_layers, self.gru_mode);
        let mut problem = None;
        let mut used = 0;
        params.visit_mut("", &mut |name, slot| {
            if problem.is_some() {
                return;
            }
            match by_name.get(name.as_str()) {
                None => problem = Some(format!("missing tensor `{name}`")),
                Some(nt) if nt.shape != slot.shape() => {
                    problem = Some(format!("tensor `{name}` has shape {:?}, expected {:?}", nt.shape, slot.shape()))
                }
                Some(nt) => match Tensor::new(nt.shape.clone(), nt.data.clone()) {
                    Ok(t) => {
                        *slot = t;
                        used += 1;
                    }
                    Err(e) => problem = Some(e.to_string()),
                },
            }
        });
        if let Some(p) = problem {
            return Err(Error::validation("checkpoint", p));
        }
        if used != self.tensors.len() {
            return Err(Error::validation("checkpoint", "unexpected extra tensors"));
        }
        if !params.is_finite() {
            return Err(Error::validation("checkpoint", "non-finite parameter values"));
        }
        params.validate()?;
        Ok(params)
    }

    /// Fails unless `scaler` is the one this checkpoint was trained with.
    pub fn check_scaler(&self, scaler: &Scaler) -> Result<()> {
        let fp = scaler.fingerprint();
        if fp != self.scaler_fingerprint || self.scaler.fingerprint() != self.scaler_fingerprint {
            return Err(Error::validation(
                "scaler",
                "scaler does not match the checkpoint's training fold (fingerprint mismatch)",
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::parse("checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Run manifest written beside checkpoints and reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub folds: Vec<FoldSpec>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path (relative to the output directory) → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub metrics: serde_json::Value,
    pub assumptions: Vec<String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
