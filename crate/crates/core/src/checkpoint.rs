//! JSON checkpoint envelope for [`MlpModel`].
//!
//! Tensors are stored as base64 of little-endian `f32`, so a reloaded model
//! equals the saved one up to single-precision rounding.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::conditioning::TaskSpec;
use crate::error::{Error, Result};
use crate::neural::{Architecture, MlpModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub task: TaskSpec,
    pub architecture: Architecture,
    pub seed: u64,
    pub step_count: usize,
    pub tensors: Vec<TensorBlob>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    BASE64.encode(bytes)
}

fn decode(data: &str) -> Result<Vec<f64>> {
    let bytes = BASE64.decode(data).map_err(|e| Error::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint("tensor byte length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect())
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel, task: &TaskSpec, seed: u64, step_count: usize) -> Self {
        let arch = model.architecture().clone();
        let tensors = arch
            .tensors()
            .into_iter()
            .zip(model.tensor_ranges())
            .map(|((name, shape), (_, range))| TensorBlob {
                name: name.to_string(),
                shape,
                data: encode(&model.params()[range]),
            })
            .collect();
        Self { format_version: FORMAT_VERSION, task: task.clone(), architecture: arch, seed, step_count, tensors }
    }

    /// Rebuilds the model, checking every tensor against the envelope's
    /// architecture and the architecture against the task.
    pub fn to_model(&self) -> Result<MlpModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format_version {}", self.format_version)));
        }
        self.task.validate()?;
        let arch = &self.architecture;
        if arch.dim != self.task.dim
            || arch.classes_a != self.task.centers_a.len()
            || arch.classes_b != self.task.centers_b.len()
        {
            return Err(Error::Checkpoint("architecture does not match the task spec".into()));
        }
        let expected = arch.tensors();
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(arch.param_count());
        for ((name, shape), blob) in expected.iter().zip(&self.tensors) {
            if blob.name != *name || blob.shape != *shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    blob.name, blob.shape, name, shape
                )));
            }
            let values = decode(&blob.data)?;
            if values.len() != shape[0] * shape[1] {
                return Err(Error::Checkpoint(format!("tensor {name} has {} values", values.len())));
            }
            params.extend(values);
        }
        MlpModel::from_params(arch.clone(), params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
