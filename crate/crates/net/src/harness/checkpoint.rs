use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use ig_core::eval::MetricsReport;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::config::ModelConfig;
use crate::model::IntentNet;
use crate::NetError;

pub const CHECKPOINT_FORMAT: &str = "intentnet-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Full run configuration plus every parameter, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub config: RunConfig,
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    pub metrics: Option<MetricsReport>,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn capture(model: &IntentNet, config: &RunConfig, epoch: usize, metrics: Option<MetricsReport>) -> Result<Self, NetError> {
        let mut params = BTreeMap::new();
        for (name, var, _) in model.params().iter() {
            let t = var.as_tensor();
            let data = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
            params.insert(
                name.to_string(),
                StoredTensor {
                    shape: t.dims().to_vec(),
                    data,
                },
            );
        }
        Ok(Self {
            format: CHECKPOINT_FORMAT.to_string(),
            config: config.clone(),
            epoch,
            metrics,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let body = serde_json::to_string(self).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        let io = |source| NetError::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::write(&tmp, body).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let body = std::fs::read_to_string(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let ck: Self = serde_json::from_str(&body).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(NetError::Checkpoint(format!("unsupported format {:?}", ck.format)));
        }
        Ok(ck)
    }

    /// Rebuilds the network described by the stored configuration.
    pub fn restore(&self) -> Result<IntentNet, NetError> {
        let model = IntentNet::new(self.config.model.clone(), self.config.train.seed)?;
        self.load_into(&model)?;
        Ok(model)
    }

    /// Like [`Checkpoint::restore`], but refuses a checkpoint whose network
    /// shape differs from `expected`.
    pub fn restore_checked(&self, expected: &ModelConfig) -> Result<IntentNet, NetError> {
        if &self.config.model != expected {
            return Err(NetError::Checkpoint("model configuration does not match the checkpoint".into()));
        }
        self.restore()
    }

    /// Copies stored values into `model`; names and shapes must match exactly.
    pub fn load_into(&self, model: &IntentNet) -> Result<(), NetError> {
        if model.params().len() != self.params.len() {
            return Err(NetError::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for (name, var, _) in model.params().iter() {
            let stored = self
                .params
                .get(name)
                .ok_or_else(|| NetError::Checkpoint(format!("missing tensor {name}")))?;
            if stored.shape != var.dims() {
                return Err(NetError::Checkpoint(format!(
                    "tensor {name}: stored shape {:?}, model shape {:?}",
                    stored.shape,
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(stored.data.clone(), stored.shape.as_slice(), var.device())?.to_dtype(var.dtype())?;
            var.set(&t)?;
        }
        Ok(())
    }
}
