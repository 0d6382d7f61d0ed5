use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::encoder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "clahi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Structured-text model container. `meta` carries whatever the caller
/// wants to keep alongside (run configuration, validation ids, scores).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub seed: u64,
    pub vocabulary: Vec<String>,
    pub embeddings: ParamRecord,
    pub params: Vec<ParamRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn record(name: &str, t: &Tensor) -> ParamRecord {
    ParamRecord {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        values: t.data().to_vec(),
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model, seed: u64, meta: serde_json::Value) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            seed,
            vocabulary: model.table.tokens().to_vec(),
            embeddings: record("embeddings", model.table.matrix()),
            params: model.store.iter().map(|(n, t)| record(n, t)).collect(),
            meta,
        }
    }

    /// Rebuilds the model; every stored parameter must match one the
    /// configuration allocates, by name and shape.
    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Contract(format!("not a checkpoint (format `{}`)", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Contract(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let matrix = Tensor::new(self.embeddings.shape.clone(), self.embeddings.values.clone())?;
        let table = EmbeddingTable::from_matrix(self.vocabulary.clone(), matrix, self.seed)?;
        let mut model = Model::new(self.model.clone(), table, self.seed)?;
        if self.params.len() != model.store.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} parameters, configuration needs {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for p in &self.params {
            model.store.set(&p.name, Tensor::new(p.shape.clone(), p.values.clone())?)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}
