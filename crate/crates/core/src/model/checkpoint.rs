use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::config::{AblationFlags, ModelConfig};
use super::tempoformer::TempoFormer;

pub const CHECKPOINT_FORMAT: &str = "tempoformer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to rebuild a trained model and its input pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub flags: AblationFlags,
    pub vocab: Vocabulary,
    pub labels: LabelSet,
    /// Free-form run metadata such as the epoch and dev score.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(
        model: &TempoFormer<S>,
        vocab: &Vocabulary,
        labels: &LabelSet,
        meta: serde_json::Value,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            flags: *model.flags(),
            vocab: vocab.clone(),
            labels: labels.clone(),
            meta,
            params: model
                .store()
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    data: p.value.to_f64_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model; every stored tensor must match one parameter.
    pub fn to_model<S: Scalar>(&self) -> Result<TempoFormer<S>> {
        let mut model = TempoFormer::<S>::new(self.config.clone(), self.flags)?;
        if model.store().len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} stored tensors for a model with {}",
                self.params.len(),
                model.store().len()
            )));
        }
        for t in &self.params {
            let id = model
                .store()
                .find(&t.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", t.name)))?;
            if model.store().value(id).shape() != t.shape.as_slice() {
                return Err(Error::Checkpoint(format!("shape mismatch for `{}`", t.name)));
            }
            *model.store_mut().value_mut(id) = Tensor::from_f64(&t.shape, &t.data)?;
        }
        Ok(model)
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut c: Checkpoint = serde_json::from_str(&text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        c.vocab.reindex();
        Ok(c)
    }
}
