//! Self-describing JSON model checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnoModel, ModelConfig, ParamGroup};
use crate::annotator::EmbeddingFile;
use crate::error::{Error, Result};
use crate::instances::{LabelTextConfig, Tokenizer};

pub const CHECKPOINT_FORMAT: &str = "annobert-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    /// Label texts used for training; absent for the baseline.
    pub label_text: Option<LabelTextConfig>,
    /// Annotator embedding set as it stood when the checkpoint was taken.
    pub embeddings: Option<EmbeddingFile>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if cp.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format {:?}", cp.format)));
        }
        Ok(cp)
    }
}

impl AnnoModel {
    pub fn to_checkpoint(&self, tokenizer: &Tokenizer, label_text: Option<&LabelTextConfig>) -> Checkpoint {
        let tensors = self
            .params
            .entries()
            .iter()
            .map(|e| TensorRecord {
                name: e.name.clone(),
                group: e.group,
                rows: e.rows,
                cols: e.cols,
                trainable: e.trainable,
                values: self.params.values()[e.range()].to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            config: self.config.clone(),
            tokenizer: tokenizer.clone(),
            label_text: label_text.cloned(),
            embeddings: self.embedding_set().map(|s| s.to_file()),
            tensors,
        }
    }

    /// Rebuilds the model; every tensor must match the configured layout.
    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let embeddings = cp.embeddings.clone().map(EmbeddingFile::into_set).transpose()?;
        let mut model = AnnoModel::new(cp.config.clone(), embeddings, 0)?;
        if cp.tensors.len() != model.params.entries().len() {
            return Err(Error::DimensionMismatch {
                expected: model.params.entries().len(),
                actual: cp.tensors.len(),
                context: "checkpoint tensor count",
            });
        }
        for t in &cp.tensors {
            let id = model
                .params
                .find(&t.name)
                .ok_or_else(|| Error::Config(format!("unexpected tensor {:?} in checkpoint", t.name)))?;
            let e = model.params.entry(id).clone();
            if (e.rows, e.cols) != (t.rows, t.cols) || t.values.len() != e.len() {
                return Err(Error::DimensionMismatch {
                    expected: e.len(),
                    actual: t.values.len(),
                    context: "checkpoint tensor shape",
                });
            }
            model.params.values_mut()[e.range()].copy_from_slice(&t.values);
            model.params.set_trainable(id, t.trainable);
        }
        if !model.params.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(model)
    }
}
