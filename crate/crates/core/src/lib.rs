//! Annotator-aware text classification: CTR annotator embeddings,
//! label-text conditioning and a fused transformer classifier, with the
//! training harness and embedding analysis around them.

pub mod analysis;
pub mod annotator;
pub mod ctr;
pub mod data;
pub mod error;
pub mod harness;
pub mod instances;
pub mod model;

pub use analysis::{AgreementReport, ComparativeReport};
pub use annotator::{AnnotatorEmbeddingSet, EmbeddingFile, EmbeddingSource};
pub use ctr::{CtrHyperparams, CtrModel, Pooling};
pub use data::{AnnotationRecord, Dataset, DatasetEntry, Label, SplitTag, TieRule};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentReport, MetricsReport, Preset, Subset, TrainConfig};
pub use instances::{EvalInstance, LabelTextConfig, TargetMode, Tokenizer, TrainingInstance};
pub use model::{AnnoModel, ModelConfig};
