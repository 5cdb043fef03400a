//! Training loop, evaluation, metrics and multi-run experiments.

mod experiment;
mod metrics;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::instances::{EvalInstance, Tokenizer};
use crate::model::{predict, AnnoModel, Example};

pub use experiment::{
    multi_run, prepare_splits, run_once, ExperimentConfig, ExperimentReport, MetricSummary, MetricsReport, Preset,
    RunMetrics, RunOutcome, Splits,
};
pub use metrics::{
    confusion, macro_f1, macro_f1_checked, sensitivity, sensitivity_checked, specificity, specificity_checked,
    Checked, ConfusionMatrix, Metrics,
};
pub use optim::{Adam, AdamConfig};

/// Step size suited to a pretrained encoder; the toy encoder uses
/// [`TrainConfig::default`]'s larger rate.
pub const PRETRAINED_LEARNING_RATE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub freeze_annotator: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            learning_rate: 1e-3,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
            freeze_annotator: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation macro F1 after each epoch (absent without a validation set).
    pub val_macro_f1: Vec<Option<f64>>,
}

/// Adam on shuffled mini-batches for `cfg.epochs`; the model after the final
/// epoch is kept. Frozen parameters are never updated.
pub fn train(model: &mut AnnoModel, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training instances".into()));
    }
    if cfg.freeze_annotator {
        model.set_annotators_frozen(true);
    }
    let mask = model.params().trainable_mask();
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = model.loss_and_grad(&batch, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            adam.step(model.params_mut().values_mut(), &grads.values, &mask);
            total += loss * batch.len() as f64;
        }
        let mean = total / train.len() as f64;
        let val_f1 = if val.is_empty() {
            None
        } else {
            Some(evaluate_examples(model, val, cfg.batch_size)?.macro_f1)
        };
        log::info!("epoch {}: train loss {mean:.4}, val macro F1 {val_f1:?}", epoch + 1);
        history.epoch_loss.push(mean);
        history.val_macro_f1.push(val_f1);
    }
    Ok(history)
}

/// Batched argmax predictions.
pub fn predict_examples(model: &AnnoModel, examples: &[Example], batch_size: usize) -> Result<Vec<Label>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        out.extend(model.logits(chunk)?.into_iter().map(predict));
    }
    Ok(out)
}

pub fn evaluate_examples(model: &AnnoModel, examples: &[Example], batch_size: usize) -> Result<Metrics> {
    let preds = predict_examples(model, examples, batch_size)?;
    let golds: Vec<Label> = examples.iter().map(|e| e.target).collect();
    Ok(Metrics::from_confusion(confusion(&preds, &golds)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Overall,
    /// Entries whose annotators did not all agree.
    Disagreement,
    /// Entries with unanimous labels.
    Agreement,
}

impl Subset {
    pub fn contains(self, instance: &EvalInstance) -> bool {
        match self {
            Subset::Overall => true,
            Subset::Disagreement => !instance.unanimous,
            Subset::Agreement => instance.unanimous,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Overall => "overall",
            Subset::Disagreement => "disagreement",
            Subset::Agreement => "agreement",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(Subset::Overall),
            "disagreement" => Ok(Subset::Disagreement),
            "agreement" => Ok(Subset::Agreement),
            other => Err(Error::Config(format!("unknown subset {other:?}"))),
        }
    }
}

/// Instances of one subset, in input order.
pub fn select_subset(instances: &[EvalInstance], subset: Subset) -> Result<Vec<&EvalInstance>> {
    let picked: Vec<&EvalInstance> = instances.iter().filter(|i| subset.contains(i)).collect();
    if picked.is_empty() {
        return Err(Error::EmptySubset(subset.to_string()));
    }
    Ok(picked)
}

/// Renders evaluation inputs, checking that none carries label text.
pub fn eval_examples(model: &AnnoModel, tokenizer: &Tokenizer, instances: &[&EvalInstance]) -> Result<Vec<Example>> {
    instances
        .iter()
        .map(|inst| {
            let ex = model.example(*inst, tokenizer, inst.target)?;
            if ex.tokens.contains(&Tokenizer::SEP) {
                return Err(Error::InvalidRecord(format!(
                    "evaluation input {:?} carries a label-text separator",
                    inst.instance_id
                )));
            }
            Ok(ex)
        })
        .collect()
}

/// Metrics of one model on one subset of the evaluation instances.
pub fn evaluate(
    model: &AnnoModel,
    tokenizer: &Tokenizer,
    instances: &[EvalInstance],
    subset: Subset,
    batch_size: usize,
) -> Result<Metrics> {
    let picked = select_subset(instances, subset)?;
    let examples = eval_examples(model, tokenizer, &picked)?;
    evaluate_examples(model, &examples, batch_size)
}

/// Metrics for several subsets from a single prediction pass.
pub fn evaluate_subsets(
    model: &AnnoModel,
    tokenizer: &Tokenizer,
    instances: &[EvalInstance],
    subsets: &[Subset],
    batch_size: usize,
) -> Result<BTreeMap<Subset, Metrics>> {
    let all: Vec<&EvalInstance> = instances.iter().collect();
    let examples = eval_examples(model, tokenizer, &all)?;
    let preds = predict_examples(model, &examples, batch_size)?;
    let mut out = BTreeMap::new();
    for &subset in subsets {
        let (p, g): (Vec<Label>, Vec<Label>) = instances
            .iter()
            .zip(&preds)
            .filter(|(i, _)| subset.contains(i))
            .map(|(i, &p)| (p, i.target))
            .unzip();
        if p.is_empty() {
            return Err(Error::EmptySubset(subset.to_string()));
        }
        out.insert(subset, Metrics::from_confusion(confusion(&p, &g)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
