//! Experiment presets and the seeded multi-run protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate_subsets, train, ConfusionMatrix, Metrics, Subset, TrainConfig, TrainHistory};
use crate::annotator::{
    build_history_embeddings, build_learnt_embeddings, history_matrix, AnnotatorEmbeddingSet, EmbeddingSource,
};
use crate::ctr::{fit_ctr_on_dataset, CtrHyperparams};
use crate::data::{split_dataset, Dataset, TieRule};
use crate::error::{Error, Result};
use crate::instances::{
    build_eval_instance_with, build_training_instances_with, EvalInstance, LabelTextConfig, TargetMode, Tokenizer,
};
use crate::model::{AnnoModel, Example, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Plain encoder + head: no annotator embeddings, no label text.
    Baseline,
    /// Frozen CTR embeddings.
    AnnobertCtr,
    AnnobertCtrUnfrozen,
    /// Annotation-history embeddings with a trainable projection.
    AnnobertHistory,
    AnnobertHistoryFrozen,
    /// Randomly initialized embeddings learnt end to end.
    AnnobertLearnt,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Baseline,
        Preset::AnnobertCtr,
        Preset::AnnobertCtrUnfrozen,
        Preset::AnnobertHistory,
        Preset::AnnobertHistoryFrozen,
        Preset::AnnobertLearnt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Baseline => "baseline",
            Preset::AnnobertCtr => "annobert-ctr",
            Preset::AnnobertCtrUnfrozen => "annobert-ctr-unfrozen",
            Preset::AnnobertHistory => "annobert-history",
            Preset::AnnobertHistoryFrozen => "annobert-history-frozen",
            Preset::AnnobertLearnt => "annobert-learnt",
        }
    }

    pub fn source(self) -> Option<EmbeddingSource> {
        match self {
            Preset::Baseline => None,
            Preset::AnnobertCtr | Preset::AnnobertCtrUnfrozen => Some(EmbeddingSource::Ctr),
            Preset::AnnobertHistory | Preset::AnnobertHistoryFrozen => Some(EmbeddingSource::History),
            Preset::AnnobertLearnt => Some(EmbeddingSource::Learnt),
        }
    }

    pub fn frozen(self) -> bool {
        matches!(self, Preset::AnnobertCtr | Preset::AnnobertHistoryFrozen)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Config(format!("unknown preset {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub label_text: LabelTextConfig,
    pub target_mode: TargetMode,
    pub tie_rule: TieRule,
    /// Architecture; vocabulary size, annotator width, fusion and concat
    /// slots are filled in per run.
    pub model: ModelConfig,
    pub ctr: CtrHyperparams,
    pub lda_iterations: usize,
    pub train: TrainConfig,
    /// Share of the non-test entries held out for validation.
    pub val_fraction: f64,
    /// Master seed: run `r` uses `seed + r`.
    pub seed: u64,
    pub eval_batch_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: Preset::AnnobertCtr,
            label_text: LabelTextConfig::default(),
            target_mode: TargetMode::Group,
            tie_rule: TieRule::Positive,
            model: ModelConfig::default(),
            ctr: CtrHyperparams::default(),
            lda_iterations: 200,
            train: TrainConfig::default(),
            val_fraction: 0.1,
            seed: 0,
            eval_batch_size: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.label_text.validate()?;
        self.train.validate()?;
        if self.preset.source() == Some(EmbeddingSource::Ctr) {
            self.ctr.validate()?;
        }
        if self.preset == Preset::AnnobertLearnt && self.train.freeze_annotator {
            return Err(Error::Config("learnt embeddings cannot be frozen".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must be in (0, 1)".into()));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::Config("eval_batch_size must be positive".into()));
        }
        ModelConfig {
            vocab_size: 1,
            fusion: false,
            ..self.model.clone()
        }
        .validate()
    }
}

/// Train, validation and test splits of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits by the dataset's test tags, holding out a seeded validation share.
pub fn prepare_splits(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<Splits> {
    let (train, val, test) = split_dataset(dataset, cfg.val_fraction, cfg.seed)?;
    if test.is_empty() {
        return Err(Error::EmptySubset("test".into()));
    }
    Ok(Splits { train, val, test })
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub history: TrainHistory,
    pub metrics: BTreeMap<Subset, Metrics>,
    pub model: AnnoModel,
    pub tokenizer: Tokenizer,
}

fn build_embeddings(train: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<Option<AnnotatorEmbeddingSet>> {
    let frozen = cfg.preset.frozen() || cfg.train.freeze_annotator;
    let ids = train.annotator_ids.clone();
    match cfg.preset.source() {
        None => Ok(None),
        Some(EmbeddingSource::Ctr) => {
            let ctr = fit_ctr_on_dataset(train, &cfg.ctr, cfg.lda_iterations, seed)?;
            Ok(Some(AnnotatorEmbeddingSet::from_ctr(&ctr, frozen)))
        }
        Some(EmbeddingSource::History) => {
            build_history_embeddings(ids, history_matrix(train), cfg.model.hidden_size, frozen, seed).map(Some)
        }
        Some(EmbeddingSource::Learnt) => build_learnt_embeddings(ids, cfg.model.hidden_size, seed).map(Some),
    }
}

/// One full pipeline run: embeddings, instances, model, training and
/// evaluation on the requested test subsets.
pub fn run_once(splits: &Splits, cfg: &ExperimentConfig, seed: u64, subsets: &[Subset]) -> Result<RunOutcome> {
    cfg.validate()?;
    let uses_annotators = cfg.preset.source().is_some();
    if !uses_annotators {
        log::info!("{}: no annotator embeddings and no label text are used", cfg.preset);
    }
    let embeddings = build_embeddings(&splits.train, cfg, seed)?;

    let mut texts: Vec<&str> = splits.train.entries.iter().map(|e| e.text.as_str()).collect();
    if uses_annotators {
        texts.push(&cfg.label_text.positive_text);
        texts.push(&cfg.label_text.negative_text);
    }
    let tokenizer = Tokenizer::build(texts, cfg.model.max_seq_len);

    let model_cfg = ModelConfig {
        vocab_size: tokenizer.vocab_size(),
        annotator_dim: embeddings.as_ref().map_or(0, |e| e.dim),
        fusion: uses_annotators,
        max_annotators: splits
            .train
            .max_annotators_per_entry()
            .max(splits.test.max_annotators_per_entry())
            .max(1),
        ..cfg.model.clone()
    };
    let mut model = AnnoModel::new(model_cfg, embeddings, seed)?;

    let to_eval = |d: &Dataset| -> Vec<EvalInstance> {
        d.entries.iter().map(|e| build_eval_instance_with(e, cfg.tie_rule)).collect()
    };
    let train_examples: Vec<Example> = if uses_annotators {
        splits
            .train
            .entries
            .iter()
            .flat_map(|e| build_training_instances_with(e, &cfg.label_text, cfg.target_mode, cfg.tie_rule))
            .map(|i| model.example(&i, &tokenizer, i.target))
            .collect::<Result<_>>()?
    } else {
        to_eval(&splits.train)
            .iter()
            .map(|i| model.example(i, &tokenizer, i.target))
            .collect::<Result<_>>()?
    };
    let val_examples: Vec<Example> = to_eval(&splits.val)
        .iter()
        .map(|i| model.example(i, &tokenizer, i.target))
        .collect::<Result<_>>()?;

    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let history = train(&mut model, &train_examples, &val_examples, &train_cfg)?;
    let test = to_eval(&splits.test);
    let metrics = evaluate_subsets(&model, &tokenizer, &test, subsets, cfg.eval_batch_size)?;
    Ok(RunOutcome {
        seed,
        history,
        metrics,
        model,
        tokenizer,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Per-run metrics of one subset with their mean and standard error
/// (sample standard deviation over `sqrt(n)`; 0 for a single run).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subset: Subset,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub mean: MetricSummary,
    pub standard_error: MetricSummary,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl MetricsReport {
    pub fn from_runs(subset: Subset, runs: Vec<RunMetrics>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::EmptyDataset("no runs to aggregate".into()));
        }
        let column = |f: fn(&RunMetrics) -> f64| mean_se(&runs.iter().map(f).collect::<Vec<_>>());
        let (f1, f1_se) = column(|r| r.macro_f1);
        let (sens, sens_se) = column(|r| r.sensitivity);
        let (spec, spec_se) = column(|r| r.specificity);
        Ok(MetricsReport {
            subset,
            seeds: runs.iter().map(|r| r.seed).collect(),
            runs,
            mean: MetricSummary {
                macro_f1: f1,
                sensitivity: sens,
                specificity: spec,
            },
            standard_error: MetricSummary {
                macro_f1: f1_se,
                sensitivity: sens_se,
                specificity: spec_se,
            },
        })
    }

    /// `mean ± se` cells for a text table.
    pub fn table_row(&self) -> String {
        let cell = |m: f64, se: f64| format!("{m:6.2} ± {se:4.2}");
        format!(
            "{:<13} {}  {}  {}",
            self.subset.to_string(),
            cell(self.mean.macro_f1, self.standard_error.macro_f1),
            cell(self.mean.sensitivity, self.standard_error.sensitivity),
            cell(self.mean.specificity, self.standard_error.specificity),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub preset: Preset,
    pub n_runs: usize,
    pub reports: Vec<MetricsReport>,
    /// Per-run training loss by epoch.
    pub loss_histories: Vec<Vec<f64>>,
}

impl ExperimentReport {
    pub fn report(&self, subset: Subset) -> Option<&MetricsReport> {
        self.reports.iter().find(|r| r.subset == subset)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{} ({} runs)\n{:<13} {:>13}  {:>13}  {:>13}\n",
            self.preset, self.n_runs, "subset", "macro F1", "sensitivity", "specificity"
        );
        for r in &self.reports {
            out.push_str(&r.table_row());
            out.push('\n');
        }
        out
    }
}

/// Runs the pipeline with seeds `cfg.seed + 0 .. cfg.seed + n_runs - 1` on
/// fixed splits and aggregates every requested subset. The first failing
/// run aborts with its index.
pub fn multi_run(dataset: &Dataset, cfg: &ExperimentConfig, n_runs: usize, subsets: &[Subset]) -> Result<ExperimentReport> {
    if n_runs < 2 {
        return Err(Error::Config(format!("multi_run needs at least 2 runs, got {n_runs}")));
    }
    if subsets.is_empty() {
        return Err(Error::Config("no evaluation subsets requested".into()));
    }
    cfg.validate()?;
    let splits = prepare_splits(dataset, cfg)?;
    let mut per_subset: BTreeMap<Subset, Vec<RunMetrics>> = BTreeMap::new();
    let mut histories = Vec::with_capacity(n_runs);
    for r in 0..n_runs {
        let seed = cfg.seed + r as u64;
        let outcome = run_once(&splits, cfg, seed, subsets).map_err(|e| Error::Run {
            run: r,
            source: Box::new(e),
        })?;
        for (subset, m) in outcome.metrics {
            per_subset.entry(subset).or_default().push(RunMetrics {
                seed,
                macro_f1: m.macro_f1,
                sensitivity: m.sensitivity,
                specificity: m.specificity,
                confusion: m.confusion,
                warnings: m.warnings,
            });
        }
        histories.push(outcome.history.epoch_loss);
    }
    let reports = subsets
        .iter()
        .map(|s| MetricsReport::from_runs(*s, per_subset.remove(s).unwrap_or_default()))
        .collect::<Result<_>>()?;
    Ok(ExperimentReport {
        preset: cfg.preset,
        n_runs,
        reports,
        loss_histories: histories,
    })
}
