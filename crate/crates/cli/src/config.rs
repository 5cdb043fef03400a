//! TOML run configuration and its command-line overrides.

use std::path::{Path, PathBuf};

use annobert_core::data::{
    assign_test_split, generate_synthetic, load_annotations, load_dataset_json, SplitTag, SyntheticConfig,
};
use annobert_core::{Dataset, EmbeddingSource, ExperimentConfig, LabelTextConfig, Preset, Subset};
use serde::{Deserialize, Serialize};

use crate::args::Overrides;
use crate::error::CliError;

/// Supported CTR latent dimensions without `--allow-any-dim`.
pub const DIM_GRID: std::ops::RangeInclusive<usize> = 5..=15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    #[default]
    TwoBloc,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub instances: usize,
    pub annotators: usize,
    pub layout: Layout,
    /// Overrides the generator's default charged-instance rate.
    pub base_rate: Option<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            instances: 2000,
            annotators: 8,
            layout: Layout::TwoBloc,
            base_rate: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn generator_config(&self) -> SyntheticConfig {
        let mut cfg = match self.layout {
            Layout::TwoBloc => SyntheticConfig::two_bloc(self.instances, self.annotators),
            Layout::Uniform => SyntheticConfig::uniform(self.instances, self.annotators),
        };
        if let Some(rate) = self.base_rate {
            cfg.base_rate = rate;
        }
        cfg
    }
}

/// Where the entries come from: a file (`.jsonl` annotations or dataset
/// JSON) or the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSource {
    pub path: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Share tagged as test when the source carries no test tags.
    pub test_fraction: f64,
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource {
            path: None,
            synthetic: None,
            test_fraction: 0.2,
        }
    }
}

pub fn load_dataset_file(path: &Path) -> Result<Dataset, CliError> {
    let loaded = if path.extension().is_some_and(|e| e == "jsonl") {
        load_annotations(path)
    } else {
        load_dataset_json(path)
    };
    loaded.map_err(|e| CliError::data(e).context(format!("loading {}", path.display())))
}

impl DatasetSource {
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.path, &self.synthetic) {
            (Some(_), Some(_)) => Err(CliError::usage("dataset: give either path or synthetic, not both")),
            (None, None) => Err(CliError::usage("dataset: no source given (use --dataset or [dataset])")),
            _ if !(0.0..1.0).contains(&self.test_fraction) => {
                Err(CliError::usage("dataset.test_fraction must be in [0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn load(&self, seed: u64) -> Result<Dataset, CliError> {
        self.validate()?;
        let dataset = match (&self.path, &self.synthetic) {
            (Some(path), _) => load_dataset_file(path)?,
            (_, Some(spec)) => generate_synthetic(&spec.generator_config(), spec.seed).map_err(CliError::from_core)?,
            _ => unreachable!("validated"),
        };
        if dataset.entries.iter().any(|e| e.split == Some(SplitTag::Test)) {
            return Ok(dataset);
        }
        log::info!("no test-tagged entries; tagging {:.0}% as test", self.test_fraction * 100.0);
        assign_test_split(&dataset, self.test_fraction, seed).map_err(CliError::from_core)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub runs: usize,
    /// Evaluation subsets; by default overall, plus disagreement when the
    /// test split has any.
    pub subsets: Option<Vec<Subset>>,
    pub out_dir: PathBuf,
    pub allow_any_dim: bool,
    /// Source for `fit-embeddings`; defaults to the preset's source.
    pub embedding_source: Option<EmbeddingSource>,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::default(),
            runs: 10,
            subsets: None,
            out_dir: PathBuf::from("out"),
            allow_any_dim: false,
            embedding_source: None,
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("reading config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(path) => Self::from_toml_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(o)?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        let exp = &mut self.experiment;
        if let Some(path) = &o.dataset {
            self.dataset.path = Some(path.clone());
            self.dataset.synthetic = None;
        }
        if let Some(p) = &o.preset {
            exp.preset = p.parse::<Preset>().map_err(CliError::usage)?;
        }
        if let Some(d) = o.dim {
            exp.ctr.latent_dim = d;
        }
        if o.allow_any_dim {
            self.allow_any_dim = true;
        }
        if let Some(p) = o.pooling {
            exp.model.pooling = p;
        }
        if let Some(name) = &o.label_preset {
            exp.label_text = LabelTextConfig::preset(name).map_err(CliError::usage)?;
        }
        if let Some(m) = o.target_mode {
            exp.target_mode = m;
        }
        if o.freeze_annotator {
            exp.train.freeze_annotator = true;
        }
        if let Some(e) = o.epochs {
            exp.train.epochs = e;
        }
        if let Some(lr) = o.lr {
            exp.train.learning_rate = lr;
        }
        if let Some(b) = o.batch_size {
            exp.train.batch_size = b;
        }
        if let Some(it) = o.em_iters {
            exp.ctr.em_iterations = it;
        }
        if let Some(it) = o.lda_iters {
            exp.lda_iterations = it;
        }
        if let Some(s) = o.seed {
            exp.seed = s;
        }
        if let Some(r) = o.runs {
            self.runs = r;
        }
        if !o.subset.is_empty() {
            self.subsets = Some(o.subset.clone());
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(s) = o.source {
            self.embedding_source = Some(s);
        }
        Ok(())
    }

    /// Embedding source used by `fit-embeddings`.
    pub fn fit_source(&self) -> EmbeddingSource {
        self.embedding_source
            .or(self.experiment.preset.source())
            .unwrap_or(EmbeddingSource::Ctr)
    }

    /// Cross-field checks run before any computation.
    pub fn validate(&self, needs_runs: bool) -> Result<(), CliError> {
        self.dataset.validate()?;
        self.experiment.validate().map_err(CliError::usage)?;
        let dim = self.experiment.ctr.latent_dim;
        let uses_ctr = self.experiment.preset.source() == Some(EmbeddingSource::Ctr)
            || self.embedding_source == Some(EmbeddingSource::Ctr);
        if uses_ctr && !self.allow_any_dim && !DIM_GRID.contains(&dim) {
            return Err(CliError::usage(format!(
                "--dim {dim} is outside the supported {}..={} range (pass --allow-any-dim to override)",
                DIM_GRID.start(),
                DIM_GRID.end()
            )));
        }
        if needs_runs && self.runs < 2 {
            return Err(CliError::usage(format!("--runs must be at least 2, got {}", self.runs)));
        }
        if self.subsets.as_ref().is_some_and(Vec::is_empty) {
            return Err(CliError::usage("subsets must not be empty"));
        }
        Ok(())
    }
}
