use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use annobert_core::analysis::{analyze, check_co_annotation, emit_plots, ComparativeReport};
use annobert_core::annotator::{build_history_embeddings, build_learnt_embeddings, history_matrix};
use annobert_core::ctr::fit_ctr_on_dataset;
use annobert_core::data::{assign_test_split, generate_synthetic, save_dataset_json, split_dataset, SplitTag};
use annobert_core::harness::multi_run;
use annobert_core::{Dataset, EmbeddingFile, EmbeddingSource, Subset};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{AnalyzeArgs, GenerateArgs, PreprocessArgs};
use crate::config::{load_dataset_file, RunConfig, SyntheticSpec};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything that varies between otherwise identical invocations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub created_unix_seconds: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub config: serde_json::Value,
    pub metadata: Metadata,
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("creating {}: {e}", dir.display())))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_owned());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        fs::write(self.path(name), body)?;
        Ok(())
    }

    fn finish(self, command: &str, config: serde_json::Value) -> Result<Manifest, CliError> {
        let manifest = Manifest {
            command: command.to_owned(),
            artifacts: self.artifacts,
            config,
            metadata: Metadata {
                tool_version: env!("CARGO_PKG_VERSION").to_owned(),
                created_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            },
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<Manifest, CliError> {
    if let Some(f) = args.test_fraction {
        if !(0.0..1.0).contains(&f) {
            return Err(CliError::usage("--test-fraction must be in [0, 1)"));
        }
    }
    let mut dataset = load_dataset_file(&args.input)?;
    let tagged = dataset.entries.iter().any(|e| e.split == Some(SplitTag::Test));
    if let (Some(f), false) = (args.test_fraction, tagged) {
        dataset = assign_test_split(&dataset, f, args.seed).map_err(CliError::from_core)?;
    }
    log::info!(
        "{} entries, {} annotators, {} annotations, {} with disagreement",
        dataset.len(),
        dataset.annotator_ids.len(),
        dataset.annotation_count(),
        dataset.disagreement_count()
    );
    let mut out = Output::create(&args.out_dir)?;
    save_dataset_json(&dataset, out.path("dataset.json")).map_err(CliError::from_core)?;
    out.finish(
        "preprocess",
        json!({ "input": args.input, "test_fraction": args.test_fraction, "seed": args.seed }),
    )
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<Manifest, CliError> {
    let spec = SyntheticSpec {
        instances: args.instances,
        annotators: args.annotators,
        layout: args.layout.into(),
        base_rate: args.base_rate,
        seed: args.seed,
    };
    let dataset = generate_synthetic(&spec.generator_config(), spec.seed).map_err(CliError::from_core)?;
    let mut out = Output::create(&args.out_dir)?;
    let mut body = String::new();
    for record in dataset.to_records() {
        body.push_str(&serde_json::to_string(&record)?);
        body.push('\n');
    }
    out.text("annotations.jsonl", &body)?;
    out.finish("generate", serde_json::to_value(&spec)?)
}

fn train_split(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let exp = &cfg.experiment;
    let data = cfg.dataset.load(exp.seed)?;
    let (train, _, _) = split_dataset(&data, exp.val_fraction, exp.seed).map_err(CliError::from_core)?;
    Ok(train)
}

/// Fits one embedding set on the training split only.
pub fn cmd_fit_embeddings(cfg: &RunConfig) -> Result<Manifest, CliError> {
    cfg.validate(false)?;
    let exp = &cfg.experiment;
    let source = cfg.fit_source();
    let train = train_split(cfg)?;
    let frozen = exp.preset.frozen() || exp.train.freeze_annotator;
    let ids = train.annotator_ids.clone();
    let hidden = exp.model.hidden_size;
    let mut out = Output::create(&cfg.out_dir)?;
    let file = match source {
        EmbeddingSource::Ctr => {
            let ctr = fit_ctr_on_dataset(&train, &exp.ctr, exp.lda_iterations, exp.seed)
                .map_err(|e| CliError::runtime(format!("CTR fit failed: {e}")))?;
            out.json("objective_trace.json", &ctr.objective_trace)?;
            log::info!(
                "CTR objective {:.4} -> {:.4} over {} sweeps",
                ctr.objective_trace.first().copied().unwrap_or(f64::NAN),
                ctr.objective(),
                exp.ctr.em_iterations
            );
            EmbeddingFile {
                frozen,
                ..ctr.to_file(false)
            }
        }
        EmbeddingSource::History => build_history_embeddings(ids, history_matrix(&train), hidden, frozen, exp.seed)
            .map_err(CliError::from_core)?
            .to_file(),
        EmbeddingSource::Learnt => build_learnt_embeddings(ids, hidden, exp.seed)
            .map_err(CliError::from_core)?
            .to_file(),
    };
    file.save(out.path("embeddings.json")).map_err(CliError::from_core)?;
    out.finish("fit-embeddings", serde_json::to_value(cfg)?)
}

fn default_subsets(data: &Dataset) -> Vec<Subset> {
    let disagreement = data
        .entries
        .iter()
        .any(|e| e.split == Some(SplitTag::Test) && !e.is_unanimous());
    if disagreement {
        vec![Subset::Overall, Subset::Disagreement]
    } else {
        vec![Subset::Overall]
    }
}

/// Multi-seed training and evaluation; one report file per subset.
pub fn cmd_train_eval(cfg: &RunConfig) -> Result<Manifest, CliError> {
    cfg.validate(true)?;
    let data = cfg.dataset.load(cfg.experiment.seed)?;
    let subsets = cfg.subsets.clone().unwrap_or_else(|| default_subsets(&data));
    let report = multi_run(&data, &cfg.experiment, cfg.runs, &subsets).map_err(CliError::from_core)?;
    let mut out = Output::create(&cfg.out_dir)?;
    for r in &report.reports {
        out.json(&format!("report_{}.json", r.subset), r)?;
    }
    out.json("experiment.json", &report)?;
    let table = report.table();
    out.text("report.txt", &table)?;
    print!("{table}");
    let resolved = RunConfig {
        subsets: Some(subsets),
        ..cfg.clone()
    };
    out.finish("train-eval", serde_json::to_value(&resolved)?)
}

fn unique_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or("embeddings".into(), |s| s.to_string_lossy().into_owned());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}-{n}")
            }
        })
        .collect()
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Manifest, CliError> {
    if args.k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    let data = load_dataset_file(&args.dataset)?;
    check_co_annotation(&data).map_err(CliError::from_core)?;
    let sets = args
        .embeddings
        .iter()
        .map(|p| {
            EmbeddingFile::load(p)
                .and_then(EmbeddingFile::into_set)
                .map_err(|e| CliError::data(e).context(format!("loading {}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Output::create(&args.out_dir)?;
    let mut comparison = ComparativeReport::default();
    for (name, set) in unique_names(&args.embeddings).iter().zip(&sets) {
        let analysis = analyze(set, &data, args.k, args.seed).map_err(CliError::from_core)?;
        let files = emit_plots(&analysis.report, &analysis.annotator_ids, &analysis.pca, &out.dir, &format!("{name}_"))
            .map_err(CliError::from_core)?;
        out.artifacts.extend(
            files
                .iter()
                .filter_map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned())),
        );
        comparison.push(format!("{name} ({})", set.source), &analysis.report);
    }
    out.json("comparison.json", &comparison)?;
    let table = comparison.table();
    out.text("comparison.txt", &table)?;
    print!("{table}");
    out.finish(
        "analyze",
        json!({ "dataset": args.dataset, "embeddings": args.embeddings, "k": args.k, "seed": args.seed }),
    )
}
