use super::*;
use crate::annotator::{build_learnt_embeddings, AnnotatorEmbeddingSet, EmbeddingSource};
use crate::ctr::Pooling;
use crate::data::{generate_synthetic, DatasetEntry, SyntheticConfig};
use crate::model::ModelConfig;
use ndarray::Array2;
use rand::Rng;

fn tiny_model_config(vocab: usize, annotator_dim: usize, fusion: bool) -> ModelConfig {
    ModelConfig {
        hidden_size: 16,
        encoder_layers: 1,
        attention_heads: 2,
        feature_layers: 1,
        ffn_size: 32,
        max_seq_len: 32,
        vocab_size: vocab,
        annotator_dim,
        pooling: Pooling::Mean,
        max_annotators: 3,
        dropout: 0.1,
        fusion,
        init_std: 0.1,
    }
}

/// Token 4 marks positives, token 5 negatives; the rest is filler.
fn separable(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut tokens = vec![Tokenizer::CLS];
            tokens.extend((0..6).map(|_| rng.gen_range(6..30)));
            tokens.insert(rng.gen_range(1..tokens.len()), if positive { 4 } else { 5 });
            Example {
                tokens,
                annotators: vec![i % 3],
                target: Label::from_bool(positive),
            }
        })
        .collect()
}

fn ctr_like(frozen: bool) -> AnnotatorEmbeddingSet {
    AnnotatorEmbeddingSet {
        source: EmbeddingSource::Ctr,
        dim: 4,
        annotator_ids: vec!["a".into(), "b".into(), "c".into()],
        vectors: Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3),
        projection: None,
        frozen,
    }
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 3e-3,
        batch_size: 16,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss_on_separable_data() {
    let data = separable(200, 1);
    let mut m = AnnoModel::new(tiny_model_config(30, 4, true), Some(ctr_like(true)), 3).unwrap();
    let h = train(&mut m, &data, &data[..40], &quick_train(6)).unwrap();
    assert_eq!(h.epoch_loss.len(), 6);
    assert!(h.epoch_loss.last().unwrap() < &h.epoch_loss[0], "{:?}", h.epoch_loss);
    assert!(h.val_macro_f1.iter().all(|v| v.is_some()));
    assert!(evaluate_examples(&m, &data, 64).unwrap().macro_f1 > 90.0);
}

#[test]
fn training_is_deterministic() {
    let data = separable(64, 2);
    let run = || {
        let mut m = AnnoModel::new(tiny_model_config(30, 4, true), Some(ctr_like(false)), 3).unwrap();
        let h = train(&mut m, &data, &[], &quick_train(2)).unwrap();
        (h, m.params().clone())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert!(h1.val_macro_f1.iter().all(Option::is_none));
}

#[test]
fn frozen_embeddings_survive_training() {
    let data = separable(48, 3);
    let mut m = AnnoModel::new(tiny_model_config(30, 4, true), Some(ctr_like(true)), 3).unwrap();
    train(&mut m, &data, &[], &quick_train(1)).unwrap();
    assert_eq!(m.embedding_set().unwrap().vectors, ctr_like(true).vectors);

    let mut m = AnnoModel::new(tiny_model_config(30, 4, true), Some(ctr_like(false)), 3).unwrap();
    let cfg = TrainConfig {
        freeze_annotator: true,
        ..quick_train(1)
    };
    train(&mut m, &data, &[], &cfg).unwrap();
    let set = m.embedding_set().unwrap();
    assert!(set.frozen);
    assert_eq!(set.vectors, ctr_like(false).vectors);
}

#[test]
fn learnt_embeddings_change_after_one_step() {
    let ids = vec!["a".to_string(), "b".into(), "c".into()];
    let set = build_learnt_embeddings(ids, 16, 5).unwrap();
    let before = set.vectors.clone();
    let mut m = AnnoModel::new(tiny_model_config(30, 16, true), Some(set), 3).unwrap();
    let data = separable(16, 4);
    train(&mut m, &data, &[], &TrainConfig { batch_size: 16, ..quick_train(1) }).unwrap();
    assert_ne!(m.embedding_set().unwrap().vectors, before);
}

#[test]
fn empty_training_set_errors() {
    let mut m = AnnoModel::new(tiny_model_config(30, 4, true), Some(ctr_like(true)), 3).unwrap();
    assert!(matches!(train(&mut m, &[], &[], &quick_train(1)), Err(Error::EmptyDataset(_))));
    assert!(train(&mut m, &separable(4, 1), &[], &TrainConfig { epochs: 0, ..quick_train(1) }).is_err());
}

fn eval_fixture() -> Vec<EvalInstance> {
    let mk = |id: &str, unanimous: bool, positive: bool| EvalInstance {
        instance_id: id.into(),
        text: "w x".into(),
        annotator_group: vec!["a".into(), "b".into()],
        target: Label::from_bool(positive),
        unanimous,
    };
    vec![mk("1", true, false), mk("2", false, true), mk("3", true, true), mk("4", false, false)]
}

#[test]
fn subsets_partition_the_test_set() {
    let inst = eval_fixture();
    let overall = select_subset(&inst, Subset::Overall).unwrap();
    let dis = select_subset(&inst, Subset::Disagreement).unwrap();
    let agr = select_subset(&inst, Subset::Agreement).unwrap();
    assert_eq!(overall.len(), 4);
    assert_eq!(dis.len() + agr.len(), overall.len());
    assert!(dis.iter().all(|d| agr.iter().all(|a| a.instance_id != d.instance_id)));

    let unanimous: Vec<EvalInstance> = inst.into_iter().filter(|i| i.unanimous).collect();
    assert!(matches!(
        select_subset(&unanimous, Subset::Disagreement),
        Err(Error::EmptySubset(s)) if s == "disagreement"
    ));
}

#[test]
fn evaluate_matches_subset_metrics() {
    let inst = eval_fixture();
    let tok = Tokenizer::build(["w x"], 32);
    let m = AnnoModel::new(tiny_model_config(tok.vocab_size(), 4, true), Some(ctr_like(true)), 9).unwrap();
    let all = evaluate_subsets(&m, &tok, &inst, &[Subset::Overall, Subset::Disagreement], 2).unwrap();
    assert_eq!(all[&Subset::Overall], evaluate(&m, &tok, &inst, Subset::Overall, 3).unwrap());
    assert_eq!(all[&Subset::Disagreement], evaluate(&m, &tok, &inst, Subset::Disagreement, 1).unwrap());
    assert_eq!(all[&Subset::Overall].confusion.total(), 4);
}

#[test]
fn evaluation_inputs_never_carry_separator() {
    let mut inst = eval_fixture();
    let tok = Tokenizer::build(["w x"], 32);
    let m = AnnoModel::new(tiny_model_config(tok.vocab_size(), 4, true), Some(ctr_like(true)), 9).unwrap();
    let picked: Vec<&EvalInstance> = inst.iter().collect();
    let ex = eval_examples(&m, &tok, &picked).unwrap();
    assert!(ex.iter().all(|e| !e.tokens.contains(&Tokenizer::SEP)));
    inst[0].text = "[SEP] w".into();
    // Lowercasing keeps literal "[SEP]" text away from the separator id.
    let picked: Vec<&EvalInstance> = inst.iter().collect();
    assert!(eval_examples(&m, &tok, &picked).is_ok());
}

fn tiny_experiment(preset: Preset) -> ExperimentConfig {
    ExperimentConfig {
        preset,
        model: ModelConfig {
            hidden_size: 16,
            encoder_layers: 1,
            attention_heads: 2,
            feature_layers: 1,
            ffn_size: 32,
            max_seq_len: 24,
            ..ModelConfig::default()
        },
        ctr: crate::ctr::CtrHyperparams {
            em_iterations: 5,
            latent_dim: 4,
            ..Default::default()
        },
        lda_iterations: 10,
        train: TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        },
        seed: 3,
        ..ExperimentConfig::default()
    }
}

fn tiny_dataset() -> crate::data::Dataset {
    let mut cfg = SyntheticConfig::two_bloc(120, 4);
    cfg.base_rate = 0.4;
    generate_synthetic(&cfg, 8).unwrap()
}

#[test]
fn multi_run_aggregates_and_reproduces() {
    let data = tiny_dataset();
    let subsets = [Subset::Overall, Subset::Disagreement];
    for preset in Preset::ALL {
        let cfg = tiny_experiment(preset);
        let a = multi_run(&data, &cfg, 2, &subsets).unwrap();
        let overall = a.report(Subset::Overall).unwrap();
        assert_eq!(overall.seeds, vec![3, 4]);
        assert_eq!(overall.runs.len(), 2);
        let mean = overall.runs.iter().map(|r| r.macro_f1).sum::<f64>() / 2.0;
        assert!((overall.mean.macro_f1 - mean).abs() < 1e-9);
        if preset == Preset::AnnobertCtr {
            assert_eq!(a, multi_run(&data, &cfg, 2, &subsets).unwrap());
        }
    }
    let cfg = tiny_experiment(Preset::Baseline);
    assert!(matches!(multi_run(&data, &cfg, 1, &subsets), Err(Error::Config(_))));
}

#[test]
fn run_failure_names_the_run() {
    let data = tiny_dataset();
    let unanimous: Vec<DatasetEntry> = data.entries.iter().filter(|e| e.is_unanimous()).cloned().collect();
    let data = crate::data::Dataset::new(unanimous, data.split_tag).unwrap();
    let err = multi_run(&data, &tiny_experiment(Preset::Baseline), 2, &[Subset::Disagreement]).unwrap_err();
    assert!(matches!(err, Error::Run { run: 0, .. }), "{err}");
}

#[test]
fn standard_error_of_identical_runs_is_zero() {
    let run = |seed| RunMetrics {
        seed,
        macro_f1: 70.0,
        sensitivity: 40.0,
        specificity: 90.0,
        confusion: ConfusionMatrix::default(),
        warnings: vec![],
    };
    let r = MetricsReport::from_runs(Subset::Overall, (0..10).map(run).collect()).unwrap();
    assert_eq!(r.runs.len(), 10);
    assert_eq!(r.standard_error, MetricSummary::default());
    assert_eq!(r.mean.macro_f1, 70.0);

    let mut runs: Vec<RunMetrics> = (0..4).map(run).collect();
    for (i, r) in runs.iter_mut().enumerate() {
        r.macro_f1 = i as f64;
    }
    let r = MetricsReport::from_runs(Subset::Overall, runs).unwrap();
    // Sample sd of 0..3 is sqrt(5/3).
    assert!((r.standard_error.macro_f1 - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), r);
}

#[test]
fn preset_names_round_trip() {
    for p in Preset::ALL {
        assert_eq!(p.name().parse::<Preset>().unwrap(), p);
    }
    assert!("annobert-magic".parse::<Preset>().is_err());
    let bad = ExperimentConfig {
        train: TrainConfig {
            freeze_annotator: true,
            ..TrainConfig::default()
        },
        ..tiny_experiment(Preset::AnnobertLearnt)
    };
    assert!(bad.validate().is_err());
}
