use super::*;
use crate::annotator::{build_history_embeddings, build_learnt_embeddings};
use crate::ctr::pool;
use crate::instances::{build_eval_instance, build_training_instances, LabelTextConfig};
use crate::data::DatasetEntry;
use ndarray::array;

fn small_config(vocab: usize, annotator_dim: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: 8,
        encoder_layers: 1,
        attention_heads: 2,
        feature_layers: 2,
        ffn_size: 16,
        max_seq_len: 16,
        vocab_size: vocab,
        annotator_dim,
        pooling: Pooling::Mean,
        max_annotators: 3,
        dropout: 0.1,
        fusion: true,
        init_std: 0.3,
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("a{i}")).collect()
}

fn ctr_set(frozen: bool) -> AnnotatorEmbeddingSet {
    AnnotatorEmbeddingSet {
        source: EmbeddingSource::Ctr,
        dim: 3,
        annotator_ids: ids(4),
        vectors: array![[0.5, -0.2, 0.1], [0.0, 0.0, 0.0], [-0.4, 0.9, 0.3], [0.2, 0.2, -0.7]],
        projection: None,
        frozen,
    }
}

fn ctr_model(frozen: bool) -> AnnoModel {
    AnnoModel::new(small_config(20, 3), Some(ctr_set(frozen)), 7).unwrap()
}

fn batch() -> Vec<Example> {
    vec![
        Example {
            tokens: vec![2, 5, 6, 7, 3, 9],
            annotators: vec![0, 2],
            target: Label::Positive,
        },
        Example {
            tokens: vec![2, 11, 4],
            annotators: vec![1],
            target: Label::Negative,
        },
        Example {
            tokens: vec![2, 8, 8, 12, 13],
            annotators: vec![3, 0, 1],
            target: Label::Positive,
        },
    ]
}

#[test]
fn shape_contracts() {
    let m = ctr_model(false);
    let enc = m.encode(&[2, 5, 6, 7, 8]).unwrap();
    assert_eq!(enc.dim(), (5, 8));
    let fused = m.fuse(&enc, &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(fused.dim(), (6, 8));
    let logits = m.classify(&fused).unwrap();
    assert!(logits.iter().all(|v| v.is_finite()));
    let p = softmax2(logits);
    assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
}

#[test]
fn encode_is_deterministic_and_positional() {
    let m = ctr_model(false);
    assert_eq!(m.encode(&[2, 5, 6]).unwrap(), m.encode(&[2, 5, 6]).unwrap());
    let a = m.encode(&[2, 5, 6]).unwrap();
    let b = m.encode(&[2, 6, 5]).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn fuse_prepends_projected_row() {
    let m = ctr_model(false);
    let enc = m.encode(&[2, 5, 6]).unwrap();
    let zero = m.fuse(&enc, &[0.0, 0.0, 0.0]).unwrap();
    assert!(zero.row(0).iter().all(|&v| v == 0.0));
    let other = m.fuse(&enc, &[1.0, -1.0, 0.5]).unwrap();
    assert!(other.row(0).iter().any(|&v| v != 0.0));
    assert_eq!(zero.slice(s![1.., ..]), other.slice(s![1.., ..]));
    assert_eq!(zero.slice(s![1.., ..]), enc);
    assert!(m.fuse(&enc, &[1.0]).is_err());
}

#[test]
fn packed_batch_matches_single_forward() {
    let m = ctr_model(false);
    let batch = batch();
    let packed = m.logits(&batch).unwrap();
    for (ex, got) in batch.iter().zip(&packed) {
        let names: Vec<String> = ex.annotators.iter().map(|&i| format!("a{i}")).collect();
        let pooled = m.pooled_vector(&names).unwrap();
        let single = m.classify(&m.fuse(&m.encode(&ex.tokens).unwrap(), &pooled).unwrap()).unwrap();
        for c in 0..2 {
            assert!((single[c] - got[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn baseline_reduces_to_encode_classify() {
    let m = AnnoModel::new(ModelConfig { fusion: false, ..small_config(20, 0) }, None, 3).unwrap();
    let batch = batch();
    let packed = m.logits(&batch).unwrap();
    for (ex, got) in batch.iter().zip(&packed) {
        let enc = m.encode(&ex.tokens).unwrap();
        let single = m.classify(&enc).unwrap();
        assert!((single[0] - got[0]).abs() < 1e-12 && (single[1] - got[1]).abs() < 1e-12);
    }
    assert!(m.embedding_set().is_none());
    assert!(m.params().entries().iter().all(|e| !e.name.starts_with("annotator")));
    assert!(AnnoModel::new(ModelConfig { fusion: false, ..small_config(20, 3) }, Some(ctr_set(false)), 3).is_err());
}

#[test]
fn pooling_is_order_invariant() {
    for pooling in [Pooling::Mean, Pooling::Max, Pooling::Sum] {
        let cfg = ModelConfig { pooling, ..small_config(20, 3) };
        let m = AnnoModel::new(cfg, Some(ctr_set(false)), 1).unwrap();
        let mut ex = batch().remove(2);
        let a = m.logits(std::slice::from_ref(&ex)).unwrap();
        ex.annotators.reverse();
        let b = m.logits(std::slice::from_ref(&ex)).unwrap();
        assert!((a[0][0] - b[0][0]).abs() < 1e-12 && (a[0][1] - b[0][1]).abs() < 1e-12);
    }
}

#[test]
fn pooling_matches_reference() {
    let set = ctr_set(false);
    for pooling in [Pooling::Mean, Pooling::Max, Pooling::Sum, Pooling::Concat] {
        let idx = [2, 0];
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| set.vectors.row(i).to_vec()).collect();
        let expected = pool(&rows, pooling, 3).unwrap();
        let got = pool_rows(&set.vectors, &idx, pooling, 3).unwrap();
        assert_eq!(got.to_vec(), expected, "{pooling}");
    }
}

#[test]
fn annotator_group_changes_prediction() {
    let m = ctr_model(false);
    let mut b = batch();
    b.truncate(1);
    let mut other = b.clone();
    other[0].annotators = vec![3];
    let x = m.logits(&b).unwrap()[0];
    let y = m.logits(&other).unwrap()[0];
    assert!((x[0] - y[0]).abs() > 1e-9 || (x[1] - y[1]).abs() > 1e-9);
}

#[test]
fn forward_from_instances() {
    let tok = Tokenizer::build(["the cat sat", "hate not"], 16);
    let cfg = small_config(tok.vocab_size(), 3);
    let m = AnnoModel::new(cfg, Some(ctr_set(false)), 2).unwrap();
    let entry = DatasetEntry {
        instance_id: "x".into(),
        text: "the cat sat".into(),
        labels: [("a0".to_string(), Label::Positive), ("a2".to_string(), Label::Negative)]
            .into_iter()
            .collect(),
        split: None,
    };
    let ev = build_eval_instance(&entry);
    let direct = m.forward(&ev, &tok).unwrap();
    let ex = m.example(&ev, &tok, ev.target).unwrap();
    let packed = m.logits(&[ex]).unwrap()[0];
    assert!((direct[0] - packed[0]).abs() < 1e-12);

    let train = build_training_instances(&entry, &LabelTextConfig::preset("hate-not").unwrap());
    assert_eq!(m.example(&train[0], &tok, train[0].target).unwrap().annotators, vec![0]);

    let mut stranger = ev.clone();
    stranger.annotator_group = vec!["zz".into()];
    assert!(matches!(m.forward(&stranger, &tok), Err(Error::UnknownAnnotator(_))));
}

#[test]
fn input_validation() {
    let m = ctr_model(false);
    assert!(matches!(m.encode(&[2, 99]), Err(Error::TokenOutOfRange { id: 99, .. })));
    assert!(matches!(m.encode(&[2; 17]), Err(Error::SequenceTooLong { len: 17, max: 16 })));
    let mut b = batch();
    b[0].annotators.clear();
    assert!(m.logits(&b).is_err());
    let concat = ModelConfig {
        pooling: Pooling::Concat,
        max_annotators: 2,
        ..small_config(20, 3)
    };
    let m = AnnoModel::new(concat, Some(ctr_set(false)), 1).unwrap();
    assert!(m.logits(&batch()).is_err());
    assert!(AnnoModel::new(small_config(20, 5), Some(ctr_set(false)), 1).is_err());
    assert!(AnnoModel::new(ModelConfig { attention_heads: 3, ..small_config(20, 3) }, Some(ctr_set(false)), 1).is_err());
    assert!(AnnoModel::new(ModelConfig { feature_layers: 0, ..small_config(20, 3) }, Some(ctr_set(false)), 1).is_err());
}

fn assert_grad_check(m: &AnnoModel, expected_groups: usize) {
    let report = grad_check(m, &batch(), 1e-5, 12, 5).unwrap();
    assert_eq!(report.groups.len(), expected_groups, "{report:?}");
    assert!(report.max_rel_error < 1e-4, "{report:#?}");
}

#[test]
fn gradients_match_finite_differences() {
    assert_grad_check(&ctr_model(false), 10);
    // Frozen table: its group is excluded.
    assert_grad_check(&ctr_model(true), 9);
    for pooling in [Pooling::Sum, Pooling::Max, Pooling::Concat] {
        let cfg = ModelConfig { pooling, ..small_config(20, 3) };
        assert_grad_check(&AnnoModel::new(cfg, Some(ctr_set(false)), 9).unwrap(), 10);
    }
    let baseline = AnnoModel::new(ModelConfig { fusion: false, ..small_config(20, 0) }, None, 4).unwrap();
    assert_grad_check(&baseline, 8);
}

#[test]
fn gradients_for_history_and_learnt_sources() {
    let rows = array![[1.0, -1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, -1.0, -1.0], [1.0, 1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0, 1.0]];
    let hist = build_history_embeddings(ids(4), rows, 8, false, 3).unwrap();
    let m = AnnoModel::new(small_config(20, 8), Some(hist), 2).unwrap();
    assert_grad_check(&m, 9);
    let learnt = build_learnt_embeddings(ids(4), 8, 3).unwrap();
    let m = AnnoModel::new(small_config(20, 8), Some(learnt), 2).unwrap();
    assert_grad_check(&m, 10);
}

#[test]
fn frozen_annotators_receive_no_gradient() {
    let m = ctr_model(true);
    let (_, g) = m.loss_and_grad(&batch(), None).unwrap();
    let id = m.params().find("annotator.table").unwrap();
    assert!(g.view(m.params(), id).iter().all(|&v| v == 0.0));
    let proj = m.params().find("annotator.fuse_projection").unwrap();
    assert!(g.view(m.params(), proj).iter().any(|&v| v != 0.0));

    let unfrozen = ctr_model(false);
    let (_, g) = unfrozen.loss_and_grad(&batch(), None).unwrap();
    assert!(g.view(unfrozen.params(), id).iter().any(|&v| v != 0.0));
}

#[test]
fn saturated_margin_gives_vanishing_head_gradient() {
    let mut m = ctr_model(false);
    let b2 = m.params().find("head.b2").unwrap();
    m.params_mut().view_mut(b2).assign(&array![[-40.0, 40.0]]);
    let b: Vec<Example> = batch()
        .into_iter()
        .map(|e| Example { target: Label::Positive, ..e })
        .collect();
    let (loss, g) = m.loss_and_grad(&b, None).unwrap();
    assert!(loss < 1e-30);
    for e in m.params().entries().iter().filter(|e| e.group == ParamGroup::Head) {
        assert!(g.values[e.range()].iter().all(|v| v.abs() < 1e-30), "{}", e.name);
    }
}

#[test]
fn dropout_only_in_training() {
    let m = ctr_model(false);
    let b = batch();
    let eval = m.loss(&b).unwrap();
    assert_eq!(m.loss_and_grad(&b, None).unwrap().0, eval);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train = m.loss_and_grad(&b, Some(&mut rng)).unwrap().0;
    assert_ne!(train, eval);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(m.loss_and_grad(&b, Some(&mut rng)).unwrap().0, train);
}

#[test]
fn checkpoint_round_trip() {
    let tok = Tokenizer::build(["a b c"], 16);
    let m = AnnoModel::new(small_config(tok.vocab_size(), 3), Some(ctr_set(true)), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let label = LabelTextConfig::default();
    m.to_checkpoint(&tok, Some(&label)).save(&path).unwrap();
    let cp = Checkpoint::load(&path).unwrap();
    assert_eq!(cp.tokenizer, tok);
    assert_eq!(cp.label_text, Some(label));
    let back = AnnoModel::from_checkpoint(&cp).unwrap();
    assert_eq!(back.params(), m.params());
    assert_eq!(back.embedding_set(), m.embedding_set());
    let b: Vec<Example> = vec![Example {
        tokens: vec![2, 40, 41],
        annotators: vec![1, 2],
        target: Label::Negative,
    }];
    assert_eq!(back.logits(&b).unwrap(), m.logits(&b).unwrap());
}

#[test]
fn embedding_set_round_trips_through_model() {
    let m = ctr_model(true);
    assert_eq!(m.embedding_set().unwrap(), ctr_set(true));
}
