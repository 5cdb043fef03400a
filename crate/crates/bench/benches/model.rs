use annobert_core::annotator::{AnnotatorEmbeddingSet, EmbeddingSource};
use annobert_core::model::{AnnoModel, Example, ModelConfig};
use annobert_core::Label;
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, len: usize, vocab: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example {
            tokens: (0..len).map(|j| ((i * 7 + j * 13) % (vocab - 4) + 4) as u32).collect(),
            annotators: vec![i % 8, (i + 3) % 8, (i + 5) % 8],
            target: Label::from_bool(i % 3 == 0),
        })
        .collect()
}

fn model(hidden: usize, encoder: usize, feature: usize) -> AnnoModel {
    let set = AnnotatorEmbeddingSet {
        source: EmbeddingSource::Ctr,
        dim: 10,
        annotator_ids: (0..8).map(|i| format!("a{i}")).collect(),
        vectors: Array2::from_elem((8, 10), 0.1),
        projection: None,
        frozen: true,
    };
    let cfg = ModelConfig {
        hidden_size: hidden,
        encoder_layers: encoder,
        feature_layers: feature,
        ffn_size: 4 * hidden,
        ..ModelConfig::toy(500, 10)
    };
    AnnoModel::new(cfg, Some(set), 1).unwrap()
}

fn train_step(c: &mut Criterion) {
    let data = batch(32, 19, 500);
    let mut group = c.benchmark_group("train_step_batch32");
    group.sample_size(10);
    for (hidden, enc, feat) in [(64, 2, 6), (32, 1, 2)] {
        let m = model(hidden, enc, feat);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        group.bench_function(format!("h{hidden}_enc{enc}_feat{feat}"), |b| {
            b.iter(|| m.loss_and_grad(&data, Some(&mut rng)).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let data = batch(32, 19, 500);
    let m = model(64, 2, 6);
    c.bench_function("logits_batch32_h64", |b| b.iter(|| m.logits(&data).unwrap()));
}

criterion_group!(benches, train_step, inference);
criterion_main!(benches);
