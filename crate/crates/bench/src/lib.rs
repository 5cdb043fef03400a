//! Shared fixtures for the benchmarks.

use annobert_core::data::{generate_synthetic, SyntheticConfig};
use annobert_core::Dataset;

/// Uniform synthetic corpus where every annotator labels every instance.
pub fn dense_corpus(n_instances: usize, n_annotators: usize, seed: u64) -> Dataset {
    let mut cfg = SyntheticConfig::uniform(n_instances, n_annotators);
    cfg.annotators_per_instance = n_annotators;
    generate_synthetic(&cfg, seed).expect("valid synthetic config")
}
