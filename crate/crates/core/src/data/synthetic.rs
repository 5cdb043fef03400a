//! Synthetic multi-annotator corpora with recoverable topic structure.
//!
//! Each instance is a mixture over latent topics. A fraction `base_rate` of
//! instances is "charged": most of its mass sits on one of the first
//! `charged_topics` topics. Every other instance mixes only the remaining,
//! neutral topics. Words are drawn from per-topic distributions over disjoint
//! vocabulary blocks plus a shared block.
//!
//! An annotator `a` labels an instance positive iff
//! `theta . sensitivity[a] > threshold[a] + noise`, with
//! `noise ~ N(0, noise_std)`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetEntry, Label, SplitTag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_instances: usize,
    pub n_annotators: usize,
    pub annotators_per_instance: usize,
    pub n_topics: usize,
    pub vocab_size: usize,
    /// Words per instance.
    pub doc_length: usize,
    /// Per-annotator, per-topic sensitivity (`n_annotators x n_topics`).
    pub sensitivities: Vec<Vec<f64>>,
    /// Per-annotator labelling threshold.
    pub thresholds: Vec<f64>,
    /// Probability that an instance is charged.
    pub base_rate: f64,
    /// Topics `0..charged_topics` carry offensive content.
    pub charged_topics: usize,
    /// Mass placed on the chosen charged topic of a charged instance.
    pub charge_weight: f64,
    /// Symmetric Dirichlet concentration of the background mixture.
    pub topic_concentration: f64,
    pub noise_std: f64,
    /// Fraction of words drawn from the shared block rather than a topic block.
    pub shared_word_fraction: f64,
    /// Fraction of entries tagged as the official test split.
    pub test_fraction: f64,
}

impl SyntheticConfig {
    /// Every annotator equally sensitive to all charged topics: labels depend
    /// on the text alone (up to noise).
    pub fn uniform(n_instances: usize, n_annotators: usize) -> Self {
        let n_topics = 10;
        let charged_topics = 2;
        let sens: Vec<f64> = (0..n_topics)
            .map(|k| if k < charged_topics { 1.0 } else { 0.0 })
            .collect();
        SyntheticConfig {
            n_instances,
            n_annotators,
            annotators_per_instance: 3.min(n_annotators),
            n_topics,
            vocab_size: 400,
            doc_length: 16,
            sensitivities: vec![sens; n_annotators],
            thresholds: vec![0.4; n_annotators],
            base_rate: 0.1,
            charged_topics,
            charge_weight: 0.6,
            topic_concentration: 0.3,
            noise_std: 0.05,
            shared_word_fraction: 0.2,
            test_fraction: 0.2,
        }
    }

    /// Two annotator blocs of (nearly) equal size. Both blocs flag topic 0;
    /// only the first bloc also flags topic 1, so instances charged on topic 1
    /// split the blocs and their majority label depends on who annotated.
    pub fn two_bloc(n_instances: usize, n_annotators: usize) -> Self {
        let mut cfg = Self::uniform(n_instances, n_annotators);
        let half = n_annotators.div_ceil(2);
        for (a, s) in cfg.sensitivities.iter_mut().enumerate() {
            if a >= half {
                s[1] = 0.0;
            }
        }
        cfg
    }

    /// Index of the bloc an annotator belongs to under [`Self::two_bloc`].
    pub fn bloc_of(&self, annotator: usize) -> usize {
        usize::from(annotator >= self.n_annotators.div_ceil(2))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_instances == 0 || self.n_annotators == 0 {
            return fail("n_instances and n_annotators must be positive".into());
        }
        if self.annotators_per_instance == 0 || self.annotators_per_instance > self.n_annotators {
            return fail(format!(
                "annotators_per_instance ({}) must be in 1..={}",
                self.annotators_per_instance, self.n_annotators
            ));
        }
        if self.n_topics < 2 || self.charged_topics == 0 || self.charged_topics >= self.n_topics {
            return fail("need n_topics >= 2 and 0 < charged_topics < n_topics".into());
        }
        if self.sensitivities.len() != self.n_annotators
            || self.sensitivities.iter().any(|s| s.len() != self.n_topics)
        {
            return fail("sensitivities must be n_annotators x n_topics".into());
        }
        if self.thresholds.len() != self.n_annotators {
            return fail("thresholds must have one entry per annotator".into());
        }
        let shared = (self.vocab_size as f64 * self.shared_word_fraction).round() as usize;
        if self.vocab_size < self.n_topics + 1 || (self.vocab_size - shared) < self.n_topics {
            return fail("vocab_size too small for the topic blocks".into());
        }
        if self.doc_length == 0 {
            return fail("doc_length must be positive".into());
        }
        for (name, v) in [
            ("base_rate", self.base_rate),
            ("charge_weight", self.charge_weight),
            ("shared_word_fraction", self.shared_word_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return fail("test_fraction must be in [0, 1)".into());
        }
        if self.topic_concentration <= 0.0 || self.noise_std < 0.0 {
            return fail("topic_concentration must be > 0 and noise_std >= 0".into());
        }
        Ok(())
    }
}

fn word(i: usize) -> String {
    // Pronounceable, collision-free pseudo-words.
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut s = String::new();
    let mut n = i;
    loop {
        s.push_str(ONSETS[n % ONSETS.len()]);
        n /= ONSETS.len();
        s.push_str(VOWELS[n % VOWELS.len()]);
        n /= VOWELS.len();
        if n == 0 {
            break;
        }
        n -= 1;
    }
    s
}

fn dirichlet(rng: &mut ChaCha8Rng, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / k as f64; k];
    }
    draws.iter_mut().for_each(|x| *x /= total);
    draws
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generates a dataset that is fully determined by `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..cfg.vocab_size).map(word).collect();
    let n_shared = (cfg.vocab_size as f64 * cfg.shared_word_fraction).round() as usize;
    let block = (cfg.vocab_size - n_shared) / cfg.n_topics;
    let shared_start = block * cfg.n_topics;
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite std");
    let neutral = cfg.n_topics - cfg.charged_topics;
    let annotator_ids: Vec<String> = (0..cfg.n_annotators).map(|a| format!("ann{a:02}")).collect();

    let mut entries = Vec::with_capacity(cfg.n_instances);
    for i in 0..cfg.n_instances {
        let mut theta = vec![0.0; cfg.n_topics];
        if rng.gen::<f64>() < cfg.base_rate {
            let hot = rng.gen_range(0..cfg.charged_topics);
            let background = dirichlet(&mut rng, cfg.topic_concentration, cfg.n_topics);
            for (k, t) in theta.iter_mut().enumerate() {
                *t = (1.0 - cfg.charge_weight) * background[k];
            }
            theta[hot] += cfg.charge_weight;
        } else {
            let background = dirichlet(&mut rng, cfg.topic_concentration, neutral);
            theta[cfg.charged_topics..].copy_from_slice(&background);
        }

        let mut tokens = Vec::with_capacity(cfg.doc_length);
        for _ in 0..cfg.doc_length {
            let w = if n_shared > 0 && rng.gen::<f64>() < cfg.shared_word_fraction {
                shared_start + rng.gen_range(0..(cfg.vocab_size - shared_start))
            } else {
                let z = sample_index(&mut rng, &theta);
                z * block + rng.gen_range(0..block)
            };
            tokens.push(words[w].as_str());
        }

        let mut labels = BTreeMap::new();
        let mut chosen = index::sample(&mut rng, cfg.n_annotators, cfg.annotators_per_instance)
            .into_vec();
        chosen.sort_unstable();
        for a in chosen {
            let score: f64 = theta
                .iter()
                .zip(&cfg.sensitivities[a])
                .map(|(t, s)| t * s)
                .sum();
            let eps = if cfg.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            labels.insert(
                annotator_ids[a].clone(),
                Label::from_bool(score > cfg.thresholds[a] + eps),
            );
        }
        entries.push(DatasetEntry {
            instance_id: format!("syn-{i:05}"),
            text: tokens.join(" "),
            labels,
            split: Some(SplitTag::Train),
        });
    }

    let n_test = (cfg.n_instances as f64 * cfg.test_fraction).floor() as usize;
    for i in index::sample(&mut rng, cfg.n_instances, n_test) {
        entries[i].split = Some(SplitTag::Test);
    }

    let mut dataset = Dataset::new(entries, SplitTag::Unsplit)?;
    // Stable annotator order regardless of who happened to label first.
    let present: std::collections::HashSet<&String> = dataset.annotator_ids.iter().collect();
    dataset.annotator_ids = annotator_ids
        .iter()
        .filter(|a| present.contains(a))
        .cloned()
        .collect();
    Ok(dataset)
}
