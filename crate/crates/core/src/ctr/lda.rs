//! Collapsed Gibbs sampling for latent Dirichlet allocation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    pub iterations: usize,
    /// Document-topic prior. `None` means `50 / topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    /// Words seen fewer times than this across the corpus are dropped.
    pub min_count: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(topics: usize) -> Self {
        LdaConfig {
            topics,
            iterations: 200,
            alpha: None,
            beta: 0.01,
            min_count: 2,
            seed: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

/// Point estimate of a fitted topic model.
///
/// `phi` is `topics x vocabulary` (topic-word probabilities) and `theta` is
/// `documents x topics`; both are stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub topics: usize,
    pub vocabulary: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
}

impl LdaModel {
    pub fn n_documents(&self) -> usize {
        self.theta.len()
    }
}

/// Words occurring at least `min_count` times, in order of first appearance.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order = Vec::new();
    for doc in corpus {
        for w in doc {
            let w = w.as_ref();
            let c = counts.entry(w).or_insert(0);
            if *c == 0 {
                order.push(w);
            }
            *c += 1;
        }
    }
    order
        .into_iter()
        .filter(|w| counts[w] >= min_count)
        .map(str::to_owned)
        .collect()
}

/// Fits LDA with collapsed Gibbs sampling and returns the final-state point
/// estimate `phi = (n_kw + beta) / (n_k + V beta)`,
/// `theta = (n_dk + alpha) / (n_d + K alpha)`.
///
/// Documents whose words are all filtered out get the prior mean for theta.
pub fn fit_lda<S: AsRef<str>>(corpus: &[Vec<S>], cfg: &LdaConfig) -> Result<LdaModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset("LDA corpus has no documents".into()));
    }
    if cfg.topics == 0 {
        return Err(Error::Config("LDA needs at least one topic".into()));
    }
    if cfg.beta <= 0.0 || cfg.alpha() <= 0.0 {
        return Err(Error::Config("LDA priors must be positive".into()));
    }
    let vocabulary = build_vocabulary(corpus, cfg.min_count);
    if vocabulary.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no word occurs at least {} times",
            cfg.min_count
        )));
    }
    let word_id: HashMap<&str, usize> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i))
        .collect();
    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|d| {
            d.iter()
                .filter_map(|w| word_id.get(w.as_ref()).copied())
                .collect()
        })
        .collect();

    let k = cfg.topics;
    let v = vocabulary.len();
    let alpha = cfg.alpha();
    let beta = cfg.beta;
    let v_beta = v as f64 * beta;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut n_dk = vec![0u32; docs.len() * k];
    let mut n_kw = vec![0u32; k * v];
    let mut n_k = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let zs: Vec<usize> = doc
            .iter()
            .map(|&w| {
                let t = rng.gen_range(0..k);
                n_dk[d * k + t] += 1;
                n_kw[t * v + w] += 1;
                n_k[t] += 1;
                t
            })
            .collect();
        z.push(zs);
    }

    let mut weights = vec![0.0f64; k];
    for _ in 0..cfg.iterations {
        for (d, doc) in docs.iter().enumerate() {
            let row = &mut n_dk[d * k..(d + 1) * k];
            for (pos, &w) in doc.iter().enumerate() {
                let old = z[d][pos];
                row[old] -= 1;
                n_kw[old * v + w] -= 1;
                n_k[old] -= 1;

                let mut total = 0.0;
                for t in 0..k {
                    let p = (row[t] as f64 + alpha) * (n_kw[t * v + w] as f64 + beta)
                        / (n_k[t] as f64 + v_beta);
                    total += p;
                    weights[t] = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.partition_point(|&c| c <= u).min(k - 1);

                z[d][pos] = new;
                row[new] += 1;
                n_kw[new * v + w] += 1;
                n_k[new] += 1;
            }
        }
    }

    let phi = (0..k)
        .map(|t| {
            let denom = n_k[t] as f64 + v_beta;
            normalized(
                (0..v).map(|w| (n_kw[t * v + w] as f64 + beta) / denom),
            )
        })
        .collect();
    let k_alpha = k as f64 * alpha;
    let theta = docs
        .iter()
        .enumerate()
        .map(|(d, doc)| {
            let denom = doc.len() as f64 + k_alpha;
            normalized((0..k).map(|t| (n_dk[d * k + t] as f64 + alpha) / denom))
        })
        .collect();

    Ok(LdaModel {
        topics: k,
        vocabulary,
        phi,
        theta,
        alpha,
        beta,
    })
}

/// Collects a probability row and removes the rounding residue of its sum.
fn normalized(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut row: Vec<f64> = values.collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
    row
}
