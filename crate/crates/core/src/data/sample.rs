use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetEntry, SplitTag};
use crate::error::{Error, Result};

/// Draws `amount` distinct positions out of `length`, returned in ascending
/// order so that sampled subsets keep the source order.
fn sorted_sample(rng: &mut ChaCha8Rng, length: usize, amount: usize) -> Vec<usize> {
    let mut picked = index::sample(rng, length, amount).into_vec();
    picked.sort_unstable();
    picked
}

fn partition(entries: &[DatasetEntry], picked: &[usize]) -> (Vec<DatasetEntry>, Vec<DatasetEntry>) {
    let mut chosen = Vec::with_capacity(picked.len());
    let mut rest = Vec::with_capacity(entries.len() - picked.len());
    let mut next = picked.iter().peekable();
    for (i, e) in entries.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            chosen.push(e.clone());
        } else {
            rest.push(e.clone());
        }
    }
    (chosen, rest)
}

/// Splits a dataset into train, validation and test parts.
///
/// Entries tagged `test` form the test split; every other entry is in the
/// training pool. A validation set of `floor(n_train * val_fraction)`
/// entries is sampled uniformly from the pool under `seed`. Each output keeps
/// the input's entry order.
pub fn split_dataset(
    dataset: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let (test, pool): (Vec<_>, Vec<_>) = dataset
        .entries
        .iter()
        .cloned()
        .partition(|e| e.split == Some(SplitTag::Test));
    if pool.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let n_val = (pool.len() as f64 * val_fraction).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sorted_sample(&mut rng, pool.len(), n_val);
    let (val, train) = partition(&pool, &picked);
    if train.is_empty() {
        return Err(Error::EmptyDataset(
            "training split is empty after validation sampling".into(),
        ));
    }
    Ok((
        dataset.subset(train, SplitTag::Train),
        dataset.subset(val, SplitTag::Val),
        dataset.subset(test, SplitTag::Test),
    ))
}

/// Tags `floor(n * test_fraction)` uniformly chosen entries as `test` and the
/// rest as `train`. For sources that ship without an official split.
pub fn assign_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let n_test = (dataset.len() as f64 * test_fraction).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sorted_sample(&mut rng, dataset.len(), n_test);
    let mut out = dataset.clone();
    let mut next = picked.iter().peekable();
    for (i, e) in out.entries.iter_mut().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            e.split = Some(SplitTag::Test);
        } else {
            e.split = Some(SplitTag::Train);
        }
    }
    Ok(out)
}

/// Uniformly samples entries without replacement so that exactly
/// `n_positive` have a positive majority label and `n_total - n_positive`
/// a negative one. Output keeps the input's entry order.
pub fn sample_imbalanced(
    dataset: &Dataset,
    n_total: usize,
    n_positive: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_positive > n_total {
        return Err(Error::Config(format!(
            "n_positive ({n_positive}) exceeds n_total ({n_total})"
        )));
    }
    let n_negative = n_total - n_positive;
    let (pos_idx, neg_idx): (Vec<usize>, Vec<usize>) = (0..dataset.len())
        .partition(|&i| dataset.entries[i].majority_label().is_positive());
    if pos_idx.len() < n_positive {
        return Err(Error::InsufficientClass {
            class: "positive",
            requested: n_positive,
            available: pos_idx.len(),
        });
    }
    if neg_idx.len() < n_negative {
        return Err(Error::InsufficientClass {
            class: "negative",
            requested: n_negative,
            available: neg_idx.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = sorted_sample(&mut rng, pos_idx.len(), n_positive)
        .into_iter()
        .map(|i| pos_idx[i])
        .collect();
    keep.extend(
        sorted_sample(&mut rng, neg_idx.len(), n_negative)
            .into_iter()
            .map(|i| neg_idx[i]),
    );
    keep.sort_unstable();
    let entries = keep.into_iter().map(|i| dataset.entries[i].clone()).collect();
    Ok(dataset.subset(entries, dataset.split_tag))
}
