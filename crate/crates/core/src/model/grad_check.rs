//! Central finite-difference check of the analytic gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnoModel, Example, ParamGroup};
use crate::error::Result;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient vanishes are judged by absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// Largest absolute analytic gradient among the sampled coordinates.
    pub max_abs_grad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups: BTreeMap<ParamGroup, GroupCheck>,
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients (dropout off) with central differences on at
/// least `coords_per_group` trainable coordinates of every parameter group,
/// visiting the group's tensors round-robin. Coordinates with a nonzero
/// analytic gradient are preferred so that unused embedding rows do not
/// fill the sample.
pub fn grad_check(
    model: &AnnoModel,
    batch: &[Example],
    epsilon: f64,
    coords_per_group: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(batch, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_group: BTreeMap<ParamGroup, Vec<usize>> = BTreeMap::new();
    for (id, e) in model.params().entries().iter().enumerate() {
        if e.trainable && !e.is_empty() {
            by_group.entry(e.group).or_default().push(id);
        }
    }

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        groups: BTreeMap::new(),
    };
    for (group, ids) in by_group {
        let mut pools: Vec<Vec<usize>> = ids
            .iter()
            .map(|&id| {
                let range = model.params().entry(id).range();
                let (mut nonzero, mut zero): (Vec<usize>, Vec<usize>) =
                    range.partition(|&i| grads.values[i] != 0.0);
                nonzero.shuffle(&mut rng);
                zero.shuffle(&mut rng);
                // Popped from the back: zero-gradient coordinates come last.
                zero.extend(nonzero);
                zero
            })
            .collect();
        let wanted = coords_per_group.max(ids.len());
        let mut picked = Vec::with_capacity(wanted);
        let mut t = 0;
        while picked.len() < wanted && pools.iter().any(|p| !p.is_empty()) {
            let n = pools.len();
            if let Some(i) = pools[t % n].pop() {
                picked.push(i);
            }
            t += 1;
        }

        let mut check = GroupCheck {
            coordinates: picked.len(),
            max_rel_error: 0.0,
            max_abs_grad: 0.0,
        };
        for i in picked {
            let original = probe.params.values()[i];
            probe.params.values_mut()[i] = original + epsilon;
            let plus = probe.loss(batch)?;
            probe.params.values_mut()[i] = original - epsilon;
            let minus = probe.loss(batch)?;
            probe.params.values_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = grads.values[i];
            check.max_rel_error = check.max_rel_error.max(relative_error(analytic, numeric));
            check.max_abs_grad = check.max_abs_grad.max(analytic.abs());
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.groups.insert(group, check);
    }
    Ok(report)
}
