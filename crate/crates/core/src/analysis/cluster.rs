use ndarray::{Array2, ArrayView1};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const KMEANS_RESTARTS: usize = 10;
const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// Cluster of each row; clusters are numbered by first appearance.
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.outer_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(x: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = x.outer_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.gen_range(0..n),
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(x: &Array2<f64>, mut centroids: Array2<f64>) -> Clustering {
    let (n, dim) = x.dim();
    let k = centroids.nrows();
    let mut assignments = vec![usize::MAX; n];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (i, r) in x.outer_iter().enumerate() {
            let (c, _) = nearest(r, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &x.row(i));
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // Reseed an empty cluster at the worst-served point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(x.row(a), centroids.row(assignments[a]));
                        let db = sq_dist(x.row(b), centroids.row(assignments[b]));
                        da.total_cmp(&db)
                    })
                    .expect("n >= 1");
                centroids.row_mut(c).assign(&x.row(far));
                assignments[far] = c;
            }
        }
    }
    let inertia = x
        .outer_iter()
        .zip(&assignments)
        .map(|(r, &c)| sq_dist(r, centroids.row(c)))
        .sum();
    Clustering {
        assignments,
        centroids,
        inertia,
    }
}

fn relabel(mut c: Clustering) -> Clustering {
    let k = c.centroids.nrows();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &c.assignments {
        if map[a] == usize::MAX {
            map[a] = next;
            next += 1;
        }
    }
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = next;
        next += 1;
    }
    let mut centroids = c.centroids.clone();
    for (old, &new) in map.iter().enumerate() {
        centroids.row_mut(new).assign(&c.centroids.row(old));
    }
    c.assignments.iter_mut().for_each(|a| *a = map[*a]);
    c.centroids = centroids;
    c
}

/// Seeded k-means++ with [`KMEANS_RESTARTS`] restarts, keeping the lowest
/// inertia (first on ties).
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64) -> Result<Clustering> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must be in 1..={n}, got {k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(x, plus_plus_init(x, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(relabel(best.expect("at least one restart")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn blobs(per: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        Array2::from_shape_fn((2 * per, 3), |(i, _)| {
            let centre = if i < per { -10.0 } else { 10.0 };
            centre + noise.sample(&mut rng)
        })
    }

    #[test]
    fn recovers_separated_blobs() {
        for seed in 0..5 {
            let c = kmeans(&blobs(6, seed), 2, seed).unwrap();
            assert_eq!(c.assignments, [vec![0; 6], vec![1; 6]].concat());
        }
    }

    #[test]
    fn k_equal_n_gives_zero_inertia() {
        let x = blobs(3, 1);
        let c = kmeans(&x, 6, 0).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut seen = c.assignments.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn k_one_is_single_cluster() {
        let c = kmeans(&blobs(4, 2), 1, 0).unwrap();
        assert!(c.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn deterministic_and_validated() {
        let x = blobs(5, 3);
        assert_eq!(kmeans(&x, 3, 7).unwrap(), kmeans(&x, 3, 7).unwrap());
        assert!(kmeans(&x, 11, 0).is_err());
        assert!(kmeans(&x, 0, 0).is_err());
    }
}
