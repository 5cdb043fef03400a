use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Principal-component projection of a set of row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `n x n_components` projected coordinates.
    pub coordinates: Array2<f64>,
    /// Fraction of total variance carried by each component, largest first.
    pub variance_ratios: Vec<f64>,
    /// `n_components x dim`, one unit-norm principal axis per row.
    pub components: Array2<f64>,
    pub mean: Array1<f64>,
}

impl Pca {
    /// Maps coordinates back to the input space.
    pub fn reconstruct(&self) -> Array2<f64> {
        self.coordinates.dot(&self.components) + &self.mean
    }
}

/// Projects the rows of `x` onto their top `n_components` principal axes,
/// using an exact eigendecomposition of the sample covariance.
pub fn pca_project(x: &Array2<f64>, n_components: usize) -> Result<Pca> {
    let (n, dim) = x.dim();
    if n < 2 {
        return Err(Error::Config(format!("PCA needs at least 2 rows, got {n}")));
    }
    if n_components == 0 || n_components > n.min(dim) {
        return Err(Error::Config(format!(
            "n_components must be in 1..={}, got {n_components}",
            n.min(dim)
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input"));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(DMatrix::from_fn(dim, dim, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Array2::zeros((n_components, dim));
    let mut variance_ratios = Vec::with_capacity(n_components);
    for (c, &k) in order.iter().take(n_components).enumerate() {
        let axis = eig.eigenvectors.column(k);
        // Fix the sign so the largest-magnitude loading is positive.
        let pivot = (0..dim).max_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs())).unwrap_or(0);
        let sign = if axis[pivot] < 0.0 { -1.0 } else { 1.0 };
        for d in 0..dim {
            components[[c, d]] = sign * axis[d];
        }
        let ratio = if total > 0.0 { eig.eigenvalues[k].max(0.0) / total } else { 0.0 };
        variance_ratios.push(ratio.min(1.0));
    }
    let coordinates = centered.dot(&components.t());
    Ok(Pca {
        coordinates,
        variance_ratios,
        components,
        mean,
    })
}
