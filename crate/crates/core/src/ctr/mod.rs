//! Collaborative topic regression over the annotator x instance label matrix.
//!
//! Topic proportions `theta` come from LDA over the training texts and stay
//! fixed. Alternating ridge updates then minimize
//!
//! ```text
//! sum_ij c_ij (r_ij - u_i . v_j)^2 + lambda_u sum_i |u_i|^2 + lambda_v sum_j |v_j - theta_j|^2
//! ```
//!
//! with confidence `c_ij = a` on observed cells and `b` elsewhere. The rows of
//! `U` are the annotator embeddings.

mod lda;
mod linalg;
mod pool;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::annotator::{EmbeddingFile, EmbeddingSource};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub use lda::{build_vocabulary, fit_lda, LdaConfig, LdaModel};
pub use linalg::cholesky_solve;
pub use pool::{pool, Pooling};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtrHyperparams {
    /// Confidence of observed cells.
    pub a: f64,
    /// Confidence of unobserved cells.
    pub b: f64,
    pub lambda_u: f64,
    pub lambda_v: f64,
    pub em_iterations: usize,
    pub latent_dim: usize,
}

impl Default for CtrHyperparams {
    fn default() -> Self {
        CtrHyperparams {
            a: 1.0,
            b: 0.01,
            lambda_u: 0.01,
            lambda_v: 100.0,
            em_iterations: 100,
            latent_dim: 10,
        }
    }
}

impl CtrHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > self.b && self.b > 0.0) {
            return Err(Error::Config(format!(
                "CTR confidences need a > b > 0 (a = {}, b = {})",
                self.a, self.b
            )));
        }
        if !(self.lambda_u > 0.0 && self.lambda_v > 0.0) {
            return Err(Error::Config("CTR regularizers must be positive".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse binary annotator x document matrix. Only observed cells are
/// stored; their value is 1 for a positive label and 0 for a negative one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratings {
    pub n_annotators: usize,
    pub n_documents: usize,
    by_annotator: Vec<Vec<(usize, f64)>>,
    by_document: Vec<Vec<(usize, f64)>>,
}

impl Ratings {
    /// Builds the matrix from `(annotator, document, value)` triples.
    pub fn from_triples(
        n_annotators: usize,
        n_documents: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut by_annotator = vec![Vec::new(); n_annotators];
        let mut by_document = vec![Vec::new(); n_documents];
        for (i, j, r) in triples {
            if i >= n_annotators || j >= n_documents {
                return Err(Error::Config(format!(
                    "rating ({i}, {j}) outside a {n_annotators} x {n_documents} matrix"
                )));
            }
            if by_annotator[i].iter().any(|&(d, _)| d == j) {
                return Err(Error::Config(format!("rating ({i}, {j}) given twice")));
            }
            by_annotator[i].push((j, r));
            by_document[j].push((i, r));
        }
        Ok(Ratings {
            n_annotators,
            n_documents,
            by_annotator,
            by_document,
        })
    }

    /// Rows follow `dataset.annotator_ids`, columns follow entry order.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let index = dataset.annotator_index();
        let triples = dataset.entries.iter().enumerate().flat_map(|(j, e)| {
            let index = &index;
            e.labels
                .iter()
                .map(move |(a, l)| (index[a.as_str()], j, if l.is_positive() { 1.0 } else { 0.0 }))
        });
        Ratings::from_triples(dataset.annotator_ids.len(), dataset.len(), triples)
            .expect("dataset annotations are unique and in range")
    }

    pub fn annotator_row(&self, i: usize) -> &[(usize, f64)] {
        &self.by_annotator[i]
    }

    pub fn document_column(&self, j: usize) -> &[(usize, f64)] {
        &self.by_document[j]
    }

    pub fn observed(&self) -> usize {
        self.by_annotator.iter().map(Vec::len).sum()
    }

    /// Dense value of cell `(i, j)`; unobserved cells read as 0.
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.by_annotator[i]
            .iter()
            .find(|&&(d, _)| d == j)
            .map(|&(_, r)| r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtrModel {
    pub annotator_ids: Vec<String>,
    /// Annotator latent vectors, `A x K`.
    pub u: Array2<f64>,
    /// Item latent vectors, `D x K`.
    pub v: Array2<f64>,
    pub lda: LdaModel,
    pub hyper: CtrHyperparams,
    pub ratings: Ratings,
    pub objective_trace: Vec<f64>,
}

fn theta_matrix(lda: &LdaModel) -> Array2<f64> {
    let k = lda.topics;
    let flat: Vec<f64> = lda.theta.iter().flatten().copied().collect();
    Array2::from_shape_vec((lda.theta.len(), k), flat).expect("rectangular theta")
}

fn gram(m: &Array2<f64>) -> Array2<f64> {
    m.t().dot(m)
}

/// Normal-equation solve for one side of the factorization.
///
/// Minimizes `sum_n c_n (r_n - x . f_n)^2 + lambda |x - prior|^2` where the
/// sum runs over all rows `f_n` of `factors`, `c_n = a` for the `observed`
/// rows and `b` otherwise, and unobserved `r_n = 0`. `factor_gram` must be
/// `factors^T factors`.
fn ridge_row(
    factors: ArrayView2<f64>,
    factor_gram: &Array2<f64>,
    observed: &[(usize, f64)],
    hyper: &CtrHyperparams,
    lambda: f64,
    prior: Option<ArrayView1<f64>>,
) -> Result<Vec<f64>> {
    let k = factors.ncols();
    let mut m: Vec<f64> = factor_gram.iter().map(|g| hyper.b * g).collect();
    let mut rhs = vec![0.0; k];
    let extra = hyper.a - hyper.b;
    for &(n, r) in observed {
        let f = factors.row(n);
        for p in 0..k {
            let fp = f[p];
            rhs[p] += hyper.a * r * fp;
            for q in 0..k {
                m[p * k + q] += extra * fp * f[q];
            }
        }
    }
    for p in 0..k {
        m[p * k + p] += lambda;
    }
    if let Some(prior) = prior {
        for p in 0..k {
            rhs[p] += lambda * prior[p];
        }
    }
    cholesky_solve(&mut m, &mut rhs, k)?;
    Ok(rhs)
}

/// Exact minimizer of the objective over `u_i` with `V` held fixed.
pub fn annotator_update(
    v: &Array2<f64>,
    v_gram: &Array2<f64>,
    observed: &[(usize, f64)],
    hyper: &CtrHyperparams,
) -> Result<Vec<f64>> {
    ridge_row(v.view(), v_gram, observed, hyper, hyper.lambda_u, None)
}

/// Exact minimizer of the objective over `v_j` with `U` held fixed.
pub fn item_update(
    u: &Array2<f64>,
    u_gram: &Array2<f64>,
    observed: &[(usize, f64)],
    theta_j: ArrayView1<f64>,
    hyper: &CtrHyperparams,
) -> Result<Vec<f64>> {
    ridge_row(u.view(), u_gram, observed, hyper, hyper.lambda_v, Some(theta_j))
}

/// Regularized confidence-weighted squared loss.
///
/// The unobserved part uses `b * sum_ij (u_i . v_j)^2 = b * <U^T U, V^T V>`
/// and observed cells are corrected individually, so the cost is
/// `O((A + D) K^2 + nnz K)`.
pub fn objective(
    u: &Array2<f64>,
    v: &Array2<f64>,
    theta: &Array2<f64>,
    ratings: &Ratings,
    hyper: &CtrHyperparams,
) -> f64 {
    let background: f64 = gram(u).iter().zip(gram(v).iter()).map(|(x, y)| x * y).sum();
    let mut loss = hyper.b * background;
    for i in 0..ratings.n_annotators {
        let ui = u.row(i);
        for &(j, r) in ratings.annotator_row(i) {
            let p = ui.dot(&v.row(j));
            loss += hyper.a * (r - p) * (r - p) - hyper.b * p * p;
        }
    }
    let reg_u: f64 = u.iter().map(|x| x * x).sum();
    let reg_v: f64 = v.iter().zip(theta.iter()).map(|(x, t)| (x - t) * (x - t)).sum();
    loss + hyper.lambda_u * reg_u + hyper.lambda_v * reg_v
}

/// Fits CTR with `U = 0`, `V = theta` initialization and
/// `hyper.em_iterations` full alternating sweeps.
pub fn fit_ctr(
    lda: &LdaModel,
    ratings: &Ratings,
    annotator_ids: Vec<String>,
    hyper: &CtrHyperparams,
) -> Result<CtrModel> {
    hyper.validate()?;
    if hyper.latent_dim != lda.topics {
        return Err(Error::Config(format!(
            "latent_dim ({}) must equal the LDA topic count ({})",
            hyper.latent_dim, lda.topics
        )));
    }
    if ratings.n_documents != lda.n_documents() {
        return Err(Error::DimensionMismatch {
            expected: lda.n_documents(),
            actual: ratings.n_documents,
            context: "rating columns vs LDA documents",
        });
    }
    if annotator_ids.len() != ratings.n_annotators {
        return Err(Error::DimensionMismatch {
            expected: ratings.n_annotators,
            actual: annotator_ids.len(),
            context: "annotator ids vs rating rows",
        });
    }
    let k = lda.topics;
    let theta = theta_matrix(lda);
    let mut u = Array2::<f64>::zeros((ratings.n_annotators, k));
    let mut v = theta.clone();
    let mut trace = Vec::with_capacity(hyper.em_iterations);

    for _ in 0..hyper.em_iterations {
        let v_gram = gram(&v);
        for i in 0..ratings.n_annotators {
            let row = annotator_update(&v, &v_gram, ratings.annotator_row(i), hyper)?;
            u.row_mut(i).assign(&ArrayView1::from(&row));
        }
        let u_gram = gram(&u);
        for j in 0..ratings.n_documents {
            let row = item_update(&u, &u_gram, ratings.document_column(j), theta.row(j), hyper)?;
            v.row_mut(j).assign(&ArrayView1::from(&row));
        }
        trace.push(objective(&u, &v, &theta, ratings, hyper));
    }

    Ok(CtrModel {
        annotator_ids,
        u,
        v,
        lda: lda.clone(),
        hyper: hyper.clone(),
        ratings: ratings.clone(),
        objective_trace: trace,
    })
}

/// Fits LDA on the dataset texts (whitespace tokens) and CTR on its labels.
pub fn fit_ctr_on_dataset(
    dataset: &Dataset,
    hyper: &CtrHyperparams,
    lda_iterations: usize,
    seed: u64,
) -> Result<CtrModel> {
    let corpus: Vec<Vec<&str>> = dataset
        .entries
        .iter()
        .map(|e| e.text.split_whitespace().collect())
        .collect();
    let mut cfg = LdaConfig::new(hyper.latent_dim);
    cfg.iterations = lda_iterations;
    cfg.seed = seed;
    let lda = fit_lda(&corpus, &cfg)?;
    let ratings = Ratings::from_dataset(dataset);
    fit_ctr(&lda, &ratings, dataset.annotator_ids.clone(), hyper)
}

impl CtrModel {
    pub fn latent_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn theta(&self) -> Array2<f64> {
        theta_matrix(&self.lda)
    }

    pub fn objective(&self) -> f64 {
        objective(&self.u, &self.v, &self.theta(), &self.ratings, &self.hyper)
    }

    pub fn annotator_vector(&self, annotator_id: &str) -> Result<Vec<f64>> {
        let i = self
            .annotator_ids
            .iter()
            .position(|a| a == annotator_id)
            .ok_or_else(|| Error::UnknownAnnotator(annotator_id.to_owned()))?;
        Ok(self.u.row(i).to_vec())
    }

    /// Serializable form; `include_topics` controls whether phi and theta
    /// are written.
    pub fn to_file(&self, include_topics: bool) -> EmbeddingFile {
        let nested = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        EmbeddingFile {
            source: EmbeddingSource::Ctr,
            dim: self.latent_dim(),
            frozen: true,
            annotator_ids: self.annotator_ids.clone(),
            vectors: nested(&self.u),
            projection: None,
            ctr: Some(crate::annotator::CtrDetails {
                k: self.latent_dim(),
                hyperparameters: self.hyper.clone(),
                v: nested(&self.v),
                vocabulary: self.lda.vocabulary.clone(),
                phi: include_topics.then(|| self.lda.phi.clone()),
                theta: include_topics.then(|| self.lda.theta.clone()),
                objective_trace: self.objective_trace.clone(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_theta(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<Vec<f64>> {
        (0..d)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }

    fn lda_stub(theta: Vec<Vec<f64>>) -> LdaModel {
        let k = theta[0].len();
        LdaModel {
            topics: k,
            vocabulary: vec!["w".into()],
            phi: vec![vec![1.0]; k],
            theta,
            alpha: 1.0,
            beta: 0.01,
        }
    }

    fn random_ratings(rng: &mut ChaCha8Rng, a: usize, d: usize, density: f64) -> Ratings {
        let mut triples = Vec::new();
        for i in 0..a {
            for j in 0..d {
                if rng.gen::<f64>() < density {
                    triples.push((i, j, f64::from(u8::from(rng.gen::<bool>()))));
                }
            }
        }
        Ratings::from_triples(a, d, triples).unwrap()
    }

    fn naive_objective(m: &CtrModel) -> f64 {
        let theta = m.theta();
        let h = &m.hyper;
        let mut total = 0.0;
        for i in 0..m.u.nrows() {
            for j in 0..m.v.nrows() {
                let (c, r) = match m.ratings.value(i, j) {
                    Some(r) => (h.a, r),
                    None => (h.b, 0.0),
                };
                let mut p = 0.0;
                for k in 0..m.u.ncols() {
                    p += m.u[[i, k]] * m.v[[j, k]];
                }
                total += c * (r - p) * (r - p);
            }
        }
        for x in m.u.iter() {
            total += h.lambda_u * x * x;
        }
        for j in 0..m.v.nrows() {
            for k in 0..m.v.ncols() {
                let d = m.v[[j, k]] - theta[[j, k]];
                total += h.lambda_v * d * d;
            }
        }
        total
    }

    fn hyper(k: usize, iters: usize) -> CtrHyperparams {
        CtrHyperparams {
            em_iterations: iters,
            latent_dim: k,
            ..CtrHyperparams::default()
        }
    }

    #[test]
    fn objective_at_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lda = lda_stub(random_theta(&mut rng, 12, 3));
        let ratings = random_ratings(&mut rng, 4, 12, 0.5);
        let ids = (0..4).map(|i| i.to_string()).collect();
        let mut m = fit_ctr(&lda, &ratings, ids, &hyper(3, 0)).unwrap();
        m.u.fill(0.0);
        m.v = m.theta();
        let positives: f64 = (0..4)
            .flat_map(|i| ratings.annotator_row(i).iter().map(|&(_, r)| r * r))
            .sum();
        assert!((m.objective() - m.hyper.a * positives).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..5 {
            let lda = lda_stub(random_theta(&mut rng, 9, 4));
            let ratings = random_ratings(&mut rng, 5, 9, 0.4);
            let ids = (0..5).map(|i| i.to_string()).collect();
            let mut m = fit_ctr(&lda, &ratings, ids, &hyper(4, 2)).unwrap();
            m.u.mapv_inplace(|_| rng.gen::<f64>() - 0.5);
            m.v.mapv_inplace(|_| rng.gen::<f64>() - 0.5);
            let fast = m.objective();
            let slow = naive_objective(&m);
            assert!(fast >= 0.0);
            assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0), "trial {trial}: {fast} vs {slow}");
        }
    }

    #[test]
    fn identical_rows_give_identical_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lda = lda_stub(random_theta(&mut rng, 10, 3));
        let mut triples = Vec::new();
        for j in 0..10 {
            if j % 3 != 0 {
                let r = f64::from(u8::from(j % 2 == 0));
                triples.push((0, j, r));
                triples.push((1, j, r));
            }
            if j % 2 == 0 {
                triples.push((2, j, 1.0));
            }
        }
        let ratings = Ratings::from_triples(3, 10, triples).unwrap();
        let ids = vec!["x".into(), "y".into(), "z".into()];
        let m = fit_ctr(&lda, &ratings, ids, &hyper(3, 20)).unwrap();
        assert_eq!(m.annotator_vector("x").unwrap(), m.annotator_vector("y").unwrap());
        assert_ne!(m.annotator_vector("x").unwrap(), m.annotator_vector("z").unwrap());
        assert!(matches!(m.annotator_vector("w"), Err(Error::UnknownAnnotator(_))));
    }

    #[test]
    fn scalar_fixed_point_matches_root_find() {
        // A = D = K = 1 with r = 1 observed and theta = 1: the fixed point
        // satisfies u = v / (v^2 + lu) and v = (u + lv) / (u^2 + lv).
        let h = CtrHyperparams {
            latent_dim: 1,
            em_iterations: 200,
            ..CtrHyperparams::default()
        };
        let (lu, lv) = (h.lambda_u, h.lambda_v);
        let g = |v: f64| {
            let u = v / (v * v + lu);
            v - (u + lv) / (u * u + lv)
        };
        let (mut lo, mut hi) = (0.5, 1.5);
        assert!(g(lo) < 0.0 && g(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v_star = 0.5 * (lo + hi);
        let u_star = v_star / (v_star * v_star + lu);

        let ratings = Ratings::from_triples(1, 1, [(0, 0, 1.0)]).unwrap();
        let m = fit_ctr(&lda_stub(vec![vec![1.0]]), &ratings, vec!["a".into()], &h).unwrap();
        assert!((m.u[[0, 0]] - u_star).abs() < 1e-10, "{} vs {u_star}", m.u[[0, 0]]);
        assert!((m.v[[0, 0]] - v_star).abs() < 1e-10, "{} vs {v_star}", m.v[[0, 0]]);
    }

    #[test]
    fn trace_has_one_value_per_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lda = lda_stub(random_theta(&mut rng, 30, 5));
        let ratings = random_ratings(&mut rng, 6, 30, 0.3);
        let ids = (0..6).map(|i| i.to_string()).collect();
        let m = fit_ctr(&lda, &ratings, ids, &hyper(5, 40)).unwrap();
        assert_eq!(m.objective_trace.len(), 40);
        for w in m.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lda = lda_stub(random_theta(&mut rng, 4, 2));
        let ratings = random_ratings(&mut rng, 2, 4, 0.5);
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let mut h = hyper(2, 1);
        h.b = 2.0;
        assert!(fit_ctr(&lda, &ratings, ids.clone(), &h).is_err());
        let h = hyper(3, 1);
        assert!(fit_ctr(&lda, &ratings, ids.clone(), &h).is_err());
        let mut h = hyper(2, 1);
        h.lambda_u = 0.0;
        assert!(fit_ctr(&lda, &ratings, ids, &h).is_err());
    }

    #[test]
    fn ratings_reject_out_of_range_and_duplicates() {
        assert!(Ratings::from_triples(2, 2, [(2, 0, 1.0)]).is_err());
        assert!(Ratings::from_triples(2, 2, [(0, 1, 1.0), (0, 1, 0.0)]).is_err());
    }
}
