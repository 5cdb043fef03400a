//! Annotator embedding sets: CTR latents, raw annotation history with a
//! trainable linear reduction, and end-to-end learnt vectors.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctr::{CtrHyperparams, CtrModel};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Ctr,
    History,
    Learnt,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Ctr => "ctr",
            EmbeddingSource::History => "history",
            EmbeddingSource::Learnt => "learnt",
        })
    }
}

impl FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctr" => Ok(EmbeddingSource::Ctr),
            "history" => Ok(EmbeddingSource::History),
            "learnt" | "learned" => Ok(EmbeddingSource::Learnt),
            other => Err(Error::Config(format!("unknown embedding source {other:?}"))),
        }
    }
}

/// Annotator vectors keyed by annotator id.
///
/// For `ctr` and `learnt` sets, `vectors` holds the embeddings directly
/// (`A x dim`). For `history` sets, `vectors` holds the raw `{-1, 0, +1}`
/// history rows (`A x N`) and `projection` (`N x dim`, bias-free) maps them
/// to the embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatorEmbeddingSet {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub annotator_ids: Vec<String>,
    pub vectors: Array2<f64>,
    pub projection: Option<Array2<f64>>,
    pub frozen: bool,
}

impl AnnotatorEmbeddingSet {
    pub fn len(&self) -> usize {
        self.annotator_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotator_ids.is_empty()
    }

    pub fn index_of(&self, annotator_id: &str) -> Result<usize> {
        self.annotator_ids
            .iter()
            .position(|a| a == annotator_id)
            .ok_or_else(|| Error::UnknownAnnotator(annotator_id.to_owned()))
    }

    /// Embedding of one annotator (projected for history sets).
    pub fn vector(&self, annotator_id: &str) -> Result<Vec<f64>> {
        let i = self.index_of(annotator_id)?;
        Ok(self.project(self.vectors.row(i)))
    }

    fn project(&self, row: ArrayView1<f64>) -> Vec<f64> {
        match &self.projection {
            Some(p) => row.dot(p).to_vec(),
            None => row.to_vec(),
        }
    }

    /// All embeddings as an `A x dim` matrix.
    pub fn effective_vectors(&self) -> Array2<f64> {
        match &self.projection {
            Some(p) => self.vectors.dot(p),
            None => self.vectors.clone(),
        }
    }

    pub fn from_ctr(model: &CtrModel, frozen: bool) -> Self {
        AnnotatorEmbeddingSet {
            source: EmbeddingSource::Ctr,
            dim: model.latent_dim(),
            annotator_ids: model.annotator_ids.clone(),
            vectors: model.u.clone(),
            projection: None,
            frozen,
        }
    }

    pub fn to_file(&self) -> EmbeddingFile {
        EmbeddingFile {
            source: self.source,
            dim: self.dim,
            frozen: self.frozen,
            annotator_ids: self.annotator_ids.clone(),
            vectors: nested(&self.vectors),
            projection: self.projection.as_ref().map(nested),
            ctr: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EmbeddingFile::load(path)?.into_set()
    }
}

fn nested(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_nested(rows: &[Vec<f64>], context: &'static str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            actual: bad.len(),
            context,
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), ncols), flat).expect("checked shape"))
}

/// CTR-specific fields of an embedding file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtrDetails {
    pub k: usize,
    pub hyperparameters: CtrHyperparams,
    pub v: Vec<Vec<f64>>,
    pub vocabulary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<Vec<f64>>>,
    pub objective_trace: Vec<f64>,
}

/// On-disk JSON schema shared by every embedding source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub frozen: bool,
    pub annotator_ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctr: Option<CtrDetails>,
}

impl EmbeddingFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn into_set(self) -> Result<AnnotatorEmbeddingSet> {
        let vectors = from_nested(&self.vectors, "embedding vectors")?;
        if vectors.nrows() != self.annotator_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: self.annotator_ids.len(),
                actual: vectors.nrows(),
                context: "embedding rows vs annotator ids",
            });
        }
        let projection = self
            .projection
            .as_deref()
            .map(|p| from_nested(p, "history projection"))
            .transpose()?;
        let out_dim = match &projection {
            Some(p) => {
                if p.nrows() != vectors.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: vectors.ncols(),
                        actual: p.nrows(),
                        context: "projection rows vs history length",
                    });
                }
                p.ncols()
            }
            None => vectors.ncols(),
        };
        if out_dim != self.dim && !self.annotator_ids.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: out_dim,
                context: "embedding dim",
            });
        }
        if self.source == EmbeddingSource::History && projection.is_none() {
            return Err(Error::Config("history embeddings need a projection".into()));
        }
        Ok(AnnotatorEmbeddingSet {
            source: self.source,
            dim: self.dim,
            annotator_ids: self.annotator_ids,
            vectors,
            projection,
            frozen: self.frozen,
        })
    }
}

/// `A x N` matrix over the training entries: `+1` for a positive label,
/// `-1` for a negative one and `0` where the annotator did not label the
/// entry. Rows follow `train.annotator_ids`, columns follow entry order.
pub fn history_matrix(train: &Dataset) -> Array2<f64> {
    let index = train.annotator_index();
    let mut m = Array2::zeros((train.annotator_ids.len(), train.len()));
    for (n, entry) in train.entries.iter().enumerate() {
        for (a, l) in &entry.labels {
            m[[index[a.as_str()], n]] = match l {
                Label::Positive => 1.0,
                Label::Negative => -1.0,
            };
        }
    }
    m
}

/// History embeddings with a seeded `N -> hidden_size` projection whose
/// weights are drawn from `N(0, 1/N)`.
pub fn build_history_embeddings(
    annotator_ids: Vec<String>,
    matrix: Array2<f64>,
    hidden_size: usize,
    frozen: bool,
    seed: u64,
) -> Result<AnnotatorEmbeddingSet> {
    if hidden_size == 0 {
        return Err(Error::Config("hidden_size must be positive".into()));
    }
    if matrix.nrows() != annotator_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: annotator_ids.len(),
            actual: matrix.nrows(),
            context: "history rows vs annotator ids",
        });
    }
    let n = matrix.ncols().max(1);
    let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection = Array2::from_shape_simple_fn((matrix.ncols(), hidden_size), || normal.sample(&mut rng));
    Ok(AnnotatorEmbeddingSet {
        source: EmbeddingSource::History,
        dim: hidden_size,
        annotator_ids,
        vectors: matrix,
        projection: Some(projection),
        frozen,
    })
}

/// Randomly initialized `N(0, 1)` vectors, always trainable.
pub fn build_learnt_embeddings(
    annotator_ids: Vec<String>,
    hidden_size: usize,
    seed: u64,
) -> Result<AnnotatorEmbeddingSet> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = annotator_ids.iter().find(|a| !seen.insert(a.as_str())) {
        return Err(Error::Config(format!("duplicate annotator id {dup:?}")));
    }
    if hidden_size == 0 {
        return Err(Error::Config("hidden_size must be positive".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = Array2::from_shape_simple_fn((annotator_ids.len(), hidden_size), || normal.sample(&mut rng));
    Ok(AnnotatorEmbeddingSet {
        source: EmbeddingSource::Learnt,
        dim: hidden_size,
        annotator_ids,
        vectors,
        projection: None,
        frozen: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AnnotationRecord, Dataset};

    fn rec(i: &str, a: &str, positive: bool) -> AnnotationRecord {
        AnnotationRecord {
            instance_id: i.into(),
            text: "t".into(),
            annotator_id: a.into(),
            label: Label::from_bool(positive),
            split: None,
        }
    }

    fn small() -> Dataset {
        Dataset::from_records(vec![
            rec("i0", "a", true),
            rec("i0", "b", true),
            rec("i1", "b", false),
            rec("i1", "c", false),
            rec("i2", "a", false),
            rec("i2", "b", false),
        ])
        .unwrap()
    }

    #[test]
    fn history_rows() {
        let d = small();
        let m = history_matrix(&d);
        assert_eq!(d.annotator_ids, vec!["a", "b", "c"]);
        assert_eq!(m.row(0).to_vec(), vec![1.0, 0.0, -1.0]);
        assert_eq!(m.row(1).to_vec(), vec![1.0, -1.0, -1.0]);
        assert_eq!(m.row(2).to_vec(), vec![0.0, -1.0, 0.0]);
        for (i, a) in d.annotator_ids.iter().enumerate() {
            let nnz = m.row(i).iter().filter(|&&x| x != 0.0).count();
            let count = d.entries.iter().filter(|e| e.labels.contains_key(a)).count();
            assert_eq!(nnz, count);
        }
    }

    #[test]
    fn history_projection_properties() {
        let ids: Vec<String> = vec!["z".into(), "p".into(), "q".into()];
        let mut m = Array2::zeros((3, 4));
        m.row_mut(1).assign(&ArrayView1::from(&[1.0, -1.0, 0.0, 1.0]));
        m.row_mut(2).assign(&ArrayView1::from(&[1.0, -1.0, 0.0, 1.0]));
        let set = build_history_embeddings(ids.clone(), m.clone(), 8, true, 5).unwrap();
        assert_eq!(set.vector("z").unwrap(), vec![0.0; 8]);
        assert_eq!(set.vector("p").unwrap(), set.vector("q").unwrap());
        assert_eq!(set.vector("p").unwrap().len(), 8);
        let again = build_history_embeddings(ids.clone(), m.clone(), 8, false, 5).unwrap();
        assert_eq!(set.projection, again.projection);
        assert!(set.frozen && !again.frozen);
        let other = build_history_embeddings(ids, m, 8, true, 6).unwrap();
        assert_ne!(set.projection, other.projection);
    }

    #[test]
    fn history_projection_variance() {
        let n = 400;
        let set = build_history_embeddings(vec!["a".into()], Array2::zeros((1, n)), 64, true, 1).unwrap();
        let p = set.projection.unwrap();
        let mean = p.mean().unwrap();
        let var = p.mapv(|x| (x - mean) * (x - mean)).mean().unwrap();
        assert!(mean.abs() < 0.01 / (n as f64).sqrt() * 20.0);
        assert!((var * n as f64 - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn learnt_vectors() {
        let ids: Vec<String> = (0..20).map(|i| format!("a{i}")).collect();
        let set = build_learnt_embeddings(ids.clone(), 64, 3).unwrap();
        assert_eq!(set.vectors.dim(), (20, 64));
        assert!(!set.frozen);
        for i in 0..20 {
            for j in (i + 1)..20 {
                assert_ne!(set.vectors.row(i), set.vectors.row(j));
            }
        }
        assert_eq!(set, build_learnt_embeddings(ids, 64, 3).unwrap());
        assert!(build_learnt_embeddings(vec!["a".into(), "a".into()], 4, 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let set = build_history_embeddings(vec!["a".into(), "b".into()], history_matrix(&small()).slice(ndarray::s![0..2, ..]).to_owned(), 3, true, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        set.save(&path).unwrap();
        assert_eq!(AnnotatorEmbeddingSet::load(&path).unwrap(), set);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"source\":\"history\""));
    }

    #[test]
    fn unknown_annotator() {
        let set = build_learnt_embeddings(vec!["a".into()], 2, 0).unwrap();
        assert!(matches!(set.vector("b"), Err(Error::UnknownAnnotator(_))));
    }
}
