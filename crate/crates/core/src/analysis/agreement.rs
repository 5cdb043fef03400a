use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::cluster::kmeans;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};

/// 2x2 co-annotation counts, indexed `[label of a][label of b]`.
type Table = [[usize; 2]; 2];

fn kappa_from_table(t: &Table) -> Option<f64> {
    let n = (t[0][0] + t[0][1] + t[1][0] + t[1][1]) as f64;
    if n == 0.0 {
        return None;
    }
    let p_o = (t[0][0] + t[1][1]) as f64 / n;
    let pa = (t[1][0] + t[1][1]) as f64 / n;
    let pb = (t[0][1] + t[1][1]) as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if 1.0 - p_e < 1e-12 {
        // Both annotators used a single, shared label: perfect agreement.
        return Some(1.0);
    }
    Some(((p_o - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
}

/// Cohen's kappa over two aligned label sequences.
pub fn cohen_kappa_labels(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut t: Table = [[0; 2]; 2];
    for (x, y) in a.iter().zip(b) {
        t[x.index()][y.index()] += 1;
    }
    kappa_from_table(&t).ok_or_else(|| Error::EmptyDataset("no labels to compare".into()))
}

/// Cohen's kappa between two annotators over the entries both labelled.
pub fn cohen_kappa(a: &str, b: &str, data: &Dataset) -> Result<f64> {
    let mut t: Table = [[0; 2]; 2];
    for e in &data.entries {
        if let (Some(x), Some(y)) = (e.labels.get(a), e.labels.get(b)) {
            t[x.index()][y.index()] += 1;
        }
    }
    kappa_from_table(&t).ok_or_else(|| Error::NoOverlap(a.to_owned(), b.to_owned()))
}

/// `1 - cos(a, b)`, in `[0, 2]`. A zero vector is treated as orthogonal to
/// everything.
pub fn cosine_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - a.dot(&b) / (na * nb)).clamp(0.0, 2.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub annotator_a: String,
    pub annotator_b: String,
    pub kappa: f64,
    pub cosine_distance: f64,
    pub overlap_count: usize,
}

/// Correlations restricted to pairs inside one cluster or across clusters.
/// `None` where fewer than three pairs exist or the correlation is undefined.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterCorrelation {
    pub within: Option<f64>,
    pub between: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pairs: Vec<PairRecord>,
    /// Pearson r between kappa and cosine distance over all pairs.
    pub pearson_r: f64,
    pub clusters: BTreeMap<String, usize>,
    /// Extension beyond the single global r.
    pub cluster_correlation: ClusterCorrelation,
}

impl AgreementReport {
    /// Least-squares line `kappa = slope * distance + intercept`.
    pub fn fitted_line(&self) -> (f64, f64) {
        let n = self.pairs.len() as f64;
        let mx = self.pairs.iter().map(|p| p.cosine_distance).sum::<f64>() / n;
        let my = self.pairs.iter().map(|p| p.kappa).sum::<f64>() / n;
        let sxy: f64 = self.pairs.iter().map(|p| (p.cosine_distance - mx) * (p.kappa - my)).sum();
        let sxx: f64 = self.pairs.iter().map(|p| (p.cosine_distance - mx).powi(2)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        (slope, my - slope * mx)
    }
}

/// Fails unless some entry carries labels from two or more annotators.
pub fn check_co_annotation(data: &Dataset) -> Result<()> {
    if data.entries.iter().any(|e| e.labels.len() >= 2) {
        Ok(())
    } else {
        Err(Error::AnalysisUnavailable(
            "every instance has a single annotator, so pairwise agreement is undefined".into(),
        ))
    }
}

fn correlation_of<'a>(pairs: impl Iterator<Item = &'a PairRecord>) -> Option<f64> {
    let (k, d): (Vec<f64>, Vec<f64>) = pairs.map(|p| (p.kappa, p.cosine_distance)).unzip();
    if k.len() < 3 {
        return None;
    }
    pearson(&k, &d).ok()
}

/// Kappa and cosine distance for every co-annotating pair of the annotators
/// in `ids` (rows of `vectors`), their Pearson correlation, and a k-means
/// partition of the embeddings.
pub fn kappa_cosine_correlation(
    ids: &[String],
    vectors: &Array2<f64>,
    data: &Dataset,
    k: usize,
    seed: u64,
) -> Result<AgreementReport> {
    if ids.len() != vectors.nrows() {
        return Err(Error::DimensionMismatch {
            expected: ids.len(),
            actual: vectors.nrows(),
            context: "annotator ids vs embedding rows",
        });
    }
    check_co_annotation(data)?;
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut tables: BTreeMap<(usize, usize), Table> = BTreeMap::new();
    for e in &data.entries {
        let labelled: Vec<(usize, Label)> = e
            .labels
            .iter()
            .filter_map(|(a, &l)| index.get(a.as_str()).map(|&i| (i, l)))
            .collect();
        for (x, &(i, li)) in labelled.iter().enumerate() {
            for &(j, lj) in &labelled[x + 1..] {
                let (key, la, lb) = if i < j { ((i, j), li, lj) } else { ((j, i), lj, li) };
                tables.entry(key).or_insert([[0; 2]; 2])[la.index()][lb.index()] += 1;
            }
        }
    }
    let pairs: Vec<PairRecord> = tables
        .iter()
        .map(|(&(i, j), t)| PairRecord {
            annotator_a: ids[i].clone(),
            annotator_b: ids[j].clone(),
            kappa: kappa_from_table(t).expect("non-empty table"),
            cosine_distance: cosine_distance(vectors.row(i), vectors.row(j)),
            overlap_count: t.iter().flatten().sum(),
        })
        .collect();
    if pairs.len() < 3 {
        return Err(Error::UndefinedCorrelation("fewer than 3 co-annotating pairs"));
    }
    let kappas: Vec<f64> = pairs.iter().map(|p| p.kappa).collect();
    let dists: Vec<f64> = pairs.iter().map(|p| p.cosine_distance).collect();
    let pearson_r = pearson(&kappas, &dists)?;

    let clustering = kmeans(vectors, k.min(ids.len()), seed)?;
    let clusters: BTreeMap<String, usize> = ids.iter().cloned().zip(clustering.assignments).collect();
    let same = |p: &&PairRecord| clusters[&p.annotator_a] == clusters[&p.annotator_b];
    let cluster_correlation = ClusterCorrelation {
        within: correlation_of(pairs.iter().filter(same)),
        between: correlation_of(pairs.iter().filter(|p| !same(p))),
    };
    Ok(AgreementReport {
        pairs,
        pearson_r,
        clusters,
        cluster_correlation,
    })
}

/// Global r of several embedding types side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub pearson_r: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparativeReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparativeReport {
    pub fn push(&mut self, name: impl Into<String>, report: &AgreementReport) {
        self.rows.push(ComparisonRow {
            name: name.into(),
            pearson_r: report.pearson_r,
            n_pairs: report.pairs.len(),
        });
    }

    /// The row with the most negative correlation.
    pub fn strongest_negative(&self) -> Option<&ComparisonRow> {
        self.rows.iter().min_by(|a, b| a.pearson_r.total_cmp(&b.pearson_r))
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>10} {:>8}\n", "embedding", "pearson_r", "pairs");
        for r in &self.rows {
            out.push_str(&format!("{:<24} {:>10.4} {:>8}\n", r.name, r.pearson_r, r.n_pairs));
        }
        out
    }
}
