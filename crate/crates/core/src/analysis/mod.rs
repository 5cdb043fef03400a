//! Annotator-embedding analysis: PCA, k-means, Cohen's kappa and the
//! correlation between pairwise agreement and embedding distance.

mod agreement;
mod cluster;
mod pca;
mod plot;

use ndarray::Array2;

use crate::annotator::{AnnotatorEmbeddingSet, EmbeddingSource};
use crate::data::Dataset;
use crate::error::Result;

pub use agreement::{
    check_co_annotation, cohen_kappa, cohen_kappa_labels, cosine_distance, kappa_cosine_correlation, pearson,
    AgreementReport, ClusterCorrelation, ComparativeReport, ComparisonRow, PairRecord,
};
pub use cluster::{kmeans, Clustering, KMEANS_RESTARTS};
pub use pca::{pca_project, Pca};
pub use plot::{axis_label, emit_plots, PcaFigure};

pub const DEFAULT_CLUSTERS: usize = 2;

/// Vectors analysed for an embedding set. History sets are analysed as their
/// raw annotation rows; the projection is a training-time device.
pub fn analysis_vectors(set: &AnnotatorEmbeddingSet) -> Array2<f64> {
    match set.source {
        EmbeddingSource::History => set.vectors.clone(),
        _ => set.effective_vectors(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingAnalysis {
    pub annotator_ids: Vec<String>,
    pub pca: Pca,
    pub report: AgreementReport,
}

/// PCA to (at most) two components plus the agreement report.
pub fn analyze(set: &AnnotatorEmbeddingSet, data: &Dataset, k: usize, seed: u64) -> Result<EmbeddingAnalysis> {
    check_co_annotation(data)?;
    let vectors = analysis_vectors(set);
    let report = kappa_cosine_correlation(&set.annotator_ids, &vectors, data, k, seed)?;
    let n_components = 2.min(vectors.nrows()).min(vectors.ncols());
    let pca = pca_project(&vectors, n_components)?;
    Ok(EmbeddingAnalysis {
        annotator_ids: set.annotator_ids.clone(),
        pca,
        report,
    })
}
