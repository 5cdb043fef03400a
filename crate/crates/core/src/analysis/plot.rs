use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::agreement::AgreementReport;
use super::pca::Pca;
use crate::error::{Error, Result};

/// Machine-readable companion of the PCA scatter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaFigure {
    pub annotator_ids: Vec<String>,
    pub coordinates: Vec<Vec<f64>>,
    pub variance_ratios: Vec<f64>,
    pub clusters: BTreeMap<String, usize>,
}

/// "PC1 (43.2%)"; components beyond the projection read "n/a".
pub fn axis_label(pca: &Pca, component: usize) -> String {
    match pca.variance_ratios.get(component) {
        Some(r) => format!("PC{} ({:.1}%)", component + 1, r * 100.0),
        None => format!("PC{} (n/a)", component + 1),
    }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn padded_range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return -1.0..1.0;
    }
    let pad = ((hi - lo) * 0.1).max(1e-3);
    (lo - pad)..(hi + pad)
}

const PALETTE: [RGBColor; 6] = [BLUE, RED, GREEN, MAGENTA, CYAN, BLACK];

fn pca_svg(path: &Path, ids: &[String], pca: &Pca, clusters: &BTreeMap<String, usize>, title: &str) -> Result<()> {
    let point = |i: usize| {
        let x = pca.coordinates[[i, 0]];
        let y = if pca.coordinates.ncols() > 1 { pca.coordinates[[i, 1]] } else { 0.0 };
        (x, y)
    };
    let xs = padded_range((0..ids.len()).map(|i| point(i).0));
    let ys = padded_range((0..ids.len()).map(|i| point(i).1));
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(xs, ys)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(axis_label(pca, 0))
        .y_desc(axis_label(pca, 1))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(ids.iter().enumerate().map(|(i, id)| {
            let colour = PALETTE[clusters.get(id).copied().unwrap_or(0) % PALETTE.len()];
            EmptyElement::at(point(i))
                + Circle::new((0, 0), 4, colour.filled())
                + Text::new(id.clone(), (6, -6), ("sans-serif", 12))
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn kappa_svg(path: &Path, report: &AgreementReport, title: &str) -> Result<()> {
    let xs = padded_range(report.pairs.iter().map(|p| p.cosine_distance));
    let ys = padded_range(report.pairs.iter().map(|p| p.kappa));
    let (slope, intercept) = report.fitted_line();
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title} (r = {:.4})", report.pearson_r), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(xs.clone(), ys)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("cosine distance")
        .y_desc("Cohen's kappa")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(
            report
                .pairs
                .iter()
                .map(|p| Circle::new((p.cosine_distance, p.kappa), 3, BLUE.filled())),
        )
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            [xs.start, xs.end].map(|x| (x, slope * x + intercept)),
            &RED,
        ))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Writes `{prefix}pca.svg`, `{prefix}pca.json`, `{prefix}kappa_cosine.svg`
/// and `{prefix}kappa_cosine.json` under `out_dir`, creating it if needed.
pub fn emit_plots(
    report: &AgreementReport,
    ids: &[String],
    pca: &Pca,
    out_dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let title = prefix.trim_end_matches(['_', '-']);
    let title = if title.is_empty() { "annotator embeddings" } else { title };
    let pca_svg_path = out_dir.join(format!("{prefix}pca.svg"));
    let pca_json_path = out_dir.join(format!("{prefix}pca.json"));
    let kappa_svg_path = out_dir.join(format!("{prefix}kappa_cosine.svg"));
    let kappa_json_path = out_dir.join(format!("{prefix}kappa_cosine.json"));

    pca_svg(&pca_svg_path, ids, pca, &report.clusters, title)?;
    let figure = PcaFigure {
        annotator_ids: ids.to_vec(),
        coordinates: pca.coordinates.outer_iter().map(|r| r.to_vec()).collect(),
        variance_ratios: pca.variance_ratios.clone(),
        clusters: report.clusters.clone(),
    };
    fs::write(&pca_json_path, serde_json::to_string_pretty(&figure)?)?;
    kappa_svg(&kappa_svg_path, report, title)?;
    fs::write(&kappa_json_path, serde_json::to_string_pretty(report)?)?;
    Ok(vec![pca_svg_path, pca_json_path, kappa_svg_path, kappa_json_path])
}
