//! Evaluation protocols and report tables.
//!
//! Every row has one RMSE per section plus a pooled `Total`, always in mm.
//! The total is `√(Σ SSE / Σ count)` over all sections and samples, not a mean
//! of the per-section values.

mod report;
mod study;

pub use report::{emit_report, parse_report_csv, read_report_csv, render_csv, render_markdown, ReportFormat};
pub use study::{image_case_study, CaseStudy, CaseStudyConfig};

use thiserror::Error;

use crate::hullgeom::{
    interp_y_at_z, reconstruct_offsets, z_levels, ControlPolygon, GeomError, SectionOffsets, COMPARE_LEVELS,
};
use crate::model::ModelParams;
use crate::synthgen::{Dataset, Split};
use crate::trainer::predict_mm;

/// Points per reconstructed curve before interpolation to z-levels.
pub const DEFAULT_RECONSTRUCT_POINTS: usize = 500;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Pipeline(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub sections: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub title: String,
    pub sections: usize,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn new(title: impl Into<String>, sections: usize) -> Self {
        Self { title: title.into(), sections, rows: Vec::new() }
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Per-section squared-error sums and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseAccumulator {
    pub sse: Vec<f64>,
    pub count: Vec<usize>,
}

impl RmseAccumulator {
    pub fn new(sections: usize) -> Self {
        Self { sse: vec![0.0; sections], count: vec![0; sections] }
    }

    pub fn add(&mut self, section: usize, diff: f64) {
        self.sse[section] += diff * diff;
        self.count[section] += 1;
    }

    pub fn row(&self, name: impl Into<String>) -> ReportRow {
        let rmse = |sse: f64, n: usize| if n == 0 { 0.0 } else { (sse / n as f64).sqrt() };
        let sections = self.sse.iter().zip(&self.count).map(|(&s, &n)| rmse(s, n)).collect();
        let total = rmse(self.sse.iter().sum(), self.count.iter().sum());
        ReportRow { name: name.into(), sections, total }
    }
}

/// RMSE of predicted against true control points (both in mm), per section
/// over its `2(n+1)` entries and all samples.
pub fn control_point_rmse(name: &str, preds: &[Vec<f64>], labels: &[Vec<f64>], sections: usize) -> Result<ReportRow> {
    if preds.len() != labels.len() {
        return Err(EvalError::Length(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut acc = RmseAccumulator::new(sections);
    for (p, l) in preds.iter().zip(labels) {
        if p.len() != l.len() || sections == 0 || l.len() % sections != 0 {
            return Err(EvalError::Length(format!("prediction {} vs label {} in {sections} sections", p.len(), l.len())));
        }
        let per = l.len() / sections;
        for (i, (a, b)) in p.iter().zip(l).enumerate() {
            acc.add(i / per, a - b);
        }
    }
    Ok(acc.row(name))
}

/// Squared y differences at the truth section's z-levels between the curve
/// of `pred` (sampled at `points` parameters) and the truth offsets.
pub fn section_offset_errors(pred: &ControlPolygon, truth: &SectionOffsets, points: usize) -> Result<Vec<f64>> {
    let i = truth.section_index();
    let recon = reconstruct_offsets(pred, points).map_err(|e| e.in_section(i))?;
    let levels = z_levels(truth, COMPARE_LEVELS).map_err(|e| e.in_section(i))?;
    Ok(levels
        .into_iter()
        .map(|z| interp_y_at_z(recon.points(), z) - interp_y_at_z(truth.points(), z))
        .collect())
}

/// Offset RMSE: reconstruct each predicted section, interpolate both curves
/// at 50 equally spaced heights of the truth section and compare half-breadths.
pub fn offset_rmse(
    name: &str,
    pred_controls: &[Vec<ControlPolygon>],
    truth: &[Vec<SectionOffsets>],
    points: usize,
) -> Result<ReportRow> {
    if pred_controls.len() != truth.len() {
        return Err(EvalError::Length(format!("{} predictions for {} hulls", pred_controls.len(), truth.len())));
    }
    let sections = truth.first().map_or(0, Vec::len);
    let mut acc = RmseAccumulator::new(sections);
    for (pred, hull) in pred_controls.iter().zip(truth) {
        if pred.len() != hull.len() || hull.len() != sections {
            return Err(EvalError::Length(format!("{} predicted sections for {}", pred.len(), hull.len())));
        }
        for (k, (p, t)) in pred.iter().zip(hull).enumerate() {
            for d in section_offset_errors(p, t, points)? {
                acc.add(k, d);
            }
        }
    }
    Ok(acc.row(name))
}

/// Splits a flat label/prediction vector into per-section polygons.
pub fn polygons_from_flat(values: &[f64], sections: usize) -> Result<Vec<ControlPolygon>> {
    if sections == 0 || !values.len().is_multiple_of(2 * sections) {
        return Err(EvalError::Length(format!("{} values do not split into {sections} sections", values.len())));
    }
    let per = values.len() / sections;
    Ok(values.chunks(per).enumerate().map(|(k, c)| ControlPolygon::from_flat(k, c)).collect())
}

/// Control-point and offset RMSE rows of `params` on one split of `dataset`.
/// With `points = None` the offsets use [`DEFAULT_RECONSTRUCT_POINTS`].
pub fn evaluate_params(
    name: &str,
    params: &ModelParams,
    dataset: &Dataset,
    split: Split,
    points: Option<usize>,
) -> Result<(ReportRow, ReportRow)> {
    let preds = predict_mm(params, dataset, split).map_err(|e| EvalError::Pipeline(e.to_string()))?;
    let samples = dataset.split(split);
    let labels: Vec<Vec<f64>> = samples.iter().map(|s| s.label.clone()).collect();
    let truth: Vec<Vec<SectionOffsets>> = samples.iter().map(|s| s.offsets.clone()).collect();
    let polygons = preds.iter().map(|p| polygons_from_flat(p, dataset.sections)).collect::<Result<Vec<_>>>()?;
    let cp = control_point_rmse(name, &preds, &labels, dataset.sections)?;
    let off = offset_rmse(name, &polygons, &truth, points.unwrap_or(DEFAULT_RECONSTRUCT_POINTS))?;
    Ok((cp, off))
}

/// B-spline floor row on one split: the stored labels scored against their own offsets.
pub fn dataset_floor_row(name: &str, dataset: &Dataset, split: Split, points: Option<usize>) -> Result<ReportRow> {
    let samples = dataset.split(split);
    let labels = samples.iter().map(|s| polygons_from_flat(&s.label, dataset.sections)).collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<SectionOffsets>> = samples.iter().map(|s| s.offsets.clone()).collect();
    bspline_floor_row(name, &labels, &truth, points.unwrap_or(DEFAULT_RECONSTRUCT_POINTS))
}

/// The protocol's floor: offset RMSE of the fitted labels themselves.
pub fn bspline_floor_row(name: &str, labels: &[Vec<ControlPolygon>], truth: &[Vec<SectionOffsets>], points: usize) -> Result<ReportRow> {
    offset_rmse(name, labels, truth, points)
}
