//! The four-image-case comparison: identical variants and training, only the
//! contour rendering differs.

use std::path::Path;

use super::{evaluate_params, EvalError, EvalReport, Result};
use crate::model::Variant;
use crate::synthgen::{build_dataset, load_dataset, CaseTag, DatasetConfig, Split};
use crate::trainer::{spec_for_dataset, train, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyConfig {
    /// Dataset settings shared by all cases; `case` is overridden per case.
    pub dataset: DatasetConfig,
    pub variant: Variant,
    pub width_factor: f64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudy {
    /// Control-point RMSE on the test split, one row per case.
    pub report: EvalReport,
    /// Case with the lowest total.
    pub best: CaseTag,
}

/// Builds one dataset per case under `root/<case>`, trains one model per case
/// and reports control-point RMSE on each test split.
pub fn image_case_study(root: &Path, config: &CaseStudyConfig) -> Result<CaseStudy> {
    let pipeline = |e: &dyn std::fmt::Display| EvalError::Pipeline(e.to_string());
    let mut report = EvalReport::new("Control point RMSE by input image case", 0);
    let mut best: Option<(f64, CaseTag)> = None;
    for case in CaseTag::ALL {
        let dir = root.join(case.label().to_lowercase());
        let ds_config = DatasetConfig { case, ..config.dataset.clone() };
        build_dataset(&dir, &ds_config).map_err(|e| pipeline(&e))?;
        let dataset = load_dataset(&dir).map_err(|e| pipeline(&e))?;
        let spec = spec_for_dataset(&dataset, config.variant, config.width_factor);
        let state = train(&dataset, &spec, &config.train).map_err(|e| pipeline(&e))?;
        let (cp, _) = evaluate_params(case.label(), &state.best_params, &dataset, Split::Test, None)?;
        report.sections = dataset.sections;
        if best.is_none_or(|(t, _)| cp.total < t) {
            best = Some((cp.total, case));
        }
        report.rows.push(cp);
    }
    Ok(CaseStudy { report, best: best.expect("four cases").1 })
}
