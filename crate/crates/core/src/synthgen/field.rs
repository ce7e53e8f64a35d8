//! Surrogate pressure field. Not physics: a superposition of source-like
//! kernels placed between adjacent sections, one per height band, whose
//! amplitude is the change in band area from one section to the next.
//!
//! Shape changes are small next to the hull's own section-to-section area
//! changes, so band areas enter as `ref + GAIN · (area − ref)`, with `ref`
//! the band areas of the reference hull (all parameters 1).

use std::sync::OnceLock;

use super::{variant_from_params, HullVariant, ParamRanges, Result, ShapeParams, SynthError, SECTIONS};
use crate::hullgeom::{interp_y_at_z, MAX_DEPTH};

/// Height bands used for the band areas.
pub const BANDS: usize = 12;
/// Band-area change (mm²) that gives unit kernel amplitude.
const AREA_REF: f64 = 1.0e6;
/// Area integration samples per band.
const BAND_SAMPLES: usize = 32;
/// Amplification of band-area deviations from the reference hull.
pub const GAIN: f64 = 200.0;

fn reference_areas() -> &'static [[f64; BANDS]] {
    static AREAS: OnceLock<Vec<[f64; BANDS]>> = OnceLock::new();
    AREAS.get_or_init(|| {
        let unit = ShapeParams::from_values([1.0; 4]);
        let ranges = ParamRanges([(1.0, 1.0); 4]);
        band_areas(&variant_from_params(0, 0, &unit, &ranges).expect("reference hull is valid"))
    })
}

/// Row-major `height × width` scalar field. Row 0 is the deck, the last row
/// the keel; columns run aft to forward, uniform in section index.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PressureField {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// `[section][band]` half-section area inside each height band, mm².
pub fn band_areas(variant: &HullVariant) -> Vec<[f64; BANDS]> {
    let band_h = MAX_DEPTH / BANDS as f64;
    variant
        .sections
        .iter()
        .map(|s| {
            let pts = s.points();
            let (lo, hi) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.z), b.max(p.z)));
            let mut areas = [0.0; BANDS];
            for (b, area) in areas.iter_mut().enumerate() {
                let dz = band_h / BAND_SAMPLES as f64;
                for i in 0..BAND_SAMPLES {
                    let z = band_h * b as f64 + dz * (i as f64 + 0.5);
                    if (lo..=hi).contains(&z) {
                        *area += interp_y_at_z(pts, z) * dz;
                    }
                }
            }
            areas
        })
        .collect()
}

pub fn synth_pressure_field(variant: &HullVariant, height: usize, width: usize) -> Result<PressureField> {
    if height < 16 || width < 16 {
        return Err(SynthError::Config(format!("field {height}x{width} is smaller than 16x16")));
    }
    let reference = reference_areas();
    let areas: Vec<[f64; BANDS]> = band_areas(variant)
        .iter()
        .zip(reference)
        .map(|(a, r)| std::array::from_fn(|b| r[b] + GAIN * (a[b] - r[b])))
        .collect();
    let (h, w) = (height as f64, width as f64);
    let sigma_c = 0.6 * w / SECTIONS as f64;
    let sigma_r = 0.6 * h / BANDS as f64;
    let mut kernels = Vec::with_capacity((SECTIONS - 1) * BANDS);
    for s in 0..SECTIONS - 1 {
        let col = (s + 1) as f64 / SECTIONS as f64 * w;
        for b in 0..BANDS {
            let amp = (areas[s + 1][b] - areas[s][b]) / AREA_REF;
            let row = (1.0 - (b as f64 + 0.5) / BANDS as f64) * h;
            kernels.push((col, row, amp));
        }
    }
    let mut values = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            let (pr, pc) = (r as f64 + 0.5, c as f64 + 0.5);
            values[r * width + c] = kernels
                .iter()
                .map(|&(kc, kr, amp)| {
                    let d2 = ((pc - kc) / sigma_c).powi(2) + ((pr - kr) / sigma_r).powi(2);
                    amp / (1.0 + d2)
                })
                .sum();
        }
    }
    Ok(PressureField { height, width, values })
}
