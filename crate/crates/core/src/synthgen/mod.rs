//! Deterministic synthetic corpus: parametric stern variants, a surrogate
//! pressure field per variant, contour images and B-spline labels.
//!
//! Sections sit at the stations -5.5, 0, 8, 8, 16, 24, 32, 40, 48, 64, 80, 96,
//! 112 and 160 m. The 8 m station is split in two: index 2 is its transom
//! (upper) part and index 3 its stern-bulb (lower) part. Each section is a
//! half-breadth profile `y(z)` blended from a power-law frame shape and a
//! Gaussian bulb term, sampled at 50 points equally spaced in arc length.
//! Sections 12 and 13 are held fixed; they end in a short vertical side wall.

mod dataset;
mod field;
mod render;

pub use dataset::{
    build_dataset, load_dataset, make_label_polygons, make_labels, read_manifest, split_counts, Dataset, DatasetConfig, ManifestEntry,
    NormStats, Sample, Split, MANIFEST_FILE, NORM_FILE,
};
pub use field::{synth_pressure_field, PressureField};
pub use render::{read_image, render_contours, write_image, CaseTag, ContourImage};

use rand::Rng;
use thiserror::Error;

use crate::hullgeom::{GeomError, Point, SectionOffsets, MAX_DEPTH, MAX_HALF_BREADTH};
use crate::rng::{self, Stream};

/// Sections per hull.
pub const SECTIONS: usize = 14;
/// Points per generated section.
pub const POINTS_PER_SECTION: usize = 50;
/// Longitudinal station of each section index, m.
pub const STATIONS: [f64; SECTIONS] = [-5.5, 0.0, 8.0, 8.0, 16.0, 24.0, 32.0, 40.0, 48.0, 64.0, 80.0, 96.0, 112.0, 160.0];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    Range { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid range for {name}: [{lo}, {hi}]")]
    BadRange { name: &'static str, lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("geometry: {0}")]
    Geometry(#[from] GeomError),
    #[error("dataset {path}: {message}")]
    Dataset { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Named shape parameters of a variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    /// Multiplies the bulb term of sections 3 to 8.
    pub bulb_scale: f64,
    /// Scales the half-breadths of the transom sections 0 to 2.
    pub transom_width_scale: f64,
    /// Multiplies the frame-shape exponent of sections 0 to 6.
    pub fullness_aft: f64,
    /// Multiplies the frame-shape exponent of sections 7 to 11.
    pub fullness_fwd: f64,
}

impl ShapeParams {
    pub const NAMES: [&'static str; 4] = ["bulb_scale", "transom_width_scale", "fullness_aft", "fullness_fwd"];

    pub fn values(&self) -> [f64; 4] {
        [self.bulb_scale, self.transom_width_scale, self.fullness_aft, self.fullness_fwd]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        Self { bulb_scale: v[0], transom_width_scale: v[1], fullness_aft: v[2], fullness_fwd: v[3] }
    }
}

/// Closed interval per shape parameter, in [`ShapeParams::NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRanges(pub [(f64, f64); 4]);

impl Default for ParamRanges {
    fn default() -> Self {
        Self([(0.9, 1.1), (0.995, 1.005), (0.985, 1.015), (0.985, 1.015)])
    }
}

impl ParamRanges {
    /// Midpoint of every range: the baseline hull.
    pub fn baseline(&self) -> ShapeParams {
        ShapeParams::from_values(self.0.map(|(lo, hi)| 0.5 * (lo + hi)))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, &(lo, hi)) in ShapeParams::NAMES.iter().zip(&self.0) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > 0.0) {
                return Err(SynthError::BadRange { name, lo, hi });
            }
        }
        Ok(())
    }

    pub fn check(&self, params: &ShapeParams) -> Result<()> {
        self.validate()?;
        for ((name, &(lo, hi)), value) in ShapeParams::NAMES.iter().zip(&self.0).zip(params.values()) {
            if !(lo..=hi).contains(&value) {
                return Err(SynthError::Range { name, value, lo, hi });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullVariant {
    pub variant_id: u64,
    pub seed: u64,
    pub params: ShapeParams,
    pub sections: Vec<SectionOffsets>,
}

/// Baseline frame shape of one section.
#[derive(Debug, Clone, Copy)]
struct Frame {
    z_bot: f64,
    z_top: f64,
    y_bot: f64,
    y_top: f64,
    power: f64,
    bulb: f64,
    bulb_z: f64,
    bulb_sigma: f64,
    /// Fraction of the height after which the side is vertical.
    wall_from: f64,
}

const fn frame(z_bot: f64, y_bot: f64, y_top: f64, power: f64, bulb: f64) -> Frame {
    Frame { z_bot, z_top: MAX_DEPTH, y_bot, y_top, power, bulb, bulb_z: 4500.0, bulb_sigma: 1800.0, wall_from: 1.0 }
}

const FRAMES: [Frame; SECTIONS] = [
    frame(11_000.0, 4000.0, 19_000.0, 2.0, 0.0),
    frame(8500.0, 2500.0, 22_500.0, 2.2, 0.0),
    frame(7500.0, 1500.0, 25_000.0, 2.4, 0.0),
    Frame { z_bot: 0.0, z_top: 6500.0, y_bot: 400.0, y_top: 1500.0, power: 1.6, bulb: 1200.0, bulb_z: 4000.0, bulb_sigma: 1500.0, wall_from: 1.0 },
    frame(0.0, 500.0, 27_000.0, 2.2, 900.0),
    frame(0.0, 700.0, 28_000.0, 2.5, 700.0),
    frame(0.0, 1000.0, 28_600.0, 2.7, 500.0),
    frame(0.0, 1500.0, 28_900.0, 2.9, 350.0),
    frame(0.0, 2200.0, 28_950.0, 3.1, 200.0),
    frame(0.0, 4000.0, 29_000.0, 3.3, 0.0),
    frame(0.0, 7000.0, 29_000.0, 3.4, 0.0),
    frame(0.0, 11_000.0, 29_000.0, 3.4, 0.0),
    Frame { wall_from: 0.93, ..frame(0.0, 15_000.0, 29_000.0, 3.0, 0.0) },
    Frame { wall_from: 0.93, ..frame(0.0, 21_000.0, 29_000.0, 2.6, 0.0) },
];

impl Frame {
    fn adjusted(mut self, index: usize, p: &ShapeParams) -> Self {
        if (3..=8).contains(&index) {
            self.bulb *= p.bulb_scale;
        }
        if index <= 2 {
            self.y_bot *= p.transom_width_scale;
            self.y_top *= p.transom_width_scale;
        }
        if index <= 6 {
            self.power *= p.fullness_aft;
        } else if index <= 11 {
            self.power *= p.fullness_fwd;
        }
        self
    }

    fn y_at(&self, z: f64) -> f64 {
        let tau = ((z - self.z_bot) / (self.z_top - self.z_bot)).clamp(0.0, 1.0);
        let t = (tau / self.wall_from).min(1.0);
        let core = self.y_bot + (self.y_top - self.y_bot) * (1.0 - (1.0 - t).powf(self.power));
        let d = (z - self.bulb_z) / self.bulb_sigma;
        core + self.bulb * (-0.5 * d * d).exp()
    }

    /// `count` points equally spaced in arc length along the profile.
    fn sample(&self, count: usize) -> Vec<Point> {
        const DENSE: usize = 4000;
        let dense: Vec<Point> = (0..=DENSE)
            .map(|i| {
                let z = self.z_bot + (self.z_top - self.z_bot) * i as f64 / DENSE as f64;
                Point::new(self.y_at(z), z)
            })
            .collect();
        let mut arc = vec![0.0; dense.len()];
        for i in 1..dense.len() {
            arc[i] = arc[i - 1] + dense[i].dist(dense[i - 1]);
        }
        let total = arc[DENSE];
        let mut out = Vec::with_capacity(count);
        let mut j = 0;
        for i in 0..count {
            if i == count - 1 {
                out.push(dense[DENSE]);
                break;
            }
            let s = total * i as f64 / (count - 1) as f64;
            while arc[j + 1] < s {
                j += 1;
            }
            let f = (s - arc[j]) / (arc[j + 1] - arc[j]);
            let (a, b) = (dense[j], dense[j + 1]);
            out.push(Point::new(a.y + f * (b.y - a.y), a.z + f * (b.z - a.z)));
        }
        out
    }
}

/// Builds the variant for explicit parameter values.
pub fn variant_from_params(variant_id: u64, seed: u64, params: &ShapeParams, ranges: &ParamRanges) -> Result<HullVariant> {
    ranges.check(params)?;
    let sections = FRAMES
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let pts = f.adjusted(i, params).sample(POINTS_PER_SECTION);
            debug_assert!(pts.iter().all(|p| p.y <= MAX_HALF_BREADTH));
            SectionOffsets::new(i, pts).map_err(|e| e.in_section(i).into())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HullVariant { variant_id, seed, params: *params, sections })
}

/// Samples every parameter uniformly from its range using the data stream
/// of `seed`. `baseline` must itself lie inside the ranges.
pub fn generate_variant(variant_id: u64, seed: u64, baseline: &ShapeParams, ranges: &ParamRanges) -> Result<HullVariant> {
    ranges.check(baseline)?;
    let mut rng = rng::stream_rng(seed, Stream::Data, 0);
    let values = ranges.0.map(|(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo });
    variant_from_params(variant_id, seed, &ShapeParams::from_values(values), ranges)
}

/// The hull at the midpoint of every range.
pub fn baseline_variant(ranges: &ParamRanges) -> Result<HullVariant> {
    variant_from_params(0, 0, &ranges.baseline(), ranges)
}
