//! Quadratic B-spline machinery for stern sections.
//!
//! Section offsets arrive as ordered `(y, z)` girth points in millimetres, with
//! a variable number of points per section. They are converted to a fixed-size
//! control polygon by a least-squares fit of an open-uniform quadratic
//! B-spline over chord-length parameters, and converted back by evaluating the
//! curve. Comparison between two point sets happens on equally spaced z-levels.

mod io;
mod section;
mod spline;

pub use io::{
    parse_controls, parse_offsets, read_controls, read_offsets, write_controls, write_offsets,
    ParseError,
};
pub use section::{interp_at_z_levels, interp_y_at_z, remove_straight_segments, z_levels};
pub use spline::{
    basis, basis_matrix, basis_row, chord_params, eval_curve, fit_control_points, fit_with_params,
    open_uniform_knots, reconstruct_offsets, BasisMatrix, ChordParams, KnotVector,
};

use thiserror::Error;

/// Order of the B-spline (degree + 1). Fixed to quadratic.
pub const ORDER: usize = 3;
/// Default number of controls minus one (23 control points per section).
pub const DEFAULT_N: usize = 22;
/// Default tolerance for straight-segment removal, mm.
pub const DEFAULT_STRAIGHT_TOL: f64 = 0.5;
/// Maximum half-breadth, mm.
pub const MAX_HALF_BREADTH: f64 = 29_000.0;
/// Maximum depth, mm.
pub const MAX_DEPTH: f64 = 21_000.0;
/// Number of z-levels used when comparing two sections.
pub const COMPARE_LEVELS: usize = 50;

/// Fits whose `max|R_ii| / min|R_ii|` exceeds this are rejected.
pub const MAX_FIT_CONDITION: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("section {section}: only {remaining} points would remain (need at least 3)")]
    DegenerateSection { section: usize, remaining: usize },
    #[error("zero-length chord between points {index} and {}", index + 1)]
    DuplicatePoint { index: usize },
    #[error("{n} + 1 controls is too few for order {order}")]
    InsufficientControls { n: usize, order: usize },
    #[error("parameter {0} outside [0, 1]")]
    Domain(f64),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("rank-deficient fit (condition estimate {condition:e}); too many controls for the data")]
    RankDeficient { condition: f64 },
    #[error("section {section}: z range is degenerate")]
    FlatSection { section: usize },
    #[error("invalid offsets: {0}")]
    InvalidOffsets(String),
    #[error("section {section}: {source}")]
    InSection {
        section: usize,
        #[source]
        source: Box<GeomError>,
    },
}

impl GeomError {
    pub fn in_section(self, section: usize) -> Self {
        match self {
            e @ GeomError::InSection { .. } => e,
            e => GeomError::InSection { section, source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, GeomError>;

/// A point of a transverse section: half-breadth `y` and height `z`, mm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(y: f64, z: f64) -> Self {
        Self { y, z }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.y - other.y).hypot(self.z - other.z)
    }
}

impl From<(f64, f64)> for Point {
    fn from((y, z): (f64, f64)) -> Self {
        Self { y, z }
    }
}

/// Ordered girth points of one stern section.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionOffsets {
    section_index: usize,
    points: Vec<Point>,
}

impl SectionOffsets {
    /// Validated constructor: at least 3 points, inside the ship envelope and
    /// no two consecutive points identical.
    pub fn new(section_index: usize, points: Vec<Point>) -> Result<Self> {
        if points.len() < ORDER {
            return Err(GeomError::InvalidOffsets(format!(
                "section {section_index} has {} points, need at least {ORDER}",
                points.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.y.is_finite() && p.z.is_finite()) {
                return Err(GeomError::InvalidOffsets(format!("point {i} is not finite")));
            }
            if !(0.0..=MAX_HALF_BREADTH).contains(&p.y) || !(0.0..=MAX_DEPTH).contains(&p.z) {
                return Err(GeomError::InvalidOffsets(format!(
                    "point {i} ({}, {}) outside the 29000 x 21000 mm envelope",
                    p.y, p.z
                )));
            }
        }
        if let Some(index) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(GeomError::DuplicatePoint { index });
        }
        Ok(Self { section_index, points })
    }

    /// Wraps points without checking the envelope invariants. Used for curves
    /// evaluated from arbitrary (e.g. predicted) control polygons.
    pub fn from_curve(section_index: usize, points: Vec<Point>) -> Self {
        Self { section_index, points }
    }

    pub fn section_index(&self) -> usize {
        self.section_index
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

/// The `n + 1` control points of one section.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolygon {
    pub section_index: usize,
    pub controls: Vec<Point>,
}

impl ControlPolygon {
    pub fn new(section_index: usize, controls: Vec<Point>) -> Self {
        Self { section_index, controls }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// Interleaved `[y0, z0, y1, z1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.controls.iter().flat_map(|p| [p.y, p.z]).collect()
    }

    pub fn from_flat(section_index: usize, values: &[f64]) -> Self {
        let controls = values.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        Self { section_index, controls }
    }
}
