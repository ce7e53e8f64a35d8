use super::{GeomError, Point, Result, SectionOffsets, ORDER};

fn distance_to_line(p: Point, a: Point, b: Point) -> f64 {
    let (dy, dz) = (b.y - a.y, b.z - a.z);
    let len = dy.hypot(dz);
    if len == 0.0 {
        return p.dist(a);
    }
    ((p.y - a.y) * dz - (p.z - a.z) * dy).abs() / len
}

/// Drops interior points lying within `tol` mm of the line through their
/// surviving predecessor and their successor. End points are always kept.
pub fn remove_straight_segments(offsets: &SectionOffsets, tol: f64) -> Result<SectionOffsets> {
    if !(tol > 0.0) {
        return Err(GeomError::InvalidOffsets(format!("tolerance {tol} must be positive")));
    }
    let points = offsets.points();
    let mut kept: Vec<Point> = Vec::with_capacity(points.len());
    kept.push(points[0]);
    for i in 1..points.len() - 1 {
        let prev = *kept.last().unwrap();
        if distance_to_line(points[i], prev, points[i + 1]) > tol {
            kept.push(points[i]);
        }
    }
    kept.push(points[points.len() - 1]);
    if kept.len() < ORDER {
        return Err(GeomError::DegenerateSection {
            section: offsets.section_index(),
            remaining: kept.len(),
        });
    }
    Ok(SectionOffsets::from_curve(offsets.section_index(), kept))
}

/// `levels` equally spaced heights spanning `[min z, max z]` of the section.
pub fn z_levels(offsets: &SectionOffsets, levels: usize) -> Result<Vec<f64>> {
    if levels < 2 {
        return Err(GeomError::InvalidOffsets(format!("levels {levels} < 2")));
    }
    let (lo, hi) = offsets
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    if !(hi > lo) {
        return Err(GeomError::FlatSection { section: offsets.section_index() });
    }
    let step = (hi - lo) / (levels - 1) as f64;
    Ok((0..levels).map(|l| if l == levels - 1 { hi } else { lo + step * l as f64 }).collect())
}

/// Half-breadth at height `z` by linear interpolation along the point
/// sequence, taking the first crossing in arc order. Heights outside the
/// section's z range take the y of the nearest-in-z point.
pub fn interp_y_at_z(points: &[Point], z: f64) -> f64 {
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (lo, hi) = if a.z <= b.z { (a.z, b.z) } else { (b.z, a.z) };
        if z < lo || z > hi {
            continue;
        }
        if a.z == b.z {
            return a.y;
        }
        let s = (z - a.z) / (b.z - a.z);
        return a.y + s * (b.y - a.y);
    }
    let nearest = points
        .iter()
        .min_by(|a, b| (a.z - z).abs().total_cmp(&(b.z - z).abs()))
        .expect("non-empty section");
    nearest.y
}

/// y values at `levels` equally spaced heights of the section's own z range.
pub fn interp_at_z_levels(offsets: &SectionOffsets, levels: usize) -> Result<Vec<f64>> {
    let zs = z_levels(offsets, levels)?;
    Ok(zs.into_iter().map(|z| interp_y_at_z(offsets.points(), z)).collect())
}
