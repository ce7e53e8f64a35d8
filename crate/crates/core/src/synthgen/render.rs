//! Contour quantization and PGM image files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{PressureField, Result, SynthError};
use crate::tensor::Tensor;

/// The four image cases: 35 or 25 contour levels, with or without black
/// contour lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseTag {
    Case1,
    Case1_1,
    Case2,
    Case2_1,
}

impl CaseTag {
    pub const ALL: [CaseTag; 4] = [CaseTag::Case1, CaseTag::Case1_1, CaseTag::Case2, CaseTag::Case2_1];

    pub fn levels(self) -> usize {
        match self {
            CaseTag::Case1 | CaseTag::Case1_1 => 35,
            CaseTag::Case2 | CaseTag::Case2_1 => 25,
        }
    }

    pub fn with_lines(self) -> bool {
        matches!(self, CaseTag::Case1_1 | CaseTag::Case2_1)
    }

    /// Report label, e.g. `Case1-1`.
    pub fn label(self) -> &'static str {
        match self {
            CaseTag::Case1 => "Case1",
            CaseTag::Case1_1 => "Case1-1",
            CaseTag::Case2 => "Case2",
            CaseTag::Case2_1 => "Case2-1",
        }
    }

    pub fn from_render(levels: usize, with_lines: bool) -> Option<Self> {
        CaseTag::ALL.into_iter().find(|c| c.levels() == levels && c.with_lines() == with_lines)
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CaseTag {
    type Err = SynthError;

    /// Accepts `case1`, `case1-1`, `case2`, `case2-1` in any letter case.
    fn from_str(s: &str) -> Result<Self> {
        CaseTag::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| SynthError::Config(format!("unknown image case `{s}` (case1|case1-1|case2|case2-1)")))
    }
}

/// Quantized grayscale image, intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub level_count: usize,
    pub with_lines: bool,
}

impl ContourImage {
    pub fn case_tag(&self) -> Option<CaseTag> {
        CaseTag::from_render(self.level_count, self.with_lines)
    }

    /// `[1, H, W]` network input.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, self.height, self.width], self.pixels.clone()).expect("consistent image")
    }
}

fn bins(field: &PressureField, levels: usize) -> Vec<usize> {
    let (lo, hi) = field.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    field
        .values
        .iter()
        .map(|&v| if range > 0.0 { (((v - lo) / range * levels as f64).floor() as usize).min(levels - 1) } else { 0 })
        .collect()
}

/// Quantizes the field range into `level_count` equal bins; intensity is
/// `bin / (level_count - 1)`. With lines, every pixel that has a 4-neighbour
/// in a lower bin is set to 0, giving one-pixel-wide boundaries.
pub fn render_contours(field: &PressureField, level_count: usize, with_lines: bool) -> Result<ContourImage> {
    if level_count < 2 {
        return Err(SynthError::Config(format!("level count {level_count} < 2")));
    }
    let (h, w) = (field.height, field.width);
    let b = bins(field, level_count);
    let scale = 1.0 / (level_count - 1) as f64;
    let mut pixels: Vec<f64> = b.iter().map(|&k| k as f64 * scale).collect();
    if with_lines {
        for r in 0..h {
            for c in 0..w {
                let k = b[r * w + c];
                let lower = (r > 0 && b[(r - 1) * w + c] < k)
                    || (r + 1 < h && b[(r + 1) * w + c] < k)
                    || (c > 0 && b[r * w + c - 1] < k)
                    || (c + 1 < w && b[r * w + c + 1] < k);
                if lower {
                    pixels[r * w + c] = 0.0;
                }
            }
        }
    }
    Ok(ContourImage { height: h, width: w, pixels, level_count, with_lines })
}

/// Writes an 8-bit binary PGM plus a `<stem>.meta` sidecar line
/// `case=<tag> levels=<n> lines=<bool>`.
pub fn write_image(path: &Path, image: &ContourImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, bytes)?;
    let tag = image.case_tag().map_or("custom".to_string(), |c| c.label().to_string());
    std::fs::write(
        path.with_extension("meta"),
        format!("case={tag} levels={} lines={}\n", image.level_count, image.with_lines),
    )?;
    Ok(())
}

fn bad_pgm(path: &Path, message: &str) -> SynthError {
    SynthError::Dataset { path: path.display().to_string(), message: message.to_string() }
}

/// Reads an 8-bit binary PGM as a `[1, H, W]` tensor with values `byte / 255`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad_pgm(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad_pgm(path, "expected an 8-bit binary PGM (P5, maxval 255)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad_pgm(path, "bad PGM dimensions"));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad_pgm(path, "truncated PGM data"))?;
    Tensor::new(vec![1, h, w], data.iter().map(|&b| f64::from(b) / 255.0).collect())
        .map_err(|e| bad_pgm(path, &e.to_string()))
}
