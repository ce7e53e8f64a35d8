//! Labels and on-disk datasets.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! dataset.txt        key=value generation settings
//! manifest.txt       one line per sample: id seed split image_path label_path
//! norm.txt           per-entry label mean and scale (train split only)
//! images/0000.pgm    contour image (+ 0000.meta sidecar)
//! labels/0000.txt    control polygons, mm
//! offsets/0000.txt   generated section offsets, mm
//! ```

use std::fmt::Write as _;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{
    generate_variant, read_image, render_contours, synth_pressure_field, write_image, CaseTag, HullVariant, ParamRanges,
    Result, SynthError,
};
use crate::hullgeom::{
    fit_control_points, read_controls, read_offsets, remove_straight_segments, write_controls, write_offsets,
    ControlPolygon, SectionOffsets, DEFAULT_N, DEFAULT_STRAIGHT_TOL,
};
use crate::rng;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const NORM_FILE: &str = "norm.txt";
pub const SETTINGS_FILE: &str = "dataset.txt";
/// Lower bound on the label scale, mm; keeps fixed entries at exactly zero.
pub const MIN_LABEL_SCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(SynthError::Config(format!("unknown split `{s}`"))),
        }
    }
}

/// Control polygons of every section, straight runs removed first, flattened
/// to `[y0, z0, y1, z1, ...]` section after section.
pub fn make_label_polygons(variant: &HullVariant, n: usize) -> Result<Vec<ControlPolygon>> {
    variant
        .sections
        .iter()
        .map(|s| {
            let i = s.section_index();
            let trimmed = remove_straight_segments(s, DEFAULT_STRAIGHT_TOL).map_err(|e| e.in_section(i))?;
            Ok(fit_control_points(&trimmed, n).map_err(|e| e.in_section(i))?)
        })
        .collect()
}

/// Label vector of length `2·(n+1)·S`.
pub fn make_labels(variant: &HullVariant, n: usize) -> Result<Vec<f64>> {
    Ok(make_label_polygons(variant, n)?.iter().flat_map(ControlPolygon::to_flat).collect())
}

/// Train/val/test counts: the first two rounded, the rest to test.
pub fn split_counts(count: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let train = (count as f64 * fractions[0]).round() as usize;
    let val = ((count as f64 * fractions[1]).round() as usize).min(count - train.min(count));
    let train = train.min(count);
    Ok([train, val, count - train - val])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    pub split: [f64; 3],
    pub height: usize,
    pub width: usize,
    pub case: CaseTag,
    /// Controls per section minus one.
    pub n: usize,
    pub ranges: ParamRanges,
    pub overwrite: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            split: [0.8, 0.1, 0.1],
            height: 64,
            width: 64,
            case: CaseTag::Case2,
            n: DEFAULT_N,
            ranges: ParamRanges::default(),
            overwrite: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: u64,
    pub seed: u64,
    pub split: Split,
    pub image_path: String,
    pub label_path: String,
}

/// Per-entry affine label normalization, `(v - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    /// Mean and population standard deviation per entry, the latter floored
    /// at [`MIN_LABEL_SCALE`].
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let labels: Vec<&[f64]> = labels.into_iter().collect();
        let first = labels.first().ok_or_else(|| SynthError::Config("no training labels".into()))?;
        let (m, len) = (labels.len() as f64, first.len());
        let mean: Vec<f64> = (0..len).map(|i| labels.iter().map(|l| l[i]).sum::<f64>() / m).collect();
        let scale = (0..len)
            .map(|i| {
                let var = labels.iter().map(|l| (l[i] - mean[i]).powi(2)).sum::<f64>() / m;
                var.sqrt().max(MIN_LABEL_SCALE)
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| x * s + m).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("norm {}\n", self.mean.len());
        for (m, s) in self.mean.iter().zip(&self.scale) {
            writeln!(out, "{m:?} {s:?}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| SynthError::Config(format!("norm stats: {m}"));
        let mut lines = text.lines();
        let len: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("norm "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad("missing `norm <len>` header"))?;
        let (mut mean, mut scale) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for line in lines {
            let (a, b) = line.split_once(' ').ok_or_else(|| bad(line))?;
            mean.push(a.parse().map_err(|_| bad(line))?);
            scale.push(b.parse().map_err(|_| bad(line))?);
        }
        if mean.len() != len {
            return Err(bad("entry count does not match header"));
        }
        Ok(Self { mean, scale })
    }
}

fn dataset_err(path: &Path, message: impl Into<String>) -> SynthError {
    SynthError::Dataset { path: path.display().to_string(), message: message.into() }
}

const OWNED: [&str; 6] = [MANIFEST_FILE, NORM_FILE, SETTINGS_FILE, "images", "labels", "offsets"];

fn prepare_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !overwrite {
            return Err(dataset_err(dir, "already exists (pass the overwrite flag to replace it)"));
        }
        if non_empty && !dir.join(MANIFEST_FILE).exists() {
            return Err(dataset_err(dir, "is not empty and does not look like a dataset; refusing to overwrite"));
        }
        for name in OWNED {
            let p = dir.join(name);
            if p.is_dir() {
                std::fs::remove_dir_all(&p)?;
            } else if p.exists() {
                std::fs::remove_file(&p)?;
            }
        }
    }
    for sub in ["images", "labels", "offsets"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    Ok(())
}

fn settings_text(config: &DatasetConfig) -> String {
    let ranges: Vec<String> = config.ranges.0.iter().map(|(lo, hi)| format!("{lo:?}:{hi:?}")).collect();
    format!(
        "count={}\nseed={}\nsplit={:?},{:?},{:?}\nheight={}\nwidth={}\ncase={}\ncontrols={}\nranges={}\n",
        config.count,
        config.seed,
        config.split[0],
        config.split[1],
        config.split[2],
        config.height,
        config.width,
        config.case,
        config.n + 1,
        ranges.join(",")
    )
}

/// Generates `count` samples into `dir`. Sample `id` uses seed
/// `mix(seed, id)`; splits are assigned in id order.
pub fn build_dataset(dir: &Path, config: &DatasetConfig) -> Result<Vec<ManifestEntry>> {
    if config.count < 4 {
        return Err(SynthError::Config(format!("count {} < 4", config.count)));
    }
    let [train, val, _] = split_counts(config.count, config.split)?;
    config.ranges.validate()?;
    prepare_dir(dir, config.overwrite)?;
    let baseline = config.ranges.baseline();
    let mut manifest = Vec::with_capacity(config.count);
    let mut train_labels = Vec::with_capacity(train);
    for id in 0..config.count as u64 {
        let seed = rng::mix(config.seed, id);
        let variant = generate_variant(id, seed, &baseline, &config.ranges)?;
        let polygons = make_label_polygons(&variant, config.n)?;
        let field = synth_pressure_field(&variant, config.height, config.width)?;
        let image = render_contours(&field, config.case.levels(), config.case.with_lines())?;
        let image_path = format!("images/{id:04}.pgm");
        let label_path = format!("labels/{id:04}.txt");
        write_image(&dir.join(&image_path), &image)?;
        write_controls(&dir.join(&label_path), &polygons)?;
        write_offsets(&dir.join(format!("offsets/{id:04}.txt")), &variant.sections)?;
        let split = match id as usize {
            i if i < train => Split::Train,
            i if i < train + val => Split::Val,
            _ => Split::Test,
        };
        if split == Split::Train {
            train_labels.push(polygons.iter().flat_map(ControlPolygon::to_flat).collect::<Vec<f64>>());
        }
        manifest.push(ManifestEntry { id, seed, split, image_path, label_path });
    }
    let norm = NormStats::from_labels(train_labels.iter().map(Vec::as_slice))?;
    std::fs::write(dir.join(NORM_FILE), norm.to_text())?;
    let mut text = String::new();
    for e in &manifest {
        writeln!(text, "{} {} {} {} {}", e.id, e.seed, e.split, e.image_path, e.label_path).unwrap();
    }
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    std::fs::write(dir.join(SETTINGS_FILE), settings_text(config))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| dataset_err(&path, e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let err = || dataset_err(&path, format!("line {}: expected `id seed split image label`", i + 1));
            if f.len() != 5 {
                return Err(err());
            }
            Ok(ManifestEntry {
                id: f[0].parse().map_err(|_| err())?,
                seed: f[1].parse().map_err(|_| err())?,
                split: f[2].parse().map_err(|_| err())?,
                image_path: f[3].to_string(),
                label_path: f[4].to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u64,
    pub seed: u64,
    pub split: Split,
    /// `[1, H, W]` image as read from disk.
    pub image: Tensor,
    /// Label in mm.
    pub label: Vec<f64>,
    pub offsets: Vec<SectionOffsets>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub samples: Vec<Sample>,
    pub norm: NormStats,
    pub height: usize,
    pub width: usize,
    pub controls_per_section: usize,
    pub sections: usize,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let norm_path = dir.join(NORM_FILE);
    let norm = NormStats::from_text(&std::fs::read_to_string(&norm_path).map_err(|e| dataset_err(&norm_path, e.to_string()))?)?;
    let mut samples = Vec::with_capacity(manifest.len());
    let mut dims = None;
    for e in manifest {
        let image = read_image(&dir.join(&e.image_path))?;
        let label_path = dir.join(&e.label_path);
        let polygons = read_controls(&label_path).map_err(|err| dataset_err(&label_path, err.to_string()))?;
        let offsets_path = dir.join(format!("offsets/{:04}.txt", e.id));
        let offsets = read_offsets(&offsets_path).map_err(|err| dataset_err(&offsets_path, err.to_string()))?;
        let controls = polygons.first().map_or(0, ControlPolygon::len);
        let d = (image.shape()[1], image.shape()[2], controls, polygons.len());
        if *dims.get_or_insert(d) != d {
            return Err(dataset_err(&label_path, "sample dimensions differ from the first sample"));
        }
        let label: Vec<f64> = polygons.iter().flat_map(ControlPolygon::to_flat).collect();
        if label.len() != norm.mean.len() {
            return Err(dataset_err(&label_path, "label length does not match the normalization stats"));
        }
        samples.push(Sample { id: e.id, seed: e.seed, split: e.split, image, label, offsets });
    }
    let (height, width, controls_per_section, sections) = dims.ok_or_else(|| dataset_err(dir, "empty manifest"))?;
    Ok(Dataset { dir: dir.to_path_buf(), samples, norm, height, width, controls_per_section, sections })
}
