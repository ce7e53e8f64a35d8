//! Grad-CAM for the per-section regression heads.
//!
//! The target scalar is the sum of task `k`'s outputs and the target layer is
//! the last shared convolution (post-ReLU, before pooling). Channel weights
//! are the spatial means of the target's gradient on that layer; the map is
//! `ReLU(Σ_c w_c · A_c)`, divided by its maximum unless it is all zero.

use std::path::Path;

use thiserror::Error;

use crate::model::{self, ModelError, ModelParams, Mode};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("Grad-CAM needs a multi-task model; `{0}` has no task branches")]
    Unsupported(String),
    #[error("task {task} out of range for {tasks} tasks")]
    TaskRange { task: usize, tasks: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GradCamError>;

/// Heatmap at the target layer's resolution, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub task: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Nearest-neighbour resampling to `height × width`.
    pub fn upsample(&self, height: usize, width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(height * width);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                out.push(self.at(sr, c * self.width / width));
            }
        }
        out
    }
}

/// Weighted map before ReLU and normalization: `Σ_c mean(∂target/∂A_c) · A_c`.
pub fn raw_cam(activations: &Tensor, grads: &Tensor) -> Vec<f64> {
    let (c, h, w) = (activations.shape()[0], activations.shape()[1], activations.shape()[2]);
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for ch in 0..c {
        let g = &grads.data()[ch * plane..(ch + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        let a = &activations.data()[ch * plane..(ch + 1) * plane];
        for (m, &v) in cam.iter_mut().zip(a) {
            *m += weight * v;
        }
    }
    cam
}

/// ReLU followed by division by the maximum (left at zero when all zero).
pub fn normalize_cam(cam: &[f64]) -> Vec<f64> {
    let relu: Vec<f64> = cam.iter().map(|&v| v.max(0.0)).collect();
    let max = relu.iter().fold(0.0f64, |a, &b| a.max(b));
    if max > 0.0 { relu.iter().map(|v| v / max).collect() } else { relu }
}

pub fn gradcam(params: &ModelParams, image: &Tensor, task: usize) -> Result<Heatmap> {
    let spec = &params.spec;
    if !spec.variant.is_multi_task() {
        return Err(GradCamError::Unsupported(spec.variant.to_string()));
    }
    if task >= spec.sections {
        return Err(GradCamError::TaskRange { task, tasks: spec.sections });
    }
    let mut tape = Tape::new();
    let trace = model::forward_on_tape(&mut tape, params, image, Mode::inference())?;
    let target = tape.sum(trace.tasks[task]);
    let grads = tape.backward(target)?;
    let act = tape.value(trace.last_shared_conv);
    let zeros = Tensor::zeros(act.shape());
    let g = grads.get(trace.last_shared_conv).unwrap_or(&zeros);
    Ok(Heatmap { task, height: act.shape()[1], width: act.shape()[2], values: normalize_cam(&raw_cam(act, g)) })
}

/// Heatmaps for every task.
pub fn gradcam_all(params: &ModelParams, image: &Tensor) -> Result<Vec<Heatmap>> {
    (0..params.spec.sections).map(|k| gradcam(params, image, k)).collect()
}

/// Share of the heat colour at full heatmap intensity.
pub const OVERLAY_ALPHA: f64 = 0.5;

/// RGB bytes of the grayscale image (`[1, H, W]`, values in `[0, 1]`)
/// alpha-blended towards red-yellow by the upsampled heatmap. A zero
/// heatmap gives the gray input unchanged.
pub fn overlay(heatmap: &Heatmap, image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(GradCamError::Dimension(format!("overlay needs a [1, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    if heatmap.height > h || heatmap.width > w || heatmap.height == 0 || heatmap.width == 0 {
        return Err(GradCamError::Dimension(format!(
            "heatmap {}x{} does not upsample to image {h}x{w}",
            heatmap.height, heatmap.width
        )));
    }
    let heat = heatmap.upsample(h, w);
    let mut rgb = Vec::with_capacity(3 * h * w);
    for (&g, &m) in image.data().iter().zip(&heat) {
        let gray = (g.clamp(0.0, 1.0) * 255.0).round();
        let a = OVERLAY_ALPHA * m;
        for colour in [255.0, 255.0 * m, 0.0] {
            rgb.push(((1.0 - a) * gray + a * colour).round() as u8);
        }
    }
    Ok(rgb)
}

/// Writes the overlay as a binary PPM.
pub fn write_overlay(path: &Path, heatmap: &Heatmap, image: &Tensor) -> Result<()> {
    let rgb = overlay(heatmap, image)?;
    let mut bytes = format!("P6\n{} {}\n255\n", image.shape()[2], image.shape()[1]).into_bytes();
    bytes.extend(rgb);
    std::fs::write(path, bytes)?;
    Ok(())
}
