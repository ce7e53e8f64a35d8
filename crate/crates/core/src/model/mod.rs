//! VGG-style regressors from image to control points: one single-task network
//! and three multi-task networks that differ in how many convolutional
//! blocks each section task owns.
//!
//! | variant       | shared trunk  | per task                 |
//! |---------------|---------------|--------------------------|
//! | `single`      | Conv1..Conv5  | one head FC1..FC3 (A)    |
//! | `mt-conv0fc3` | Conv1..Conv5  | FC1..FC3 (46) × S        |
//! | `mt-conv4fc3` | Conv1..Conv4  | Conv5 + FC1..FC3 × S     |
//! | `mt-conv8fc3` | Conv1..Conv3  | Conv4, Conv5 + FC1..FC3 × S |
//!
//! Channel and hidden widths scale by `width_factor` (1 gives the full-size
//! network). Every 3×3 convolution is followed by ReLU and every block by a
//! 2×2 max pool.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::{self, Stream};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const CONV_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];
pub const CONV_LAYERS: [usize; 5] = [2, 2, 3, 3, 3];
pub const SINGLE_FC: [usize; 2] = [4096, 1000];
pub const TASK_FC: [usize; 2] = [512, 512];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Single,
    MtConv0Fc3,
    MtConv4Fc3,
    MtConv8Fc3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Single, Variant::MtConv0Fc3, Variant::MtConv4Fc3, Variant::MtConv8Fc3];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::MtConv0Fc3 => "mt-conv0fc3",
            Variant::MtConv4Fc3 => "mt-conv4fc3",
            Variant::MtConv8Fc3 => "mt-conv8fc3",
        }
    }

    /// Number of conv blocks in the shared trunk.
    pub fn shared_blocks(self) -> usize {
        match self {
            Variant::Single | Variant::MtConv0Fc3 => 5,
            Variant::MtConv4Fc3 => 4,
            Variant::MtConv8Fc3 => 3,
        }
    }

    pub fn is_multi_task(self) -> bool {
        self != Variant::Single
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::InvalidSpec(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    /// Input image `(height, width)`.
    pub input_hw: (usize, usize),
    pub width_factor: f64,
    pub sections: usize,
    pub controls_per_section: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            variant: Variant::MtConv0Fc3,
            input_hw: (64, 64),
            width_factor: 0.125,
            sections: 14,
            controls_per_section: 23,
        }
    }
}

impl ArchitectureSpec {
    /// Length of the full label / prediction vector, `2·(n+1)·S`.
    pub fn output_len(&self) -> usize {
        self.task_len() * self.sections
    }

    /// Per-section slice length, `2·(n+1)`.
    pub fn task_len(&self) -> usize {
        2 * self.controls_per_section
    }

    pub fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.width_factor).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_factor.is_finite() && self.width_factor > 0.0) {
            return Err(ModelError::InvalidSpec(format!("width factor {}", self.width_factor)));
        }
        if self.sections == 0 || self.controls_per_section < 3 {
            return Err(ModelError::InvalidSpec(format!(
                "{} sections with {} controls each",
                self.sections, self.controls_per_section
            )));
        }
        let (h, w) = self.input_hw;
        if h < 32 || w < 32 {
            return Err(ModelError::InvalidSpec(format!(
                "input {h}x{w} is too small for five 2x2 pooling stages (need at least 32x32)"
            )));
        }
        Ok(())
    }

    /// One-line text form, e.g.
    /// `variant=mt-conv0fc3 input=32x32 width=0.125 sections=14 controls=23`.
    pub fn to_text(&self) -> String {
        format!(
            "variant={} input={}x{} width={:?} sections={} controls={}",
            self.variant, self.input_hw.0, self.input_hw.1, self.width_factor, self.sections, self.controls_per_section
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = ArchitectureSpec::default();
        let bad = |what: &str| ModelError::InvalidSpec(format!("cannot parse `{what}`"));
        let mut seen = 0;
        for field in text.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| bad(field))?;
            match k {
                "variant" => spec.variant = v.parse()?,
                "input" => {
                    let (h, w) = v.split_once('x').ok_or_else(|| bad(field))?;
                    spec.input_hw = (h.parse().map_err(|_| bad(field))?, w.parse().map_err(|_| bad(field))?);
                }
                "width" => spec.width_factor = v.parse().map_err(|_| bad(field))?,
                "sections" => spec.sections = v.parse().map_err(|_| bad(field))?,
                "controls" => spec.controls_per_section = v.parse().map_err(|_| bad(field))?,
                _ => return Err(bad(field)),
            }
            seen += 1;
        }
        if seen != 5 {
            return Err(ModelError::InvalidSpec(format!("incomplete architecture line `{text}`")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Which part of the network a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Shared,
    /// The single-task regression head.
    Head,
    Task(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub owner: Owner,
    /// Weights only; biases have `fan_in == 0` and start at zero.
    pub fan_in: usize,
}

/// Result of walking an architecture without allocating weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub params: Vec<ParamSpec>,
    /// `[C, H, W]` after each of the five pooling stages.
    pub pooled: Vec<[usize; 3]>,
    /// `[C, H, W]` of the last shared convolution (post-ReLU, before pooling).
    pub last_shared_conv: [usize; 3],
    /// `[C, H, W]` entering FC1.
    pub trunk_output: [usize; 3],
    pub fc_widths: Vec<usize>,
    pub head_outputs: Vec<usize>,
}

impl Layout {
    pub fn total_params(&self) -> usize {
        self.params.iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }
}

fn conv_params(out: &mut Vec<ParamSpec>, prefix: &str, block: usize, cin: usize, cout: usize, owner: Owner, count: usize) -> usize {
    let mut c = cin;
    for l in 0..count {
        let name = format!("{prefix}.conv{}_{}", block + 1, l + 1);
        out.push(ParamSpec { name: format!("{name}.w"), shape: vec![cout, c, 3, 3], owner, fan_in: c * 9 });
        out.push(ParamSpec { name: format!("{name}.b"), shape: vec![cout], owner, fan_in: 0 });
        c = cout;
    }
    c
}

fn fc_params(out: &mut Vec<ParamSpec>, prefix: &str, dims: &[usize], owner: Owner) {
    for (i, d) in dims.windows(2).enumerate() {
        let name = format!("{prefix}.fc{}", i + 1);
        out.push(ParamSpec { name: format!("{name}.w"), shape: vec![d[1], d[0]], owner, fan_in: d[0] });
        out.push(ParamSpec { name: format!("{name}.b"), shape: vec![d[1]], owner, fan_in: 0 });
    }
}

fn task_prefix(k: usize) -> String {
    format!("task{k:02}")
}

/// Shape walk over the architecture. Allocates no weights, so it is cheap
/// even at full width.
pub fn layout(spec: &ArchitectureSpec) -> Result<Layout> {
    spec.validate()?;
    let widths: Vec<usize> = CONV_CHANNELS.iter().map(|&c| spec.scaled(c)).collect();
    let (mut h, mut w) = spec.input_hw;
    let mut pooled = Vec::new();
    let mut last_shared_conv = [0; 3];
    for b in 0..5 {
        if b + 1 == spec.variant.shared_blocks() {
            last_shared_conv = [widths[b], h, w];
        }
        h /= 2;
        w /= 2;
        pooled.push([widths[b], h, w]);
    }
    let trunk_output = pooled[4];
    let flat = trunk_output.iter().product::<usize>();

    let mut params = Vec::new();
    let mut c = 1;
    for b in 0..spec.variant.shared_blocks() {
        c = conv_params(&mut params, "shared", b, c, widths[b], Owner::Shared, CONV_LAYERS[b]);
    }
    let (fc_widths, head_outputs) = if spec.variant.is_multi_task() {
        let fc: Vec<usize> = TASK_FC.iter().map(|&d| spec.scaled(d)).collect();
        let dims = [flat, fc[0], fc[1], spec.task_len()];
        for k in 0..spec.sections {
            let prefix = task_prefix(k);
            let mut tc = c;
            for b in spec.variant.shared_blocks()..5 {
                tc = conv_params(&mut params, &prefix, b, tc, widths[b], Owner::Task(k), CONV_LAYERS[b]);
            }
            fc_params(&mut params, &prefix, &dims, Owner::Task(k));
        }
        (fc, vec![spec.task_len(); spec.sections])
    } else {
        let fc: Vec<usize> = SINGLE_FC.iter().map(|&d| spec.scaled(d)).collect();
        fc_params(&mut params, "head", &[flat, fc[0], fc[1], spec.output_len()], Owner::Head);
        (fc, vec![spec.output_len()])
    };
    Ok(Layout { params, pooled, last_shared_conv, trunk_output, fc_widths, head_outputs })
}

/// All trainable tensors of one architecture, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ArchitectureSpec,
    pub names: Vec<String>,
    pub owners: Vec<Owner>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Indices of the parameters owned by `owner`.
    pub fn indices_of(&self, owner: Owner) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.owners[i] == owner).collect()
    }

    /// Replaces the values with `tensors`, checking names and shapes.
    pub fn assign(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.len() {
            return Err(ModelError::Shape(format!("{} tensors for {} parameters", named.len(), self.len())));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(ModelError::Shape(format!(
                    "parameter {i}: expected {} {:?}, found {name} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t;
        }
        Ok(())
    }
}

/// Builds a model with fan-in-scaled normal weights (std `√(2/fan_in)`) and
/// zero biases.
pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<ModelParams> {
    let layout = layout(spec)?;
    let mut rng = rng::stream_rng(seed, Stream::Init, 0);
    let mut names = Vec::with_capacity(layout.params.len());
    let mut owners = Vec::with_capacity(layout.params.len());
    let mut tensors = Vec::with_capacity(layout.params.len());
    for p in layout.params {
        let mut t = Tensor::zeros(&p.shape);
        if p.fan_in > 0 {
            let normal = Normal::new(0.0, (2.0 / p.fan_in as f64).sqrt()).expect("positive std");
            t.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        names.push(p.name);
        owners.push(p.owner);
        tensors.push(t);
    }
    Ok(ModelParams { spec: spec.clone(), names, owners, tensors })
}

/// Training or inference behaviour of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub training: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Mode {
    pub fn inference() -> Self {
        Self { training: false, dropout: 0.0, seed: 0 }
    }

    pub fn training(dropout: f64, seed: u64) -> Self {
        Self { training: true, dropout, seed }
    }
}

/// Nodes of one forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Parameter leaves, in `ModelParams` order.
    pub params: Vec<Var>,
    /// Full prediction, length A.
    pub output: Var,
    /// Per-task outputs (one entry for the single-task model).
    pub tasks: Vec<Var>,
    /// Last shared convolution, post-ReLU and before pooling.
    pub last_shared_conv: Var,
}

struct Walker<'a> {
    tape: &'a mut Tape,
    vars: &'a [Var],
    next: usize,
    mode: Mode,
    dropout_site: u64,
}

impl Walker<'_> {
    fn take(&mut self) -> (Var, Var) {
        let pair = (self.vars[self.next], self.vars[self.next + 1]);
        self.next += 2;
        pair
    }

    /// Runs the convolutions of block `b`; returns (post-ReLU last conv, pooled).
    fn conv_block(&mut self, mut x: Var, b: usize) -> Result<(Var, Var)> {
        for _ in 0..CONV_LAYERS[b] {
            let (w, bias) = self.take();
            let c = self.tape.conv2d(x, w, bias)?;
            x = self.tape.relu(c);
        }
        let pooled = self.tape.maxpool2(x)?;
        Ok((x, pooled))
    }

    fn fc_stack(&mut self, x: Var) -> Result<Var> {
        let mut h = self.tape.flatten(x)?;
        for layer in 0..3 {
            let (w, b) = self.take();
            h = self.tape.dense(h, w, b)?;
            if layer < 2 {
                h = self.tape.relu(h);
                let seed = rng::mix(self.mode.seed, self.dropout_site);
                self.dropout_site += 1;
                h = self.tape.dropout(h, self.mode.dropout, self.mode.training, seed)?;
            }
        }
        Ok(h)
    }
}

/// Records a forward pass of `params` on `image` (`[1, H, W]`) onto `tape`.
pub fn forward_on_tape(tape: &mut Tape, params: &ModelParams, image: &Tensor, mode: Mode) -> Result<Trace> {
    let spec = &params.spec;
    let (h, w) = spec.input_hw;
    if image.shape() != [1, h, w] {
        return Err(ModelError::Shape(format!("image {:?}, model expects [1, {h}, {w}]", image.shape())));
    }
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let x = tape.constant(image.clone());
    let mut walker = Walker { tape, vars: &vars, next: 0, mode, dropout_site: 0 };
    let shared = spec.variant.shared_blocks();
    let mut feature = x;
    let mut last_conv = x;
    for b in 0..shared {
        (last_conv, feature) = walker.conv_block(feature, b)?;
    }
    let tasks = if spec.variant.is_multi_task() {
        let mut outs = Vec::with_capacity(spec.sections);
        for _ in 0..spec.sections {
            let mut t = feature;
            for b in shared..5 {
                t = walker.conv_block(t, b)?.1;
            }
            outs.push(walker.fc_stack(t)?);
        }
        outs
    } else {
        vec![walker.fc_stack(feature)?]
    };
    let output = if tasks.len() == 1 { tasks[0] } else { tape.concat(&tasks)? };
    Ok(Trace { params: vars, output, tasks, last_shared_conv: last_conv })
}

/// Model output in label order; task `k` occupies `[k·2(n+1), (k+1)·2(n+1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub task_len: usize,
}

impl Prediction {
    pub fn task(&self, k: usize) -> &[f64] {
        &self.values[k * self.task_len..(k + 1) * self.task_len]
    }

    pub fn tasks(&self) -> usize {
        self.values.len() / self.task_len
    }
}

pub fn forward(params: &ModelParams, image: &Tensor, mode: Mode) -> Result<Prediction> {
    let mut tape = Tape::new();
    let trace = forward_on_tape(&mut tape, params, image, mode)?;
    Ok(Prediction { values: tape.value(trace.output).data().to_vec(), task_len: params.spec.task_len() })
}

/// Per-sample loss over the whole output vector (plain MSE).
pub fn loss_single(tape: &mut Tape, y: Var, y_hat: Var) -> Result<Var> {
    Ok(tape.mse(y, y_hat)?)
}

/// Mean over `s` equal task blocks of each block's MSE.
pub fn loss_multi(tape: &mut Tape, y: Var, y_hat: Var, s: usize) -> Result<Var> {
    let a = tape.value(y).numel();
    if tape.value(y_hat).numel() != a {
        return Err(ModelError::Shape(format!("label {a} vs prediction {}", tape.value(y_hat).numel())));
    }
    if s == 0 || !a.is_multiple_of(s) {
        return Err(ModelError::Shape(format!("{a} outputs do not split into {s} tasks")));
    }
    let len = a / s;
    let mut total = None;
    for k in 0..s {
        let yk = tape.slice(y, k * len, len)?;
        let hk = tape.slice(y_hat, k * len, len)?;
        let lk = tape.mse(yk, hk)?;
        total = Some(match total {
            None => lk,
            Some(acc) => tape.add(acc, lk)?,
        });
    }
    Ok(tape.scale(total.expect("s > 0"), 1.0 / s as f64))
}

/// Per-task MSE values, for reporting.
pub fn task_losses(y: &[f64], y_hat: &[f64], s: usize) -> Result<Vec<f64>> {
    if y.len() != y_hat.len() || s == 0 || !y.len().is_multiple_of(s) {
        return Err(ModelError::Shape(format!("{} vs {} values in {s} tasks", y.len(), y_hat.len())));
    }
    let len = y.len() / s;
    Ok(y.chunks(len)
        .zip(y_hat.chunks(len))
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / len as f64)
        .collect())
}
