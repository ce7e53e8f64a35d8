//! Batch-size-1 training with Adam, a stepped learning-rate schedule and
//! early stopping on validation loss.

mod adam;
mod checkpoint;

pub use adam::{adam_step, corrected_lr, lr_schedule, scheduled_lr, AdamConfig, AdamState, DEFAULT_LR, LR_DECAY_EPOCHS};
pub use checkpoint::{load_best_params, load_checkpoint, save_checkpoint, CHECKPOINT_TAG};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::model::{self, loss_multi, loss_single, ArchitectureSpec, ModelError, ModelParams, Mode};
use crate::rng::{self, Stream};
use crate::synthgen::{Dataset, Split};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(Split),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint architecture mismatch: file has `{found}`, expected `{expected}`")]
    SpecMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// MSE over the whole output vector.
    Single,
    /// Mean of per-section MSEs.
    Multi,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Single => "single",
            LossKind::Multi => "multi",
        }
    }

    /// Multi-task models train on the per-section loss, the single model on plain MSE.
    pub fn for_spec(spec: &ArchitectureSpec) -> Self {
        if spec.variant.is_multi_task() { LossKind::Multi } else { LossKind::Single }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(LossKind::Single),
            "multi" => Ok(LossKind::Multi),
            _ => Err(TrainError::Config(format!("unknown loss `{s}` (single|multi)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Seeds initialization, dropout masks and shuffling.
    pub seed: u64,
    pub dropout: f64,
    /// `None` picks [`LossKind::for_spec`].
    pub loss: Option<LossKind>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, initial_lr: DEFAULT_LR, patience: 20, seed: 0, dropout: 0.5, loss: None, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps >= 0.0) {
            return bad(format!("Adam hyperparameters {a:?} outside β ∈ [0, 1), ε ≥ 0"));
        }
        Ok(())
    }

    pub fn loss_for(&self, spec: &ArchitectureSpec) -> LossKind {
        self.loss.unwrap_or_else(|| LossKind::for_spec(spec))
    }

    pub fn base_lr(&self, epoch: usize) -> f64 {
        scheduled_lr(self.initial_lr, epoch)
    }
}

/// One training input with its normalized target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub base_lr: f64,
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    /// Next epoch to run.
    pub epoch: usize,
    pub best_val: f64,
    pub best_epoch: Option<usize>,
    pub best_params: ModelParams,
    pub epochs_since_best: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(spec: &ArchitectureSpec, config: &TrainConfig) -> Result<Self> {
        let params = model::build(spec, config.seed)?;
        Ok(Self::from_params(params, config.adam))
    }

    pub fn from_params(params: ModelParams, adam: AdamConfig) -> Self {
        let adam = AdamState::new(&params.tensors, adam);
        Self {
            best_params: params.clone(),
            params,
            adam,
            epoch: 0,
            best_val: f64::INFINITY,
            best_epoch: None,
            epochs_since_best: 0,
            stopped_early: false,
            history: Vec::new(),
        }
    }

    pub fn finished(&self, config: &TrainConfig) -> bool {
        self.stopped_early || self.epoch >= config.epochs
    }
}

fn record_loss(tape: &mut Tape, params: &ModelParams, sample: &TrainSample, mode: Mode, kind: LossKind) -> Result<(model::Trace, crate::tensor::Var)> {
    let trace = model::forward_on_tape(tape, params, &sample.image, mode)?;
    if sample.target.len() != params.spec.output_len() {
        return Err(TrainError::Shape(format!("target {} vs model output {}", sample.target.len(), params.spec.output_len())));
    }
    let y = tape.constant(Tensor::vector(sample.target.clone()));
    let loss = match kind {
        LossKind::Single => loss_single(tape, y, trace.output)?,
        LossKind::Multi => loss_multi(tape, y, trace.output, params.spec.sections)?,
    };
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(TrainError::NonFinite(format!("loss is {value}")));
    }
    Ok((trace, loss))
}

/// Loss and parameter gradients for one sample.
pub fn loss_and_grads(params: &ModelParams, sample: &TrainSample, mode: Mode, kind: LossKind) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (trace, loss) = record_loss(&mut tape, params, sample, mode, kind)?;
    let mut grads = tape.backward(loss)?;
    let g = trace
        .params
        .iter()
        .zip(&params.tensors)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((tape.value(loss).data()[0], g))
}

/// Mean inference-mode loss over `samples`.
pub fn mean_loss(params: &ModelParams, samples: &[TrainSample], kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let (_, loss) = record_loss(&mut tape, params, s, Mode::inference(), kind)?;
        total += tape.value(loss).data()[0];
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Dropout seed of Adam step `t` (1-based).
pub fn dropout_seed(seed: u64, t: u64) -> u64 {
    rng::mix(rng::mix(seed, Stream::Dropout as u64), t)
}

/// Sample order of `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng::stream_rng(seed, Stream::Shuffle, epoch as u64));
    order
}

/// Forward, loss, backward and one Adam update on a single sample.
pub fn train_step(state: &mut TrainState, sample: &TrainSample, config: &TrainConfig, base_lr: f64) -> Result<f64> {
    let kind = config.loss_for(&state.params.spec);
    let mode = Mode::training(config.dropout, dropout_seed(config.seed, state.adam.t + 1));
    let (loss, grads) = loss_and_grads(&state.params, sample, mode, kind)?;
    adam_step(&mut state.params.tensors, &grads, &mut state.adam, base_lr)?;
    Ok(loss)
}

/// Runs one epoch and the early-stopping bookkeeping. Returns its record.
pub fn run_epoch(state: &mut TrainState, train: &[TrainSample], val: &[TrainSample], config: &TrainConfig) -> Result<EpochRecord> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let epoch = state.epoch;
    let base_lr = config.base_lr(epoch);
    let mut total = 0.0;
    for i in epoch_order(config.seed, epoch, train.len()) {
        total += train_step(state, &train[i], config, base_lr)?;
    }
    let val_loss = mean_loss(&state.params, val, config.loss_for(&state.params.spec))?;
    let record = EpochRecord { epoch, train_loss: total / train.len() as f64, val_loss, base_lr };
    state.history.push(record);
    state.epoch += 1;
    if val_loss < state.best_val {
        state.best_val = val_loss;
        state.best_epoch = Some(epoch);
        state.best_params = state.params.clone();
        state.epochs_since_best = 0;
    } else {
        state.epochs_since_best += 1;
        if state.epochs_since_best > config.patience {
            state.stopped_early = true;
        }
    }
    Ok(record)
}

/// Trains until `config.epochs` or early stop, calling `on_epoch` after each epoch.
pub fn train_loop(
    state: &mut TrainState,
    train: &[TrainSample],
    val: &[TrainSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState, &EpochRecord) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    while !state.finished(config) {
        let record = run_epoch(state, train, val, config)?;
        on_epoch(state, &record)?;
    }
    Ok(())
}

/// Normalized training samples of one split.
pub fn split_samples(dataset: &Dataset, split: Split) -> Vec<TrainSample> {
    dataset
        .split(split)
        .into_iter()
        .map(|s| TrainSample { image: s.image.clone(), target: dataset.norm.normalize(&s.label) })
        .collect()
}

/// Architecture matching a dataset's image size and label layout.
pub fn spec_for_dataset(dataset: &Dataset, variant: model::Variant, width_factor: f64) -> ArchitectureSpec {
    ArchitectureSpec {
        variant,
        input_hw: (dataset.height, dataset.width),
        width_factor,
        sections: dataset.sections,
        controls_per_section: dataset.controls_per_section,
    }
}

/// Trains a fresh model on the dataset's train split, stopping on its validation split.
pub fn train(dataset: &Dataset, spec: &ArchitectureSpec, config: &TrainConfig) -> Result<TrainState> {
    let train = split_samples(dataset, Split::Train);
    let val = split_samples(dataset, Split::Val);
    let mut state = TrainState::new(spec, config)?;
    train_loop(&mut state, &train, &val, config, |_, _| Ok(()))?;
    Ok(state)
}

/// `epoch,train_loss,val_loss,base_lr` with full-precision values.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,base_lr\n");
    for r in history {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss, r.base_lr));
    }
    out
}

/// Model predictions in mm for each sample image.
pub fn predict_mm(params: &ModelParams, dataset: &Dataset, split: Split) -> Result<Vec<Vec<f64>>> {
    dataset
        .split(split)
        .into_iter()
        .map(|s| Ok(dataset.norm.denormalize(&model::forward(params, &s.image, Mode::inference())?.values)))
        .collect()
}
