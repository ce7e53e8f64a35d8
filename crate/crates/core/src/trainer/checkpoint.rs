//! Checkpoints: parameters, Adam moments, best-validation parameters and the
//! loss history in one tensor file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{AdamConfig, AdamState, EpochRecord, Result, TrainError, TrainState};
use crate::model::{self, ArchitectureSpec, ModelParams};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor, TensorFile};

pub const CHECKPOINT_TAG: &str = "sternshape-checkpoint 1";

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

fn history_text(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| format!("{}:{:?}:{:?}:{:?}", r.epoch, r.train_loss, r.val_loss, r.base_lr))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_history(text: &str) -> Result<Vec<EpochRecord>> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let f: Vec<&str> = entry.split(':').collect();
            let err = || bad(format!("bad history entry `{entry}`"));
            if f.len() != 4 {
                return Err(err());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err());
            Ok(EpochRecord { epoch: f[0].parse().map_err(|_| err())?, train_loss: num(f[1])?, val_loss: num(f[2])?, base_lr: num(f[3])? })
        })
        .collect()
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let a = &state.adam.config;
    let meta = [
        ("format", CHECKPOINT_TAG.to_string()),
        ("spec", state.params.spec.to_text().replace(' ', ";")),
        ("epoch", state.epoch.to_string()),
        ("adam_t", state.adam.t.to_string()),
        ("adam_betas", format!("{:?}:{:?}:{:?}", a.beta1, a.beta2, a.eps)),
        ("best_val", format!("{:?}", state.best_val)),
        ("best_epoch", state.best_epoch.map_or("none".to_string(), |e| e.to_string())),
        ("epochs_since_best", state.epochs_since_best.to_string()),
        ("stopped_early", state.stopped_early.to_string()),
        ("history", history_text(&state.history)),
    ];
    let mut tensors = Vec::with_capacity(4 * state.params.len());
    for (prefix, source) in [
        ("param/", &state.params.tensors),
        ("adam.m/", &state.adam.m),
        ("adam.v/", &state.adam.v),
        ("best/", &state.best_params.tensors),
    ] {
        for (name, t) in state.params.names.iter().zip(source) {
            tensors.push((format!("{prefix}{name}"), t.clone()));
        }
    }
    let file = TensorFile { meta: meta.into_iter().map(|(k, v)| (k.to_string(), v)).collect(), tensors };
    let mut out = BufWriter::new(File::create(path)?);
    write_tensor_file(&mut out, &file)?;
    out.flush()?;
    Ok(())
}

fn read(path: &Path) -> Result<TensorFile> {
    let file = read_tensor_file(&mut BufReader::new(File::open(path)?))
        .map_err(|e| bad(format!("{}: {e}", path.display())))?;
    match file.meta("format") {
        Some(CHECKPOINT_TAG) => Ok(file),
        Some(other) => Err(bad(format!("{}: unsupported checkpoint version `{other}`", path.display()))),
        None => Err(bad(format!("{}: not a checkpoint", path.display()))),
    }
}

fn meta<'a>(file: &'a TensorFile, key: &str) -> Result<&'a str> {
    file.meta(key).ok_or_else(|| bad(format!("missing `{key}`")))
}

fn parsed<T: std::str::FromStr>(file: &TensorFile, key: &str) -> Result<T> {
    let v = meta(file, key)?;
    v.parse().map_err(|_| bad(format!("bad `{key}` value `{v}`")))
}

fn file_spec(file: &TensorFile) -> Result<ArchitectureSpec> {
    Ok(ArchitectureSpec::from_text(&meta(file, "spec")?.replace(';', " "))?)
}

fn check_spec(found: &ArchitectureSpec, expected: Option<&ArchitectureSpec>) -> Result<()> {
    match expected {
        Some(e) if e != found => Err(TrainError::SpecMismatch { expected: e.to_text(), found: found.to_text() }),
        _ => Ok(()),
    }
}

fn params_with_prefix(file: &TensorFile, spec: &ArchitectureSpec, prefix: &str) -> Result<ModelParams> {
    let layout = model::layout(spec)?;
    let mut params = ModelParams {
        spec: spec.clone(),
        names: Vec::with_capacity(layout.params.len()),
        owners: Vec::with_capacity(layout.params.len()),
        tensors: Vec::with_capacity(layout.params.len()),
    };
    for p in layout.params {
        let name = format!("{prefix}{}", p.name);
        let t = file.tensor(&name).ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
        if t.shape() != p.shape.as_slice() {
            return Err(bad(format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), p.shape)));
        }
        params.names.push(p.name);
        params.owners.push(p.owner);
        params.tensors.push(t.clone());
    }
    Ok(params)
}

/// Restores a full training state. With `expected`, a different architecture
/// in the file is an error.
pub fn load_checkpoint(path: &Path, expected: Option<&ArchitectureSpec>) -> Result<TrainState> {
    let file = read(path)?;
    let spec = file_spec(&file)?;
    check_spec(&spec, expected)?;
    let params = params_with_prefix(&file, &spec, "param/")?;
    let moments = |prefix: &str| -> Result<Vec<Tensor>> { Ok(params_with_prefix(&file, &spec, prefix)?.tensors) };
    let betas: Vec<f64> = meta(&file, "adam_betas")?
        .split(':')
        .map(|s| s.parse().map_err(|_| bad("bad `adam_betas`")))
        .collect::<Result<_>>()?;
    if betas.len() != 3 {
        return Err(bad("bad `adam_betas`"));
    }
    let adam = AdamState {
        config: AdamConfig { beta1: betas[0], beta2: betas[1], eps: betas[2] },
        t: parsed(&file, "adam_t")?,
        m: moments("adam.m/")?,
        v: moments("adam.v/")?,
    };
    let best_epoch = match meta(&file, "best_epoch")? {
        "none" => None,
        _ => Some(parsed(&file, "best_epoch")?),
    };
    Ok(TrainState {
        best_params: params_with_prefix(&file, &spec, "best/")?,
        params,
        adam,
        epoch: parsed(&file, "epoch")?,
        best_val: parsed(&file, "best_val")?,
        best_epoch,
        epochs_since_best: parsed(&file, "epochs_since_best")?,
        stopped_early: parsed(&file, "stopped_early")?,
        history: parse_history(meta(&file, "history")?)?,
    })
}

/// The best-validation parameters only, for evaluation.
pub fn load_best_params(path: &Path, expected: Option<&ArchitectureSpec>) -> Result<ModelParams> {
    let file = read(path)?;
    let spec = file_spec(&file)?;
    check_spec(&spec, expected)?;
    params_with_prefix(&file, &spec, "best/")
}
