//! Subcommand implementations.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context};
use sternshape::evaluator::{
    bspline_floor_row, dataset_floor_row, emit_report, evaluate_params, read_report_csv, render_markdown, EvalReport,
    ReportFormat, DEFAULT_RECONSTRUCT_POINTS,
};
use sternshape::gradcam::{gradcam as grad_cam, write_overlay};
use sternshape::hullgeom::{
    fit_control_points, read_offsets, remove_straight_segments, write_controls, ControlPolygon, SectionOffsets, DEFAULT_N,
    DEFAULT_STRAIGHT_TOL,
};
use sternshape::model::Variant;
use sternshape::synthgen::{build_dataset, load_dataset, read_image, CaseTag, DatasetConfig, Split};
use sternshape::trainer::{
    history_csv, load_best_params, load_checkpoint, save_checkpoint, spec_for_dataset, split_samples, train_loop, LossKind,
    TrainConfig, TrainState, DEFAULT_LR,
};

use crate::config::Resolver;
use crate::{CliError, EvalArgs, GenDataArgs, GradcamArgs, PreprocessArgs, ReportArgs, RoundtripArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

pub const RUN_CONFIG: &str = "config.txt";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const HISTORY: &str = "history.csv";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_flag<T: FromStr>(key: &str, v: Option<String>) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    v.map(|s| s.parse::<T>().map_err(|e| usage(format!("--{key}: {e}")))).transpose()
}

/// `<path>.config`, the resolved configuration of a single-file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config");
    PathBuf::from(s)
}

/// Train, validation and test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Fractions([f64; 3]);

impl FromStr for Fractions {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        <[f64; 3]>::try_from(v).map(Fractions).map_err(|_| format!("expected three fractions, got `{s}`"))
    }
}

impl fmt::Display for Fractions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?},{:?},{:?}", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Protocol {
    Control,
    Offset,
    Both,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "control" => Ok(Protocol::Control),
            "offset" => Ok(Protocol::Offset),
            "both" => Ok(Protocol::Both),
            _ => Err(format!("unknown protocol `{s}` (control|offset|both)")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Control => "control",
            Protocol::Offset => "offset",
            Protocol::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Format(ReportFormat);

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format(ReportFormat::Csv)),
            "markdown" | "md" => Ok(Format(ReportFormat::Markdown)),
            _ => Err(format!("unknown format `{s}` (csv|markdown)")),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "markdown",
        })
    }
}

const GEN_KEYS: &[&str] = &["out", "count", "seed", "case", "height", "width", "split", "controls", "overwrite"];

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), GEN_KEYS)?;
    let defaults = DatasetConfig::default();
    let out: String = r.require("out", a.out)?;
    let count = r.get("count", a.count, defaults.count)?;
    let seed = r.get("seed", a.seed, defaults.seed)?;
    let case: CaseTag = r.get("case", parse_flag("case", a.case)?, defaults.case)?;
    let height = r.get("height", a.height, defaults.height)?;
    let width = r.get("width", a.width, defaults.width)?;
    let split: Fractions = r.get("split", parse_flag("split", a.split)?, Fractions(defaults.split))?;
    let controls = r.get("controls", a.controls, defaults.n + 1)?;
    let overwrite = r.switch("overwrite", a.overwrite)?;
    if controls < 3 {
        return Err(usage(format!("--controls {controls} must be at least 3")));
    }
    let config = DatasetConfig { count, seed, split: split.0, height, width, case, n: controls - 1, overwrite, ..defaults };
    let dir = PathBuf::from(&out);
    let manifest = build_dataset(&dir, &config).with_context(|| format!("gen-data into {out}"))?;
    let n = |s: Split| manifest.iter().filter(|e| e.split == s).count();
    println!(
        "wrote {} samples to {out}: train {}, val {}, test {} ({case}, {height}x{width}, seed {seed})",
        manifest.len(),
        n(Split::Train),
        n(Split::Val),
        n(Split::Test)
    );
    Ok(())
}

fn fit_sections(sections: &[SectionOffsets], controls: usize, tol: f64) -> anyhow::Result<Vec<ControlPolygon>> {
    sections
        .iter()
        .map(|s| {
            let i = s.section_index();
            let trimmed = remove_straight_segments(s, tol).map_err(|e| e.in_section(i))?;
            Ok(fit_control_points(&trimmed, controls - 1).map_err(|e| e.in_section(i))?)
        })
        .collect()
}

const PRE_KEYS: &[&str] = &["offsets", "out", "controls", "tol"];

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), PRE_KEYS)?;
    let offsets: String = r.require("offsets", a.offsets)?;
    let out: String = r.require("out", a.out)?;
    let controls = r.get("controls", a.controls, DEFAULT_N + 1)?;
    let tol = r.get("tol", a.tol, DEFAULT_STRAIGHT_TOL)?;
    if controls < 3 {
        return Err(usage(format!("--controls {controls} must be at least 3")));
    }
    let sections = read_offsets(Path::new(&offsets)).with_context(|| format!("reading {offsets}"))?;
    let polygons = fit_sections(&sections, controls, tol)?;
    let out = PathBuf::from(out);
    write_controls(&out, &polygons).with_context(|| format!("writing {}", out.display()))?;
    r.write(&sidecar(&out)).context("writing resolved config")?;
    println!("fitted {} sections with {controls} controls to {}", polygons.len(), out.display());
    Ok(())
}

const RT_KEYS: &[&str] = &["offsets", "data", "split", "controls", "tol", "points", "out"];

pub fn roundtrip(a: RoundtripArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), RT_KEYS)?;
    let offsets: Option<String> = r.optional("offsets", a.offsets)?;
    let data: Option<String> = r.optional("data", a.data)?;
    let controls = r.get("controls", a.controls, DEFAULT_N + 1)?;
    let tol = r.get("tol", a.tol, DEFAULT_STRAIGHT_TOL)?;
    let points = r.get("points", a.points, DEFAULT_RECONSTRUCT_POINTS)?;
    let out: Option<String> = r.optional("out", a.out)?;
    if controls < 3 {
        return Err(usage(format!("--controls {controls} must be at least 3")));
    }
    let truth: Vec<Vec<SectionOffsets>> = match (offsets, data) {
        (Some(f), None) => vec![read_offsets(Path::new(&f)).with_context(|| format!("reading {f}"))?],
        (None, Some(d)) => {
            let split: Split = r.get("split", parse_flag("split", a.split)?, Split::Test)?;
            let ds = load_dataset(Path::new(&d)).with_context(|| format!("loading {d}"))?;
            ds.split(split).into_iter().map(|s| s.offsets.clone()).collect()
        }
        (Some(_), Some(_)) => return Err(usage("give either --offsets or --data, not both")),
        (None, None) => return Err(usage("missing required value `--offsets` or `--data`")),
    };
    let fitted = truth.iter().map(|hull| fit_sections(hull, controls, tol)).collect::<anyhow::Result<Vec<_>>>()?;
    let row = bspline_floor_row("B-spline", &fitted, &truth, points).map_err(anyhow::Error::from)?;
    let sections = row.sections.len();
    let report = EvalReport { title: "B-spline representation error".into(), sections, rows: vec![row] };
    print!("{}", render_markdown(&report));
    if let Some(out) = out {
        let out = PathBuf::from(out);
        emit_report(&report, ReportFormat::Csv, &out).with_context(|| format!("writing {}", out.display()))?;
        r.write(&sidecar(&out)).context("writing resolved config")?;
    }
    Ok(())
}

const TRAIN_KEYS: &[&str] =
    &["data", "out", "variant", "width", "epochs", "lr", "patience", "seed", "dropout", "loss", "resume", "overwrite"];

pub fn train(a: TrainArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), TRAIN_KEYS)?;
    let defaults = TrainConfig::default();
    let data: String = r.require("data", a.data)?;
    let out: String = r.require("out", a.out)?;
    let variant: Variant = r.get("variant", parse_flag("variant", a.variant)?, Variant::MtConv0Fc3)?;
    let width = r.get("width", a.width, 0.125)?;
    let epochs = r.get("epochs", a.epochs, defaults.epochs)?;
    let lr = r.get("lr", a.lr, DEFAULT_LR)?;
    let patience = r.get("patience", a.patience, defaults.patience)?;
    let seed = r.get("seed", a.seed, defaults.seed)?;
    let dropout = r.get("dropout", a.dropout, defaults.dropout)?;
    let loss: Option<LossKind> = r.optional("loss", parse_flag("loss", a.loss)?)?;
    let resume = r.switch("resume", a.resume)?;
    let overwrite = r.switch("overwrite", a.overwrite)?;
    let config = TrainConfig { epochs, initial_lr: lr, patience, seed, dropout, loss, ..defaults };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let dataset = load_dataset(Path::new(&data)).with_context(|| format!("loading {data}"))?;
    let spec = spec_for_dataset(&dataset, variant, width);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let dir = PathBuf::from(&out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {out}"))?;
    let ckpt = dir.join(CHECKPOINT);
    let mut state = if resume {
        load_checkpoint(&ckpt, Some(&spec)).with_context(|| format!("resuming from {}", ckpt.display()))?
    } else {
        if ckpt.exists() && !overwrite {
            return Err(anyhow!("{} already has a checkpoint; pass --resume or --overwrite", dir.display()).into());
        }
        TrainState::new(&spec, &config).context("building the model")?
    };
    r.write(&dir.join(RUN_CONFIG)).context("writing resolved config")?;
    let train_set = split_samples(&dataset, Split::Train);
    let val_set = split_samples(&dataset, Split::Val);
    eprintln!(
        "training {variant} ({} parameters) on {} train / {} val samples",
        state.params.total_params(),
        train_set.len(),
        val_set.len()
    );
    train_loop(&mut state, &train_set, &val_set, &config, |s, rec| {
        save_checkpoint(&ckpt, s)?;
        std::fs::write(dir.join(HISTORY), history_csv(&s.history))?;
        eprintln!("epoch {:4}  train {:.6}  val {:.6}  lr {:e}", rec.epoch, rec.train_loss, rec.val_loss, rec.base_lr);
        Ok(())
    })
    .context("training")?;
    save_checkpoint(&ckpt, &state).context("saving checkpoint")?;
    std::fs::write(dir.join(HISTORY), history_csv(&state.history)).context("writing loss history")?;
    let best = state.best_epoch.map_or("none".to_string(), |e| e.to_string());
    println!(
        "{variant}: {} epochs{}, best epoch {best} (val loss {:.6}), checkpoint {}",
        state.epoch,
        if state.stopped_early { " (early stop)" } else { "" },
        state.best_val,
        ckpt.display()
    );
    Ok(())
}

const EVAL_KEYS: &[&str] = &["data", "model", "split", "protocol", "floor", "points", "out"];

pub const CONTROL_REPORT: &str = "control_points";
pub const OFFSET_REPORT: &str = "offsets";

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), EVAL_KEYS)?;
    let data: String = r.require("data", a.data)?;
    let models = r.list("model", a.models)?;
    let split: Split = r.get("split", parse_flag("split", a.split)?, Split::Test)?;
    let protocol: Protocol = r.get("protocol", parse_flag("protocol", a.protocol)?, Protocol::Both)?;
    let floor = r.switch("floor", a.floor)?;
    let points = r.get("points", a.points, DEFAULT_RECONSTRUCT_POINTS)?;
    let out: String = r.require("out", a.out)?;
    let models: Vec<(String, String)> = models
        .iter()
        .map(|m| {
            m.split_once('=')
                .map(|(n, p)| (n.trim().to_string(), p.trim().to_string()))
                .filter(|(n, p)| !n.is_empty() && !p.is_empty())
                .ok_or_else(|| usage(format!("--model `{m}`: expected name=path")))
        })
        .collect::<Result<_>>()?;
    if models.is_empty() && !floor {
        return Err(usage("nothing to evaluate: give --model name=path and/or --floor"));
    }

    let dataset = load_dataset(Path::new(&data)).with_context(|| format!("loading {data}"))?;
    if dataset.split(split).is_empty() {
        return Err(anyhow!("{data} has no {split} samples").into());
    }
    let mut control = EvalReport::new(format!("Control point RMSE for {split} set"), dataset.sections);
    let mut offset = EvalReport::new(format!("Offset RMSE for {split} set"), dataset.sections);
    for (name, path) in &models {
        let params = load_best_params(Path::new(path), None).with_context(|| format!("loading {path}"))?;
        let expected = spec_for_dataset(&dataset, params.spec.variant, params.spec.width_factor);
        if params.spec != expected {
            return Err(anyhow!("{path}: model `{}` does not fit dataset `{}`", params.spec.to_text(), expected.to_text()).into());
        }
        let (cp, off) = evaluate_params(name, &params, &dataset, split, Some(points)).with_context(|| format!("evaluating {name}"))?;
        control.rows.push(cp);
        offset.rows.push(off);
    }
    if floor {
        offset.rows.push(dataset_floor_row("B-spline", &dataset, split, Some(points)).context("B-spline floor")?);
    }
    let dir = PathBuf::from(&out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {out}"))?;
    let emit = |report: &EvalReport, stem: &str| -> anyhow::Result<()> {
        emit_report(report, ReportFormat::Csv, &dir.join(format!("{stem}.csv")))?;
        emit_report(report, ReportFormat::Markdown, &dir.join(format!("{stem}.md")))?;
        println!("{}", render_markdown(report));
        Ok(())
    };
    if protocol != Protocol::Offset && !control.rows.is_empty() {
        emit(&control, CONTROL_REPORT).context("writing control-point report")?;
    }
    if protocol != Protocol::Control {
        emit(&offset, OFFSET_REPORT).context("writing offset report")?;
    }
    r.write(&dir.join(RUN_CONFIG)).context("writing resolved config")?;
    Ok(())
}

const GRADCAM_KEYS: &[&str] = &["checkpoint", "image", "task", "all_tasks", "out"];

pub fn gradcam(a: GradcamArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), GRADCAM_KEYS)?;
    let checkpoint: String = r.require("checkpoint", a.checkpoint)?;
    let image: String = r.require("image", a.image)?;
    let task: Option<usize> = r.optional("task", a.task)?;
    let all = r.switch("all_tasks", a.all_tasks)?;
    let out: String = r.require("out", a.out)?;
    if all == task.is_some() {
        return Err(usage("give exactly one of --task K or --all-tasks"));
    }
    let params = load_best_params(Path::new(&checkpoint), None).with_context(|| format!("loading {checkpoint}"))?;
    let img = read_image(Path::new(&image)).with_context(|| format!("reading {image}"))?;
    let tasks: Vec<usize> = match task {
        Some(k) => vec![k],
        None => (0..params.spec.sections).collect(),
    };
    let dir = PathBuf::from(&out);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {out}"))?;
    for k in tasks {
        let map = grad_cam(&params, &img, k).with_context(|| format!("Grad-CAM for task {k}"))?;
        write_overlay(&dir.join(format!("task_{k:02}.ppm")), &map, &img).context("writing overlay")?;
        let rows: Vec<String> = map
            .values
            .chunks(map.width)
            .map(|row| row.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","))
            .collect();
        std::fs::write(dir.join(format!("task_{k:02}.csv")), rows.join("\n") + "\n").context("writing heatmap")?;
    }
    r.write(&dir.join(RUN_CONFIG)).context("writing resolved config")?;
    println!("wrote Grad-CAM overlays to {out}");
    Ok(())
}

const REPORT_KEYS: &[&str] = &["input", "format", "title", "out"];

pub fn report(a: ReportArgs) -> Result<()> {
    let mut r = Resolver::new(a.config.as_deref(), REPORT_KEYS)?;
    let inputs = r.list("input", a.inputs)?;
    let format: Format = r.get("format", parse_flag("format", a.format)?, Format(ReportFormat::Markdown))?;
    let title: Option<String> = r.optional("title", a.title)?;
    let out: String = r.require("out", a.out)?;
    if inputs.is_empty() {
        return Err(usage("missing required value `--input`"));
    }
    let mut merged: Option<EvalReport> = None;
    for path in &inputs {
        let rep = read_report_csv(Path::new(path)).with_context(|| format!("reading {path}"))?;
        match merged.as_mut() {
            None => merged = Some(rep),
            Some(m) if m.sections == rep.sections => m.rows.extend(rep.rows),
            Some(m) => return Err(anyhow!("{path} has {} sections, expected {}", rep.sections, m.sections).into()),
        }
    }
    let mut merged = merged.expect("at least one input");
    if let Some(t) = title {
        merged.title = t;
    }
    let out = PathBuf::from(out);
    emit_report(&merged, format.0, &out).with_context(|| format!("writing {}", out.display()))?;
    r.write(&sidecar(&out)).context("writing resolved config")?;
    Ok(())
}

