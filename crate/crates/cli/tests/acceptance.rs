//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 1 4`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sternshape::evaluator::{bspline_floor_row, control_point_rmse, offset_rmse, polygons_from_flat, read_report_csv};
use sternshape::gradcam::{gradcam, GradCamError};
use sternshape::hullgeom::{
    chord_params, eval_curve, fit_control_points, fit_with_params, interp_y_at_z, open_uniform_knots, reconstruct_offsets,
    remove_straight_segments, z_levels, ChordParams, ControlPolygon, Point, SectionOffsets, DEFAULT_STRAIGHT_TOL, ORDER,
};
use sternshape::model::{self, build, layout, loss_multi, loss_single, task_losses, ArchitectureSpec, Mode, Variant};
use sternshape::rng::mix;
use sternshape::synthgen::{build_dataset, generate_variant, load_dataset, DatasetConfig, ParamRanges, Split, SECTIONS};
use sternshape::tensor::{Tape, Tensor, Var};
use sternshape::trainer::{
    adam_step, lr_schedule, predict_mm, split_samples, spec_for_dataset, train_loop, AdamConfig,
    AdamState, TrainConfig, TrainState,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(s < limit_s, format!("{detail}; {s:.2} s (limit {limit_s} s)"))
}

// ---------------------------------------------------------------- criterion 1

/// Relative residual bound for exact reproduction.
const SPLINE_EXACT_TOL: f64 = 1e-9;

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let knots = open_uniform_knots(22, ORDER).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for trial in 0..20 {
        // Uniform and strongly non-uniform parameter sets on [0, 1].
        let u: Vec<f64> = (0..50)
            .map(|i| {
                let s = i as f64 / 49.0;
                if trial % 2 == 0 { s } else { 1.0 - (1.0 - s).powi(3) }
            })
            .collect();
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(-20_000.0..20_000.0)).collect();
        let degree = trial % 3;
        let poly = |u: f64| {
            let q = if degree == 2 { 1.0 } else { 0.0 };
            let l = if degree >= 1 { 1.0 } else { 0.0 };
            Point::new(
                25_000.0 + c[0] * 0.1 + l * c[1] * u + q * c[2] * u * u,
                12_000.0 + c[3] * 0.1 + l * c[4] * u + q * c[5] * u * u,
            )
        };
        let pts: Vec<Point> = u.iter().map(|&x| poly(x)).collect();
        let section = SectionOffsets::from_curve(0, pts.clone());
        let fit = fit_with_params(&section, &ChordParams(u.clone()), 22).map_err(|e| e.to_string())?;
        let scale = pts.iter().map(|p| p.y.abs().max(p.z.abs())).fold(1.0, f64::max);
        for (p, &x) in pts.iter().zip(&u) {
            let r = eval_curve(&fit, &knots, x).map_err(|e| e.to_string())?;
            worst = worst.max(r.dist(*p) / scale);
        }
    }
    // A straight run with uniform spacing is linear in its own chord length.
    let line: Vec<Point> = (0..50).map(|i| Point::new(300.0 + 500.0 * i as f64, 200.0 * i as f64)).collect();
    let fit = fit_control_points(&SectionOffsets::from_curve(0, line.clone()), 22).map_err(|e| e.to_string())?;
    let u = chord_params(&line).map_err(|e| e.to_string())?;
    for (p, &x) in line.iter().zip(u.as_slice()) {
        let r = eval_curve(&fit, &knots, x).map_err(|e| e.to_string())?;
        worst = worst.max(r.dist(*p) / 25_000.0);
    }
    let ok = worst < SPLINE_EXACT_TOL;
    let out = within(t0.elapsed(), 1.0, format!("max relative residual {worst:.2e} (tol {SPLINE_EXACT_TOL:e})"));
    if ok { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------------- criterion 2

const ROUNDTRIP_BOUND_MM: f64 = 5.0;
const ROUNDTRIP_VARIANTS: u64 = 100;

/// Independent offset comparison written against hullgeom primitives only.
fn hand_offset_rmse(fitted: &[Vec<ControlPolygon>], truth: &[Vec<SectionOffsets>]) -> f64 {
    let (mut sq, mut n) = (0.0, 0usize);
    for (hull_fit, hull) in fitted.iter().zip(truth) {
        for (poly, section) in hull_fit.iter().zip(hull) {
            let recon = reconstruct_offsets(poly, 500).unwrap();
            for z in z_levels(section, 50).unwrap() {
                let d = interp_y_at_z(recon.points(), z) - interp_y_at_z(section.points(), z);
                sq += d * d;
                n += 1;
            }
        }
    }
    (sq / n as f64).sqrt()
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let ranges = ParamRanges::default();
    let mut truth = Vec::new();
    let mut fitted = Vec::new();
    for id in 0..ROUNDTRIP_VARIANTS {
        let v = generate_variant(id, mix(2024, id), &ranges.baseline(), &ranges).map_err(|e| e.to_string())?;
        let polys = v
            .sections
            .iter()
            .map(|s| fit_control_points(&remove_straight_segments(s, DEFAULT_STRAIGHT_TOL)?, 22))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        assert!(v.sections.iter().flat_map(|s| s.points()).all(|p| p.y <= 29_000.0 && p.z <= 21_000.0));
        fitted.push(polys);
        truth.push(v.sections);
    }
    let row = bspline_floor_row("B-spline", &fitted, &truth, 500).map_err(|e| e.to_string())?;
    let hand = hand_offset_rmse(&fitted, &truth);
    let agree = (row.total - hand).abs() <= 1e-9 * hand;
    let worst = row.sections.iter().cloned().fold(0.0, f64::max);
    let detail = format!(
        "Total {:.3} mm over {ROUNDTRIP_VARIANTS} variants (bound {ROUNDTRIP_BOUND_MM} mm), worst section {worst:.3} mm, independent recomputation {hand:.3} mm",
        row.total
    );
    let out = within(t0.elapsed(), 30.0, detail);
    if row.total <= ROUNDTRIP_BOUND_MM && agree { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------------- criterion 3

const OP_GRAD_TOL: f64 = 1e-6;
const COMPOSITE_GRAD_TOL: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest central-difference relative error over every input element.
fn fd_error(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-3;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars);
    let grads = tape.backward(root).unwrap();
    let eval = |k: usize, i: usize, delta: f64| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let mut t = t.clone();
                if j == k {
                    t.data_mut()[i] += delta;
                }
                tape.leaf(t)
            })
            .collect();
        let r = f(&mut tape, &vars);
        tape.value(r).data()[0]
    };
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("tracked input has a gradient");
        for i in 0..t.numel() {
            let numeric = (eval(k, i, H) - eval(k, i, -H)) / (2.0 * H);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
    }
    worst
}

fn project(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let n = tape.value(v).numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = tape.constant(random(&mut rng, &[1, n]));
    let z = tape.constant(Tensor::zeros(&[1]));
    let flat = tape.flatten(v).unwrap();
    tape.dense(flat, c, z).unwrap()
}

fn criterion_3() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ops = Vec::new();
    let conv_in = [random(&mut rng, &[2, 5, 4]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3])];
    ops.push(("conv2d", fd_error(&conv_in, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2]).unwrap();
        project(t, y, 10)
    })));
    let pool_in = [Tensor::new(vec![2, 5, 6], (0..60).map(|i| ((i * 37) % 60) as f64 * 0.01).collect()).unwrap()];
    ops.push(("maxpool2", fd_error(&pool_in, |t, v| {
        let y = t.maxpool2(v[0]).unwrap();
        project(t, y, 11)
    })));
    let dense_in = [random(&mut rng, &[4]), random(&mut rng, &[3, 4]), random(&mut rng, &[3])];
    ops.push(("dense", fd_error(&dense_in, |t, v| {
        let y = t.dense(v[0], v[1], v[2]).unwrap();
        project(t, y, 12)
    })));
    let relu_in = [Tensor::vector((0..12).map(|i| if i % 2 == 0 { 0.05 + i as f64 * 0.1 } else { -0.05 - i as f64 * 0.1 }).collect())];
    ops.push(("relu", fd_error(&relu_in, |t, v| {
        let y = t.relu(v[0]);
        project(t, y, 13)
    })));
    let drop_in = [random(&mut rng, &[20])];
    ops.push(("dropout", fd_error(&drop_in, |t, v| {
        let y = t.dropout(v[0], 0.3, true, 99).unwrap();
        project(t, y, 14)
    })));
    let mse_in = [random(&mut rng, &[6]), random(&mut rng, &[6])];
    ops.push(("mse", fd_error(&mse_in, |t, v| t.mse(v[0], v[1]).unwrap())));
    let misc_in = [random(&mut rng, &[2, 3]), random(&mut rng, &[6])];
    ops.push(("reshape/add/scale/slice/concat/sum", fd_error(&misc_in, |t, v| {
        let flat = t.reshape(v[0], &[6]).unwrap();
        let s = t.add(flat, v[1]).unwrap();
        let c = t.scale(s, -1.7);
        let part = t.slice(c, 1, 4).unwrap();
        let cat = t.concat(&[part, v[1]]).unwrap();
        let p = project(t, cat, 15);
        let q = t.sum(v[0]);
        t.add(p, q).unwrap()
    })));

    let image = random(&mut rng, &[1, 6, 6]);
    let target = random(&mut rng, &[3]);
    let params = [random(&mut rng, &[2, 1, 3, 3]), random(&mut rng, &[2]), random(&mut rng, &[3, 18]), random(&mut rng, &[3])];
    let composite = fd_error(&params, |t, v| {
        let x = t.constant(image.clone());
        let y = t.constant(target.clone());
        let c = t.conv2d(x, v[0], v[1]).unwrap();
        let r = t.relu(c);
        let p = t.maxpool2(r).unwrap();
        let f = t.flatten(p).unwrap();
        let d = t.dense(f, v[2], v[3]).unwrap();
        t.mse(y, d).unwrap()
    });
    let (worst_name, worst) = ops.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let ok = worst < OP_GRAD_TOL && composite < COMPOSITE_GRAD_TOL;
    let out = within(
        t0.elapsed(),
        30.0,
        format!(
            "{} ops, worst op error {worst:.2e} ({worst_name}, tol {OP_GRAD_TOL:e}), composite {composite:.2e} (tol {COMPOSITE_GRAD_TOL:e})",
            ops.len()
        ),
    );
    if ok { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------------- criterion 4

const ADAM_TOL: f64 = 1e-12;

/// Adam written out on plain scalars, independent of the crate.
fn reference_adam(x0: &[f64], grad: &dyn Fn(&[f64]) -> Vec<f64>, alpha: f64, steps: usize) -> Vec<Vec<f64>> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut x = x0.to_vec();
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(&x);
        let lr = alpha * (1.0 - b2.powf(t as f64)).sqrt() / (1.0 - b1.powf(t as f64));
        for i in 0..x.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= lr * m[i] / (v[i].sqrt() + eps);
        }
        out.push(x.clone());
    }
    out
}

fn crate_adam(x0: &[f64], grad: &dyn Fn(&[f64]) -> Vec<f64>, alpha: f64, steps: usize) -> Vec<Vec<f64>> {
    let mut p = vec![Tensor::vector(x0.to_vec())];
    let mut state = AdamState::new(&p, AdamConfig::default());
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = Tensor::vector(grad(p[0].data()));
        adam_step(&mut p, &[g], &mut state, alpha).unwrap();
        out.push(p[0].data().to_vec());
    }
    out
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let scalar = |x: &[f64]| vec![3.0 * (x[0] + 0.5)];
    let ten = |x: &[f64]| (0..10).map(|i| (0.5 + i as f64) * (x[i] - (i as f64 * 0.7).sin())).collect::<Vec<f64>>();
    let x10: Vec<f64> = (0..10).map(|i| 1.0 - 0.3 * i as f64).collect();
    let mut worst = 0.0f64;
    for alpha in [1e-4, 1e-2] {
        for (x0, g) in [(vec![2.0], &scalar as &dyn Fn(&[f64]) -> Vec<f64>), (x10.clone(), &ten)] {
            for (a, b) in crate_adam(&x0, g, alpha, 100).iter().zip(reference_adam(&x0, g, alpha, 100)) {
                for (x, y) in a.iter().zip(&b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    let sched = [lr_schedule(0), lr_schedule(100), lr_schedule(200)];
    let sched_ok = [1e-4, 1e-5, 1e-6].iter().zip(&sched).all(|(e, g)| ((g - e) / e).abs() < 1e-15);
    let out = within(
        t0.elapsed(),
        1.0,
        format!("max trajectory difference {worst:.2e} (tol {ADAM_TOL:e}); schedule {:e}/{:e}/{:e}", sched[0], sched[1], sched[2]),
    );
    if worst < ADAM_TOL && sched_ok { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------------- criterion 5

const OVERFIT_BOUND_MM: f64 = 1.0;
const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_DATA_SEED: u64 = 5;
const OVERFIT_TRAIN_SEED: u64 = 0;
const OVERFIT_LR: f64 = 1e-3;

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = DatasetConfig {
        count: 6,
        seed: OVERFIT_DATA_SEED,
        split: [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
        height: 32,
        width: 32,
        ..Default::default()
    };
    build_dataset(dir.path(), &data).map_err(|e| e.to_string())?;
    let ds = load_dataset(dir.path()).map_err(|e| e.to_string())?;
    let spec = spec_for_dataset(&ds, Variant::MtConv0Fc3, 0.125);
    let config = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        initial_lr: OVERFIT_LR,
        patience: OVERFIT_EPOCHS,
        seed: OVERFIT_TRAIN_SEED,
        dropout: 0.0,
        ..Default::default()
    };
    let train = split_samples(&ds, Split::Train);
    let val = split_samples(&ds, Split::Val);
    let labels: Vec<Vec<f64>> = ds.split(Split::Train).iter().map(|s| s.label.clone()).collect();
    let mut state = TrainState::new(&spec, &config).map_err(|e| e.to_string())?;
    let mut reached: Option<(usize, f64)> = None;
    let mut last = f64::NAN;
    train_loop(&mut state, &train, &val, &config, |s, rec| {
        if reached.is_none() {
            let preds = predict_mm(&s.params, &ds, Split::Train)?;
            last = control_point_rmse("train", &preds, &labels, ds.sections).map(|r| r.total).unwrap_or(f64::NAN);
            if last < OVERFIT_BOUND_MM {
                reached = Some((rec.epoch, last));
            }
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let losses: Vec<f64> = state.history.iter().map(|r| r.train_loss).collect();
    let k = losses.len() / 10;
    let early = losses[..k].iter().sum::<f64>() / k as f64;
    let late = losses[losses.len() - k..].iter().sum::<f64>() / k as f64;
    let trend = format!("mean train loss first/last tenth {early:.3e}/{late:.3e}");
    let detail = match reached {
        Some((e, v)) => format!("train control-point RMSE {v:.3} mm at epoch {e} (bound {OVERFIT_BOUND_MM} mm); {trend}"),
        None => format!("train control-point RMSE {last:.3} mm after {OVERFIT_EPOCHS} epochs (bound {OVERFIT_BOUND_MM} mm); {trend}"),
    };
    let out = within(t0.elapsed(), 300.0, detail);
    if reached.is_some() && late < early { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------------- criterion 6

const LOSS_IDENTITY_TOL: f64 = 1e-12;

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_identity, mut worst_mean) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let y: Vec<f64> = (0..644).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h: Vec<f64> = (0..644).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let (yv, hv) = (tape.constant(Tensor::vector(y.clone())), tape.leaf(Tensor::vector(h.clone())));
        let ls = loss_single(&mut tape, yv, hv).map_err(|e| e.to_string())?;
        let lm = loss_multi(&mut tape, yv, hv, 14).map_err(|e| e.to_string())?;
        let (a, b) = (tape.value(ls).data()[0], tape.value(lm).data()[0]);
        // Plain-loop mean squared error as the independent reference.
        let direct = y.iter().zip(&h).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / 644.0;
        worst_identity = worst_identity.max((a - b).abs()).max((a - direct).abs());
        let per_task = task_losses(&y, &h, 14).map_err(|e| e.to_string())?;
        worst_mean = worst_mean.max((per_task.iter().sum::<f64>() / 14.0 - a).abs());
    }
    check(
        worst_identity <= LOSS_IDENTITY_TOL && worst_mean <= LOSS_IDENTITY_TOL,
        format!("1000 vectors: |multi - single| max {worst_identity:.2e}, |mean task loss - total| max {worst_mean:.2e} (tol {LOSS_IDENTITY_TOL:e})"),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let t0 = Instant::now();
    let mut problems = Vec::new();
    for v in Variant::ALL {
        let spec = ArchitectureSpec { variant: v, input_hw: (227, 256), width_factor: 1.0, sections: 14, controls_per_section: 23 };
        let l = layout(&spec).map_err(|e| e.to_string())?;
        if l.trunk_output != [512, 7, 8] {
            problems.push(format!("{v}: trunk {:?}", l.trunk_output));
        }
        let expected: Vec<usize> = if v == Variant::Single { vec![644] } else { vec![46; 14] };
        if l.head_outputs != expected {
            problems.push(format!("{v}: heads {:?}", l.head_outputs));
        }
        let fc = if v == Variant::Single { vec![4096, 1000] } else { vec![512, 512] };
        if l.fc_widths != fc {
            problems.push(format!("{v}: fc {:?}", l.fc_widths));
        }
    }
    // Built parameters at desk width follow the same walk, and the forward pass emits 644 values.
    let spec = ArchitectureSpec { variant: Variant::MtConv4Fc3, input_hw: (32, 32), width_factor: 1.0 / 16.0, sections: 14, controls_per_section: 23 };
    let params = build(&spec, 1).map_err(|e| e.to_string())?;
    let walk = layout(&spec).map_err(|e| e.to_string())?;
    let shapes_match = params.tensors.iter().zip(&walk.params).all(|(t, p)| t.shape() == p.shape.as_slice());
    let out = model::forward(&params, &Tensor::zeros(&[1, 32, 32]), Mode::inference()).map_err(|e| e.to_string())?;
    if !shapes_match || out.values.len() != 644 || out.tasks() != 14 {
        problems.push("built desk model disagrees with the shape walk".into());
    }
    let detail = if problems.is_empty() {
        "227x256 input: trunk 512x7x8, single FC3 644, 14 task FC3 of 46".to_string()
    } else {
        problems.join("; ")
    };
    let out = within(t0.elapsed(), 10.0, detail);
    if problems.is_empty() { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for wf in [1.0, 0.5, 0.125, 1.0 / 16.0, 1.0 / 64.0] {
        let count = |v| {
            layout(&ArchitectureSpec { variant: v, input_hw: (227, 256), width_factor: wf, sections: 14, controls_per_section: 23 })
                .map(|l| l.total_params())
        };
        let (c0, c4, c8) = (
            count(Variant::MtConv0Fc3).map_err(|e| e.to_string())?,
            count(Variant::MtConv4Fc3).map_err(|e| e.to_string())?,
            count(Variant::MtConv8Fc3).map_err(|e| e.to_string())?,
        );
        ok &= c8 > c4 && c4 > c0;
        lines.push(format!("wf {wf}: {c8} > {c4} > {c0}"));
    }
    check(ok, lines.join(", "))
}

// ---------------------------------------------------------------- criterion 9

const GRADCAM_HAND_TOL: f64 = 1e-12;

fn dense(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..b.numel()).map(|i| b.data()[i] + (0..cols).map(|j| w.data()[i * cols + j] * x[j]).sum::<f64>()).collect()
}

/// Hand-derived Grad-CAM for a conv0 model whose last shared conv is 2x2.
fn hand_cam(p: &sternshape::model::ModelParams, act: &Tensor, k: usize) -> Vec<f64> {
    let (c, plane) = (act.shape()[0], act.shape()[1] * act.shape()[2]);
    let x: Vec<f64> = (0..c).map(|ch| act.data()[ch * plane..(ch + 1) * plane].iter().cloned().fold(f64::MIN, f64::max)).collect();
    let get = |n: &str| p.get(&format!("task{k:02}.{n}")).unwrap();
    let (w1, w2, w3) = (get("fc1.w"), get("fc2.w"), get("fc3.w"));
    let z1 = dense(w1, get("fc1.b"), &x);
    let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
    let z2 = dense(w2, get("fc2.b"), &h1);
    let out = w3.shape()[0];
    let g2: Vec<f64> = (0..z2.len())
        .map(|j| if z2[j] > 0.0 { (0..out).map(|i| w3.data()[i * z2.len() + j]).sum() } else { 0.0 })
        .collect();
    let g1: Vec<f64> = (0..h1.len())
        .map(|j| if z1[j] > 0.0 { (0..z2.len()).map(|i| w2.data()[i * h1.len() + j] * g2[i]).sum() } else { 0.0 })
        .collect();
    let gx: Vec<f64> = (0..c).map(|j| (0..z1.len()).map(|i| w1.data()[i * c + j] * g1[i]).sum()).collect();
    let mut cam = vec![0.0; plane];
    for ch in 0..c {
        for (m, a) in cam.iter_mut().zip(&act.data()[ch * plane..(ch + 1) * plane]) {
            *m += gx[ch] / plane as f64 * a;
        }
    }
    let cam: Vec<f64> = cam.iter().map(|v| v.max(0.0)).collect();
    let max = cam.iter().cloned().fold(0.0, f64::max);
    cam.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect()
}

fn criterion_9() -> Outcome {
    let t0 = Instant::now();
    let spec = |variant| ArchitectureSpec { variant, input_hw: (32, 32), width_factor: 1.0 / 16.0, sections: 14, controls_per_section: 23 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let image = Tensor::new(vec![1, 32, 32], (0..1024).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let e = |e: GradCamError| e.to_string();

    // Image-independent output: a zeroed final layer makes task 4 a constant.
    let mut zeroed = build(&spec(Variant::MtConv4Fc3), 2).map_err(|e| e.to_string())?;
    for n in ["task04.fc3.w", "task04.fc3.b"] {
        zeroed.get_mut(n).unwrap().data_mut().fill(0.0);
    }
    let zero_ok = gradcam(&zeroed, &image, 4).map_err(e)?.is_zero();

    let mut nonneg_ok = true;
    let mut scale_ok = true;
    for v in [Variant::MtConv0Fc3, Variant::MtConv4Fc3, Variant::MtConv8Fc3] {
        let p = build(&spec(v), 3).map_err(|e| e.to_string())?;
        let mut q = p.clone();
        for n in ["task06.fc3.w", "task06.fc3.b"] {
            q.get_mut(n).unwrap().data_mut().iter_mut().for_each(|x| *x *= 3.0);
        }
        let a = gradcam(&p, &image, 6).map_err(e)?;
        nonneg_ok &= a.values.iter().all(|&x| (0.0..=1.0).contains(&x));
        let b = gradcam(&q, &image, 6).map_err(e)?;
        scale_ok &= a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < GRADCAM_HAND_TOL);
    }

    let micro = build(&spec(Variant::MtConv0Fc3), 4).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let trace = model::forward_on_tape(&mut tape, &micro, &image, Mode::inference()).map_err(|e| e.to_string())?;
    let act = tape.value(trace.last_shared_conv).clone();
    let mut hand_err = 0.0f64;
    for k in 0..14 {
        let got = gradcam(&micro, &image, k).map_err(e)?;
        for (a, b) in got.values.iter().zip(hand_cam(&micro, &act, k)) {
            hand_err = hand_err.max((a - b).abs());
        }
    }
    let ok = zero_ok && nonneg_ok && scale_ok && hand_err < GRADCAM_HAND_TOL;
    let out = within(
        t0.elapsed(),
        10.0,
        format!(
            "zero map for constant output: {zero_ok}; values in [0, 1]: {nonneg_ok}; output-scale invariant: {scale_ok}; hand trace max diff {hand_err:.2e} (tol {GRADCAM_HAND_TOL:e})"
        ),
    );
    if ok { out } else { Err(out.unwrap_or_else(|e| e)) }
}

// ---------------------------------------------------------- criteria 10 and 11

const DESIGN_TOLERANCE_MM: f64 = 10.0;
const PIPELINE_LIMIT_S: f64 = 1800.0;
const PIPELINE_COUNT: usize = 100;
const PIPELINE_SIZE: usize = 32;
const PIPELINE_DATA_SEED: u64 = 7;
const PIPELINE_TRAIN_SEED: u64 = 3;
const PIPELINE_EPOCHS: usize = 60;
const PIPELINE_PATIENCE: usize = 20;
const PIPELINE_WIDTH: f64 = 0.125;
/// Desk-scale training runs without dropout; see the README.
const PIPELINE_DROPOUT: f64 = 0.0;

const MODELS: [(&str, &str); 4] =
    [("single", "single"), ("mt-conv0fc3", "conv0"), ("mt-conv4fc3", "conv4"), ("mt-conv8fc3", "conv8")];

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sternshape")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`sternshape {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

struct Pipeline {
    root: PathBuf,
    elapsed: Duration,
}

fn run_pipeline(root: &Path) -> Result<Pipeline, String> {
    let t0 = Instant::now();
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let data = s(root.join("data"));
    let (count, size, seed) = (PIPELINE_COUNT.to_string(), PIPELINE_SIZE.to_string(), PIPELINE_DATA_SEED.to_string());
    cli(&["gen-data", "--out", &data, "--count", &count, "--height", &size, "--width", &size, "--seed", &seed])?;
    let mut model_args = Vec::new();
    for (variant, name) in MODELS {
        let out = s(root.join(name));
        cli(&[
            "train",
            "--data",
            &data,
            "--out",
            &out,
            "--variant",
            variant,
            "--width",
            &PIPELINE_WIDTH.to_string(),
            "--epochs",
            &PIPELINE_EPOCHS.to_string(),
            "--patience",
            &PIPELINE_PATIENCE.to_string(),
            "--seed",
            &PIPELINE_TRAIN_SEED.to_string(),
            "--dropout",
            &PIPELINE_DROPOUT.to_string(),
        ])?;
        model_args.push(format!("{name}={}", s(root.join(name).join("checkpoint.ckpt"))));
    }
    let mut args = vec!["eval", "--data", &data, "--floor"];
    for m in &model_args {
        args.extend(["--model", m.as_str()]);
    }
    let report = s(root.join("report"));
    args.extend(["--out", &report]);
    cli(&args)?;
    Ok(Pipeline { root: root.to_path_buf(), elapsed: t0.elapsed() })
}

/// Value columns of each body row of a markdown table.
fn markdown_rows(path: &Path) -> Result<Vec<(String, usize)>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| Model"))
        .map(|l| {
            let cells: Vec<&str> = l.trim_matches('|').split('|').map(str::trim).collect();
            (cells[0].to_string(), cells.len() - 1)
        })
        .collect())
}

/// Mean-predictor offset RMSE on the test split, printed for scale.
fn mean_predictor_mm(root: &Path) -> Result<f64, String> {
    let ds = load_dataset(&root.join("data")).map_err(|e| e.to_string())?;
    let mean = ds.norm.mean.clone();
    let test = ds.split(Split::Test);
    let preds: Vec<Vec<ControlPolygon>> = test.iter().map(|_| polygons_from_flat(&mean, SECTIONS).unwrap()).collect();
    let truth: Vec<Vec<SectionOffsets>> = test.iter().map(|s| s.offsets.clone()).collect();
    offset_rmse("mean", &preds, &truth, 500).map(|r| r.total).map_err(|e| e.to_string())
}

fn criterion_10(first: &Result<Pipeline, String>) -> Outcome {
    let run = first.as_ref().map_err(Clone::clone)?;
    let report = run.root.join("report");
    let cp = markdown_rows(&report.join("control_points.md"))?;
    let off = markdown_rows(&report.join("offsets.md"))?;
    let cp_shape = cp.len() == 4 && cp.iter().all(|(_, cols)| *cols == 15);
    let floor_row = off.iter().any(|(n, cols)| n == "B-spline" && *cols == 15);
    let offsets = read_report_csv(&report.join("offsets.csv")).map_err(|e| e.to_string())?;
    let mut totals = Vec::new();
    let mut below = true;
    for (_, name) in MODELS {
        let t = offsets.row(name).map(|r| r.total).ok_or_else(|| format!("no offset row for {name}"))?;
        below &= t < DESIGN_TOLERANCE_MM;
        totals.push(format!("{name} {t:.2}"));
    }
    let floor = offsets.row("B-spline").map_or(f64::NAN, |r| r.total);
    let baseline = mean_predictor_mm(&run.root)?;
    let detail = format!(
        "control-point table {}x{} ({}), B-spline row {}; test offset RMSE mm: {} (tolerance {DESIGN_TOLERANCE_MM}), B-spline floor {floor:.2}, mean predictor {baseline:.2}",
        cp.len(),
        cp.first().map_or(0, |r| r.1),
        if cp_shape { "ok" } else { "wrong shape" },
        if floor_row { "present" } else { "missing" },
        totals.join(", ")
    );
    let out = within(run.elapsed, PIPELINE_LIMIT_S, detail);
    if cp_shape && floor_row && below { out } else { Err(out.unwrap_or_else(|e| e)) }
}

fn artifacts() -> Vec<PathBuf> {
    let mut files = vec![
        PathBuf::from("report/control_points.csv"),
        PathBuf::from("report/control_points.md"),
        PathBuf::from("report/offsets.csv"),
        PathBuf::from("report/offsets.md"),
    ];
    for (_, name) in MODELS {
        files.push(Path::new(name).join("checkpoint.ckpt"));
        files.push(Path::new(name).join("history.csv"));
    }
    files
}

fn criterion_11(first: &Result<Pipeline, String>, scratch: &Path) -> Outcome {
    let a = first.as_ref().map_err(|e| format!("first run failed: {e}"))?;
    let b = run_pipeline(&scratch.join("second"))?;
    let mut differing = Vec::new();
    let files = artifacts();
    for f in &files {
        let (x, y) = (std::fs::read(a.root.join(f)), std::fs::read(b.root.join(f)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => differing.push(f.display().to_string()),
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} reports and checkpoints byte-identical across two runs ({:.0} s)", files.len(), b.elapsed.as_secs_f64())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let simple: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "spline exactness", criterion_1),
        (2, "B-spline round trip", criterion_2),
        (3, "gradient integrity", criterion_3),
        (4, "Adam fidelity", criterion_4),
        (5, "overfit check", criterion_5),
        (6, "loss identity", criterion_6),
        (7, "architecture conformance", criterion_7),
        (8, "parameter-count ordering", criterion_8),
        (9, "Grad-CAM properties", criterion_9),
    ];
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:2} {tag} {name}: {detail}");
        results.push((n, name, outcome));
    };
    for (n, name, f) in simple {
        if wanted(n) {
            let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
            report(n, name, outcome);
        }
    }
    if wanted(10) || wanted(11) {
        let scratch = tempfile::tempdir().expect("scratch directory");
        let first = run_pipeline(&scratch.path().join("first"));
        if wanted(10) {
            report(10, "end-to-end pipeline", criterion_10(&first));
        }
        if wanted(11) {
            report(11, "determinism", criterion_11(&first, scratch.path()));
        }
    }
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
