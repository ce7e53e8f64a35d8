use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use sternshape::gradcam::*;
use sternshape::model::{self, build, layout, ArchitectureSpec, ModelParams, Mode, Variant};
use sternshape::tensor::{Tape, Tensor};

fn spec(variant: Variant) -> ArchitectureSpec {
    ArchitectureSpec { variant, input_hw: (32, 32), width_factor: 1.0 / 16.0, sections: 14, controls_per_section: 23 }
}

fn image(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![1, 32, 32], (0..32 * 32).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn params(variant: Variant) -> ModelParams {
    build(&spec(variant), 3).unwrap()
}

fn last_conv(p: &ModelParams, img: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let trace = model::forward_on_tape(&mut tape, p, img, Mode::inference()).unwrap();
    tape.value(trace.last_shared_conv).clone()
}

fn dense(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    (0..b.numel()).map(|i| b.data()[i] + (0..cols).map(|j| w.data()[i * cols + j] * x[j]).sum::<f64>()).collect()
}

/// Gradient of `sum(head(p))` with respect to the pooled features `p`, by hand.
fn head_grad(p: &ModelParams, k: usize, x: &[f64]) -> Vec<f64> {
    let get = |n: &str| p.get(&format!("task{k:02}.{n}")).unwrap();
    let (w1, w2, w3) = (get("fc1.w"), get("fc2.w"), get("fc3.w"));
    let z1 = dense(w1, get("fc1.b"), x);
    let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
    let z2 = dense(w2, get("fc2.b"), &h1);
    let out = w3.shape()[0];
    let g_h2: Vec<f64> = (0..z2.len()).map(|j| (0..out).map(|i| w3.data()[i * z2.len() + j]).sum()).collect();
    let g_z2: Vec<f64> = g_h2.iter().zip(&z2).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
    let g_h1: Vec<f64> = (0..h1.len()).map(|j| (0..z2.len()).map(|i| w2.data()[i * h1.len() + j] * g_z2[i]).sum()).collect();
    let g_z1: Vec<f64> = g_h1.iter().zip(&z1).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
    (0..x.len()).map(|j| (0..z1.len()).map(|i| w1.data()[i * x.len() + j] * g_z1[i]).sum()).collect()
}

#[test]
fn matches_hand_derived_map() {
    let p = params(Variant::MtConv0Fc3);
    let img = image(7);
    let act = last_conv(&p, &img);
    let (c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
    assert_eq!((h, w), (2, 2));
    let plane = h * w;
    let pooled: Vec<f64> = (0..c).map(|ch| act.data()[ch * plane..(ch + 1) * plane].iter().cloned().fold(f64::MIN, f64::max)).collect();
    for k in [0, 5, 13] {
        let g = head_grad(&p, k, &pooled);
        let mut cam = vec![0.0; plane];
        for ch in 0..c {
            let a = &act.data()[ch * plane..(ch + 1) * plane];
            // The whole channel gradient lands on the pooled maximum, so the mean is g / plane.
            let weight = g[ch] / plane as f64;
            for (m, v) in cam.iter_mut().zip(a) {
                *m += weight * v;
            }
        }
        let cam: Vec<f64> = cam.iter().map(|v| v.max(0.0)).collect();
        let max = cam.iter().cloned().fold(0.0, f64::max);
        let expected: Vec<f64> = cam.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
        let got = gradcam(&p, &img, k).unwrap();
        assert_eq!((got.height, got.width, got.task), (2, 2, k));
        for (a, b) in got.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "task {k}: {a} vs {b}");
        }
    }
}

#[test]
fn hand_gradient_agrees_with_finite_differences() {
    let p = params(Variant::MtConv0Fc3);
    let act = last_conv(&p, &image(8));
    let pooled: Vec<f64> = act.data().chunks(4).map(|c| c.iter().cloned().fold(f64::MIN, f64::max)).collect();
    let head = |x: &[f64]| -> f64 {
        let get = |n: &str| p.get(&format!("task02.{n}")).unwrap();
        let h1: Vec<f64> = dense(get("fc1.w"), get("fc1.b"), x).iter().map(|v| v.max(0.0)).collect();
        let h2: Vec<f64> = dense(get("fc2.w"), get("fc2.b"), &h1).iter().map(|v| v.max(0.0)).collect();
        dense(get("fc3.w"), get("fc3.b"), &h2).iter().sum()
    };
    let g = head_grad(&p, 2, &pooled);
    let eps = 1e-6;
    for j in 0..pooled.len() {
        let mut up = pooled.clone();
        up[j] += eps;
        let mut dn = pooled.clone();
        dn[j] -= eps;
        let fd = (head(&up) - head(&dn)) / (2.0 * eps);
        assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()), "{j}: {fd} vs {}", g[j]);
    }
}

#[test]
fn zeroed_head_gives_zero_map() {
    let mut p = params(Variant::MtConv4Fc3);
    for n in ["task04.fc3.w", "task04.fc3.b"] {
        p.get_mut(n).unwrap().data_mut().fill(0.0);
    }
    let img = image(9);
    let map = gradcam(&p, &img, 4).unwrap();
    assert!(map.is_zero());
    assert!(!gradcam(&p, &img, 3).unwrap().is_zero());
    let rgb = overlay(&map, &img).unwrap();
    for (px, g) in rgb.chunks(3).zip(img.data()) {
        let gray = (g * 255.0).round() as u8;
        assert_eq!(px, [gray, gray, gray]);
    }
}

#[test]
fn invariant_to_output_scale() {
    let p = params(Variant::MtConv8Fc3);
    let mut q = p.clone();
    for n in ["task06.fc3.w", "task06.fc3.b"] {
        q.get_mut(n).unwrap().data_mut().iter_mut().for_each(|v| *v *= 2.0);
    }
    let img = image(10);
    assert_eq!(gradcam(&p, &img, 6).unwrap(), gradcam(&q, &img, 6).unwrap());
}

#[test]
fn maps_are_bounded_and_sized() {
    for v in [Variant::MtConv0Fc3, Variant::MtConv4Fc3, Variant::MtConv8Fc3] {
        let p = params(v);
        let l = layout(&p.spec).unwrap();
        let maps = gradcam_all(&p, &image(11)).unwrap();
        assert_eq!(maps.len(), 14);
        for m in &maps {
            assert_eq!([m.height, m.width], [l.last_shared_conv[1], l.last_shared_conv[2]]);
            assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
            if !m.is_zero() {
                assert_eq!(m.values.iter().cloned().fold(0.0, f64::max), 1.0);
            }
        }
    }
}

#[test]
fn rejects_single_task_and_bad_task() {
    let img = image(12);
    assert!(matches!(gradcam(&params(Variant::Single), &img, 0), Err(GradCamError::Unsupported(_))));
    assert!(matches!(gradcam(&params(Variant::MtConv0Fc3), &img, 14), Err(GradCamError::TaskRange { task: 14, tasks: 14 })));
    let wrong = Tensor::zeros(&[1, 16, 16]);
    assert!(gradcam(&params(Variant::MtConv0Fc3), &wrong, 0).is_err());
}

#[test]
fn overlay_file_is_deterministic() {
    let p = params(Variant::MtConv8Fc3);
    let img = image(13);
    let map = gradcam(&p, &img, 1).unwrap();
    assert!(!map.is_zero());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("o.ppm");
    write_overlay(&path, &map, &img).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(bytes.len(), 13 + 3 * 32 * 32);
    let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hash, GOLDEN_OVERLAY);
}

const GOLDEN_OVERLAY: &str = "fd9f5cc98c9d7b0d106a49b647b3fcfb150554ce4d2db0a38a1830401c7cf438";
