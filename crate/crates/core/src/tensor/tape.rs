use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{shape_err, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Dense { x: Var, w: Var, b: Var },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Mse { y: Var, y_hat: Var },
    Slice { x: Var, start: usize },
    Concat { parts: Vec<Var> },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Sum { x: Var },
    Reshape { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations. Nodes only reference earlier nodes, so
/// creation order is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Index ranges of output rows/cols whose tap `k` (0..3) lands inside an
/// extent of `n` with zero padding 1.
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    let lo = usize::from(k == 0);
    let hi = if k == 2 { n - 1 } else { n };
    (lo, hi.max(lo))
}

/// Planes up to this many pixels use the per-pixel tap lists below; larger
/// ones sweep whole rows per tap.
const SMALL_PLANE: usize = 32;

/// In-range taps of every output pixel as `(ky·3 + kx, source offset)`, in
/// `(ky, kx)` order.
fn pixel_taps(h: usize, wd: usize) -> Vec<Vec<(usize, usize)>> {
    let mut taps = Vec::with_capacity(h * wd);
    for y in 0..h {
        for x in 0..wd {
            let mut t = Vec::with_capacity(9);
            for ky in 0..3 {
                for kx in 0..3 {
                    let (sy, sx) = (y + ky, x + kx);
                    if sy >= 1 && sx >= 1 && sy <= h && sx <= wd {
                        t.push((ky * 3 + kx, (sy - 1) * wd + sx - 1));
                    }
                }
            }
            taps.push(t);
        }
    }
    taps
}

/// Weights reordered to `[ci][9][co]` so that small-plane loops run over
/// contiguous output channels.
fn weights_by_tap(w: &[f64], ci: usize, co: usize) -> Vec<f64> {
    let mut t = vec![0.0; w.len()];
    for o in 0..co {
        for i in 0..ci {
            for k in 0..9 {
                t[(i * 9 + k) * co + o] = w[(o * ci + i) * 9 + k];
            }
        }
    }
    t
}

/// Dot product with four interleaved partial sums.
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for j in 0..4 {
            acc[j] += ca[j] * cb[j];
        }
    }
    let tail: f64 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn conv_forward_small(x: &[f64], w: &[f64], b: &[f64], ci: usize, h: usize, wd: usize) -> Vec<f64> {
    let co = b.len();
    let plane = h * wd;
    let wt = weights_by_tap(w, ci, co);
    let mut out = vec![0.0; co * plane];
    let mut acc = vec![0.0; co];
    for (p, pt) in pixel_taps(h, wd).iter().enumerate() {
        acc.copy_from_slice(b);
        for i in 0..ci {
            let xp = &x[i * plane..(i + 1) * plane];
            for &(k, s) in pt {
                let xv = xp[s];
                let wk = &wt[(i * 9 + k) * co..(i * 9 + k + 1) * co];
                for (a, &wv) in acc.iter_mut().zip(wk) {
                    *a += wv * xv;
                }
            }
        }
        for (o, &a) in acc.iter().enumerate() {
            out[o * plane + p] = a;
        }
    }
    out
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], ci: usize, h: usize, wd: usize) -> Vec<f64> {
    let co = b.len();
    let plane = h * wd;
    if plane <= SMALL_PLANE {
        return conv_forward_small(x, w, b, ci, h, wd);
    }
    let mut out = vec![0.0; co * plane];
    for o in 0..co {
        let op = &mut out[o * plane..(o + 1) * plane];
        op.fill(b[o]);
        for i in 0..ci {
            let xp = &x[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = tap_range(kx, wd);
                    let wv = w[((o * ci + i) * 3 + ky) * 3 + kx];
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let orow = &mut op[y * wd + x0..y * wd + x1];
                        let xrow = &xp[sy * wd + x0 + kx - 1..sy * wd + x1 + kx - 1];
                        for (acc, &v) in orow.iter_mut().zip(xrow) {
                            *acc += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

struct ConvGrads {
    dx: Option<Vec<f64>>,
    dw: Vec<f64>,
    db: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    ci: usize,
    co: usize,
    h: usize,
    wd: usize,
    need_dx: bool,
) -> ConvGrads {
    let plane = h * wd;
    let mut dx = need_dx.then(|| vec![0.0; ci * plane]);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co];
    if plane <= SMALL_PLANE {
        let wt = weights_by_tap(w, ci, co);
        let mut dwt = vec![0.0; w.len()];
        let mut gcol = vec![0.0; co];
        for o in 0..co {
            db[o] = g[o * plane..(o + 1) * plane].iter().sum();
        }
        for (p, pt) in pixel_taps(h, wd).iter().enumerate() {
            for (o, gc) in gcol.iter_mut().enumerate() {
                *gc = g[o * plane + p];
            }
            for i in 0..ci {
                let xp = &x[i * plane..(i + 1) * plane];
                for &(k, s) in pt {
                    let row = (i * 9 + k) * co..(i * 9 + k + 1) * co;
                    let xv = xp[s];
                    for (d, &gv) in dwt[row.clone()].iter_mut().zip(&gcol) {
                        *d += gv * xv;
                    }
                    if let Some(dx) = dx.as_mut() {
                        dx[i * plane + s] += dot4(&wt[row], &gcol);
                    }
                }
            }
        }
        for o in 0..co {
            for i in 0..ci {
                for k in 0..9 {
                    dw[(o * ci + i) * 9 + k] = dwt[(i * 9 + k) * co + o];
                }
            }
        }
        return ConvGrads { dx, dw, db };
    }
    for o in 0..co {
        let gp = &g[o * plane..(o + 1) * plane];
        db[o] = gp.iter().sum();
        for i in 0..ci {
            let xp = &x[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = tap_range(kx, wd);
                    let wi = ((o * ci + i) * 3 + ky) * 3 + kx;
                    let wv = w[wi];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &gp[y * wd + x0..y * wd + x1];
                        let xs = sy * wd + x0 + kx - 1;
                        let xrow = &xp[xs..xs + grow.len()];
                        for (&gv, &xv) in grow.iter().zip(xrow) {
                            acc += gv * xv;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let drow = &mut dx[i * plane + xs..i * plane + xs + grow.len()];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    dw[wi] = acc;
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf whose gradient is wanted (parameters).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A detached leaf (inputs, targets). No gradient is allocated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// 3×3 cross-correlation, stride 1, zero padding 1.
    /// `x: [C_in,H,W]`, `w: [C_out,C_in,3,3]`, `b: [C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 3 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
            return Err(shape_err("conv2d", format!("input {xs:?}, filters {ws:?}")));
        }
        if ws[1] != xs[0] {
            return Err(shape_err("conv2d", format!("filters expect {} channels, input has {}", ws[1], xs[0])));
        }
        if bs != [ws[0]] {
            return Err(shape_err("conv2d", format!("bias {bs:?} for {} filters", ws[0])));
        }
        let (ci, h, wd, co) = (xs[0], xs[1], xs[2], ws[0]);
        let out = conv_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), ci, h, wd);
        let value = Tensor { shape: vec![co, h, wd], data: out };
        let rg = self.tracked(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b }, rg))
    }

    /// 2×2 max pooling, stride 2, odd extents floored. Ties go to the first
    /// element in row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(shape_err("maxpool2", format!("input {xs:?} needs [C, H>=2, W>=2]")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = ch * h * w + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor { shape: vec![c, oh, ow], data: out };
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Affine map `w·x + b`; `x: [d_in]`, `w: [d_out,d_in]`, `b: [d_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(shape_err("dense", format!("input {xs:?}, weights {ws:?}, bias {bs:?}")));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out: Vec<f64> = (0..d_out)
            .map(|r| {
                let row = &wd[r * d_in..(r + 1) * d_in];
                row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>() + bd[r]
            })
            .collect();
        let rg = self.tracked(&[x, w, b]);
        Ok(self.push(Tensor::vector(out), Op::Dense { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor { shape: xv.shape().to_vec(), data };
        let rg = self.tracked(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Inverted dropout. Identity (the same node) in inference mode or at
    /// rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xv = self.value(x);
        let mask: Vec<f64> =
            (0..xv.numel()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor { shape: xv.shape().to_vec(), data };
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Mean squared error `(1/A)·Σ(y − ŷ)²`.
    pub fn mse(&mut self, y: Var, y_hat: Var) -> Result<Var> {
        same_shape("mse", self.value(y), self.value(y_hat))?;
        let (yd, hd) = (self.value(y).data(), self.value(y_hat).data());
        let sse: f64 = yd.iter().zip(hd).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(sse / yd.len() as f64);
        let rg = self.tracked(&[y, y_hat]);
        Ok(self.push(value, Op::Mse { y, y_hat }, rg))
    }

    /// Flat slice `[start, start + len)` as a 1-D tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if len == 0 || start + len > n {
            return Err(shape_err("slice", format!("[{start}, {}) of {n} elements", start + len)));
        }
        let value = Tensor::vector(self.value(x).data()[start..start + len].to_vec());
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    /// Flat concatenation into a 1-D tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs"));
        }
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.value(p).data().iter().copied()).collect();
        let rg = self.tracked(parts);
        Ok(self.push(Tensor::vector(data), Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor { shape: av.shape().to_vec(), data };
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let value = Tensor { shape: xv.shape().to_vec(), data: xv.data().iter().map(|v| v * c).collect() };
        let rg = self.tracked(&[x]);
        self.push(value, Op::Scale { x, c }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.tracked(&[x]);
        self.push(value, Op::Sum { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.tracked(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        self.reshape(x, &[n])
    }

    /// Reverse-mode accumulation from a scalar `root`. Fan-out gradients are
    /// summed; untracked nodes get no gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&self.nodes[idx], &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|data| Tensor { shape: self.nodes[i].value.shape().to_vec(), data }))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn add_into(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        self.accumulate(grads, v, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += b));
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b } => {
                let (xs, ws) = (self.value(x).shape(), self.value(w).shape());
                let cg = conv_backward(
                    g,
                    self.value(x).data(),
                    self.value(w).data(),
                    xs[0],
                    ws[0],
                    xs[1],
                    xs[2],
                    self.requires_grad(x),
                );
                if let Some(dx) = cg.dx {
                    self.add_into(grads, x, &dx);
                }
                self.add_into(grads, w, &cg.dw);
                self.add_into(grads, b, &cg.db);
            }
            Op::MaxPool2 { x, argmax } => {
                self.accumulate(grads, *x, |d| {
                    for (&i, &gv) in argmax.iter().zip(g) {
                        d[i] += gv;
                    }
                });
            }
            &Op::Dense { x, w, b } => {
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                let d_in = xd.len();
                self.accumulate(grads, x, |d| {
                    for (r, &gv) in g.iter().enumerate() {
                        for (a, &wv) in d.iter_mut().zip(&wd[r * d_in..(r + 1) * d_in]) {
                            *a += wv * gv;
                        }
                    }
                });
                self.accumulate(grads, w, |d| {
                    for (r, &gv) in g.iter().enumerate() {
                        for (a, &xv) in d[r * d_in..(r + 1) * d_in].iter_mut().zip(xd) {
                            *a += gv * xv;
                        }
                    }
                });
                self.add_into(grads, b, g);
            }
            &Op::Relu { x } => {
                let xd = self.value(x).data();
                self.accumulate(grads, x, |d| {
                    for ((a, &gv), &xv) in d.iter_mut().zip(g).zip(xd) {
                        if xv > 0.0 {
                            *a += gv;
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, |d| {
                    for ((a, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                        *a += gv * m;
                    }
                });
            }
            &Op::Mse { y, y_hat } => {
                let (yd, hd) = (self.value(y).data(), self.value(y_hat).data());
                let c = 2.0 * g[0] / yd.len() as f64;
                self.accumulate(grads, y_hat, |d| {
                    for ((a, &yv), &hv) in d.iter_mut().zip(yd).zip(hd) {
                        *a += c * (hv - yv);
                    }
                });
                self.accumulate(grads, y, |d| {
                    for ((a, &yv), &hv) in d.iter_mut().zip(yd).zip(hd) {
                        *a += c * (yv - hv);
                    }
                });
            }
            &Op::Slice { x, start } => {
                self.accumulate(grads, x, |d| {
                    d[start..start + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.add_into(grads, p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            &Op::Add { a, b } => {
                self.add_into(grads, a, g);
                self.add_into(grads, b, g);
            }
            &Op::Scale { x, c } => {
                self.accumulate(grads, x, |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += c * b));
            }
            &Op::Sum { x } => {
                self.accumulate(grads, x, |d| d.iter_mut().for_each(|a| *a += g[0]));
            }
            &Op::Reshape { x } => self.add_into(grads, x, g),
        }
    }
}
