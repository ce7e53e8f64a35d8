use super::{ControlPolygon, GeomError, Point, Result, SectionOffsets, MAX_FIT_CONDITION, ORDER};

/// Clamped knot sequence `t_0 ..= t_{n+k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    order: usize,
    n: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Index of the last control point.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_count(&self) -> usize {
        self.n + 1
    }
}

/// Curve parameters `u_0 = 0 < ... < u_m = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChordParams(pub Vec<f64>);

impl ChordParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Open-uniform knots for `n + 1` controls of order `k`.
pub fn open_uniform_knots(n: usize, k: usize) -> Result<KnotVector> {
    if k == 0 || n + 1 < k {
        return Err(GeomError::InsufficientControls { n, order: k });
    }
    let spans = n + 2 - k;
    let mut knots = Vec::with_capacity(n + k + 1);
    knots.extend(std::iter::repeat_n(0.0, k));
    knots.extend((1..spans).map(|i| i as f64 / spans as f64));
    knots.extend(std::iter::repeat_n(1.0, k));
    debug_assert_eq!(knots.len(), n + k + 1);
    Ok(KnotVector { order: k, n, knots })
}

/// Chord-length parameters of an ordered point list.
pub fn chord_params(points: &[Point]) -> Result<ChordParams> {
    if points.len() < 2 {
        return Err(GeomError::InvalidOffsets("need at least 2 points".into()));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for (index, w) in points.windows(2).enumerate() {
        let d = w[0].dist(w[1]);
        if d == 0.0 {
            return Err(GeomError::DuplicatePoint { index });
        }
        total += d;
        cumulative.push(total);
    }
    let m = points.len() - 1;
    let params = cumulative
        .iter()
        .enumerate()
        .map(|(i, &c)| if i == m { 1.0 } else { c / total })
        .collect();
    Ok(ChordParams(params))
}

fn check_domain(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(GeomError::Domain(u))
    }
}

/// `N_j^1(u)`: indicator of the half-open span `[t_j, t_{j+1})`; the last
/// nonempty span is also closed on the right so that `u = 1` is covered.
fn order_one(t: &[f64], n: usize, j: usize, u: f64) -> f64 {
    if (t[j] <= u && u < t[j + 1]) || (j == n && u == t[j + 1]) {
        1.0
    } else {
        0.0
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn cox_de_boor(t: &[f64], n: usize, j: usize, r: usize, u: f64) -> f64 {
    if r == 1 {
        return order_one(t, n, j, u);
    }
    let left = ratio(u - t[j], t[j + r - 1] - t[j]);
    let right = ratio(t[j + r] - u, t[j + r] - t[j + 1]);
    let mut value = 0.0;
    if left != 0.0 {
        value += left * cox_de_boor(t, n, j, r - 1, u);
    }
    if right != 0.0 {
        value += right * cox_de_boor(t, n, j + 1, r - 1, u);
    }
    value
}

/// `N_j^k(u)` by the Cox–de Boor recursion (0/0 := 0).
pub fn basis(knots: &KnotVector, j: usize, u: f64) -> Result<f64> {
    check_domain(u)?;
    if j > knots.n {
        return Err(GeomError::Shape { expected: knots.n + 1, found: j + 1 });
    }
    Ok(cox_de_boor(&knots.knots, knots.n, j, knots.order, u))
}

/// All `N_j^k(u)`, `j = 0..=n`, built bottom-up from the order-one indicators.
pub fn basis_row(knots: &KnotVector, u: f64) -> Result<Vec<f64>> {
    check_domain(u)?;
    let t = &knots.knots;
    let n = knots.n;
    let mut row: Vec<f64> = (0..t.len() - 1).map(|j| order_one(t, n, j, u)).collect();
    for r in 2..=knots.order {
        for j in 0..t.len() - r {
            let left = ratio(u - t[j], t[j + r - 1] - t[j]) * row[j];
            let right = ratio(t[j + r] - u, t[j + r] - t[j + 1]) * row[j + 1];
            row[j] = left + right;
        }
        row.pop();
    }
    row.truncate(n + 1);
    Ok(row)
}

/// Dense `(m+1) x (n+1)` collocation matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl BasisMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn basis_matrix(knots: &KnotVector, params: &ChordParams) -> Result<BasisMatrix> {
    let cols = knots.control_count();
    let mut data = Vec::with_capacity(params.0.len() * cols);
    for &u in &params.0 {
        data.extend(basis_row(knots, u)?);
    }
    Ok(BasisMatrix { rows: params.0.len(), cols, data })
}

pub fn eval_curve(controls: &ControlPolygon, knots: &KnotVector, u: f64) -> Result<Point> {
    if controls.len() != knots.control_count() {
        return Err(GeomError::Shape { expected: knots.control_count(), found: controls.len() });
    }
    let row = basis_row(knots, u)?;
    let mut p = Point::default();
    for (q, w) in controls.controls.iter().zip(&row) {
        if *w != 0.0 {
            p.y += q.y * w;
            p.z += q.z * w;
        }
    }
    Ok(p)
}

/// Least-squares control polygon `Q` minimising `|N Q - P|` over the
/// chord-length parameters of the data, both coordinates at once.
pub fn fit_control_points(offsets: &SectionOffsets, n: usize) -> Result<ControlPolygon> {
    let params = chord_params(offsets.points())?;
    fit_with_params(offsets, &params, n)
}

/// The least-squares solve behind [`fit_control_points`] for a caller-chosen
/// parametrisation (one parameter per point). Solved by Householder QR.
pub fn fit_with_params(offsets: &SectionOffsets, params: &ChordParams, n: usize) -> Result<ControlPolygon> {
    let points = offsets.points();
    if params.0.len() != points.len() {
        return Err(GeomError::Shape { expected: points.len(), found: params.0.len() });
    }
    if points.len() < n + 1 {
        return Err(GeomError::RankDeficient { condition: f64::INFINITY });
    }
    let knots = open_uniform_knots(n, ORDER)?;
    let basis = basis_matrix(&knots, params)?;
    let rhs: Vec<[f64; 2]> = points.iter().map(|p| [p.y, p.z]).collect();
    let solution = householder_least_squares(basis.rows, basis.cols, basis.data, rhs)?;
    Ok(ControlPolygon::new(
        offsets.section_index(),
        solution.into_iter().map(|[y, z]| Point::new(y, z)).collect(),
    ))
}

fn householder_least_squares(
    rows: usize,
    cols: usize,
    mut a: Vec<f64>,
    mut b: Vec<[f64; 2]>,
) -> Result<Vec<[f64; 2]>> {
    let mut diag = vec![0.0; cols];
    for j in 0..cols {
        let norm = (j..rows).map(|i| a[i * cols + j].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GeomError::RankDeficient { condition: f64::INFINITY });
        }
        let alpha = if a[j * cols + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..rows).map(|i| a[i * cols + j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        for c in j + 1..cols {
            let dot: f64 = v.iter().enumerate().map(|(k, vk)| vk * a[(j + k) * cols + c]).sum();
            let f = 2.0 * dot / vnorm2;
            for (k, vk) in v.iter().enumerate() {
                a[(j + k) * cols + c] -= f * vk;
            }
        }
        for d in 0..2 {
            let dot: f64 = v.iter().enumerate().map(|(k, vk)| vk * b[j + k][d]).sum();
            let f = 2.0 * dot / vnorm2;
            for (k, vk) in v.iter().enumerate() {
                b[j + k][d] -= f * vk;
            }
        }
    }
    let largest = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let smallest = diag.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    let condition = largest / smallest;
    if !condition.is_finite() || condition > MAX_FIT_CONDITION {
        return Err(GeomError::RankDeficient { condition });
    }
    let mut x = vec![[0.0; 2]; cols];
    for j in (0..cols).rev() {
        for d in 0..2 {
            let mut s = b[j][d];
            for c in j + 1..cols {
                s -= a[j * cols + c] * x[c][d];
            }
            x[j][d] = s / diag[j];
        }
    }
    Ok(x)
}

/// Evaluates the curve at `count` uniformly spaced parameters.
pub fn reconstruct_offsets(controls: &ControlPolygon, count: usize) -> Result<SectionOffsets> {
    if count < 2 {
        return Err(GeomError::InvalidOffsets(format!("count {count} < 2")));
    }
    if controls.is_empty() {
        return Err(GeomError::InsufficientControls { n: 0, order: ORDER });
    }
    let knots = open_uniform_knots(controls.len() - 1, ORDER)?;
    let points = (0..count)
        .map(|i| {
            let u = if i == count - 1 { 1.0 } else { i as f64 / (count - 1) as f64 };
            eval_curve(controls, &knots, u)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SectionOffsets::from_curve(controls.section_index, points))
}
