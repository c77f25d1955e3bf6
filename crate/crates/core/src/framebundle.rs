//! Frames, parallel transport along evolving metrics, and (anti-)development.
//!
//! A frame `u: ℝᵈ → T_xM` is stored as a `d×d` matrix whose column `i` holds
//! the chart components of `u eᵢ`. Transport along a curve `γ` solves
//! `∇_{∂ₜ+γ̇}(u eᵢ) = 0` for the spacetime connection, which in coordinates is
//!
//! ```text
//! ∂ₜ(u eᵢ) = −Γ(t, γ)(γ̇, u eᵢ) − ½ g(t)⁻¹ ∂ₜg(t) u eᵢ
//! ```
//!
//! and keeps `u(t)` a `g(t)`-isometry whenever `u(0)` is a `g(0)`-isometry.
//! All integrators are fixed-step RK4 on the grid of the input curve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{ChartPoint, LocalGeometry, MetricFamily, Needs};
use crate::linalg::{self, idx};

/// Default orthonormality tolerance for frames handed to the integrators.
pub const FRAME_TOLERANCE: f64 = 1e-6;

const BLOWUP_NORM: f64 = 1e12;

/// A frame at time `time` over `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub base: ChartPoint,
    pub basis: DMatrix<f64>,
}

impl Frame {
    pub fn new(time: f64, base: ChartPoint, basis: DMatrix<f64>) -> Result<Self> {
        let d = base.dim();
        if basis.nrows() != d || basis.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: basis.nrows() });
        }
        Ok(Self { time, base, basis })
    }

    /// The `g(t, x)`-orthonormal frame `g(t, x)^{-1/2}` (symmetric inverse
    /// square root).
    pub fn canonical(fam: &MetricFamily, t: f64, x: &[f64]) -> Result<Self> {
        let g = fam.metric_eval(t, x)?;
        let eig = SymmetricEigen::new(g);
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::SingularMetric { t, point: x.to_vec() });
        }
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let basis = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        Ok(Self { time: t, base: ChartPoint::new(x), basis })
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `u a` as chart components.
    pub fn apply(&self, a: &[f64]) -> DVector<f64> {
        &self.basis * DVector::from_column_slice(a)
    }
}

/// Uniformly gridded curve `γ(t_k)`, `t_k = k/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<ChartPoint>,
}

/// Uniformly gridded curve in ℝᵈ.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPath {
    values: Vec<Vec<f64>>,
}

/// Frames along a grid, with the re-orthonormalization setting used to
/// produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePath {
    pub frames: Vec<Frame>,
    pub reorthonormalize_every: Option<usize>,
}

fn check_grid(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.len() < 2 {
        return Err(Error::InvalidInput("a grid curve needs at least two nodes".into()));
    }
    let d = rows[0].len();
    if d == 0 {
        return Err(Error::InvalidInput("zero-dimensional curve".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    Ok(d)
}

impl Path {
    pub fn new(points: Vec<ChartPoint>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
        check_grid(&rows)?;
        Ok(Self { points })
    }

    /// Samples `f` on the grid `k/n`, `k = 0..=n`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        Self::new((0..=n).map(|k| ChartPoint(f(k as f64 / n as f64))).collect())
    }

    /// Straight chart segment from `x0` to `x1`.
    pub fn segment(x0: &[f64], x1: &[f64], n: usize) -> Result<Self> {
        Self::from_fn(n, |t| x0.iter().zip(x1).map(|(a, b)| a + t * (b - a)).collect())
    }

    pub fn constant(x: &[f64], n: usize) -> Result<Self> {
        Self::from_fn(n, |_| x.to_vec())
    }

    pub fn points(&self) -> &[ChartPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<ChartPoint> {
        self.points
    }

    /// Number of grid intervals.
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn step(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n() as f64
    }

    pub fn start(&self) -> &ChartPoint {
        &self.points[0]
    }

    pub fn end(&self) -> &ChartPoint {
        &self.points[self.n()]
    }

    pub(crate) fn rows(&self) -> Vec<&[f64]> {
        self.points.iter().map(|p| &p.0[..]).collect()
    }

    /// Sup-norm distance between two paths on the same grid.
    pub fn sup_distance(&self, other: &Path) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

impl ControlPath {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        check_grid(&values)?;
        Ok(Self { values })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        Self::new((0..=n).map(|k| f(k as f64 / n as f64)).collect())
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn step(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.n() as f64
    }

    pub(crate) fn rows(&self) -> Vec<&[f64]> {
        self.values.iter().map(|v| &v[..]).collect()
    }
}

impl FramePath {
    pub fn n(&self) -> usize {
        self.frames.len() - 1
    }

    /// Projection onto the base curve.
    pub fn base_path(&self) -> Path {
        Path { points: self.frames.iter().map(|f| f.base.clone()).collect() }
    }

    pub fn max_orthonormality_defect(&self, fam: &MetricFamily) -> Result<f64> {
        self.frames
            .iter()
            .map(|f| orthonormality_defect(fam, f))
            .try_fold(0.0, |m, d| Ok(f64::max(m, d?)))
    }
}

/// Node velocities plus cubic-Hermite midpoints of a gridded curve. Node
/// velocities are central differences, second-order one-sided at the ends.
pub(crate) struct GridDerivatives {
    d: usize,
    h: f64,
    velocities: Vec<f64>,
}

impl GridDerivatives {
    pub fn new(rows: &[&[f64]]) -> Self {
        let n = rows.len() - 1;
        let d = rows[0].len();
        let h = 1.0 / n as f64;
        let mut velocities = vec![0.0; (n + 1) * d];
        for k in 0..=n {
            for i in 0..d {
                velocities[k * d + i] = if n == 1 {
                    (rows[1][i] - rows[0][i]) / h
                } else if k == 0 {
                    (-3.0 * rows[0][i] + 4.0 * rows[1][i] - rows[2][i]) / (2.0 * h)
                } else if k == n {
                    (3.0 * rows[n][i] - 4.0 * rows[n - 1][i] + rows[n - 2][i]) / (2.0 * h)
                } else {
                    (rows[k + 1][i] - rows[k - 1][i]) / (2.0 * h)
                };
            }
        }
        Self { d, h, velocities }
    }

    pub fn velocity(&self, k: usize) -> &[f64] {
        &self.velocities[k * self.d..(k + 1) * self.d]
    }

    /// Hermite-cubic position and velocity at `t_k + h/2`.
    pub fn midpoint(&self, rows: &[&[f64]], k: usize, pos: &mut [f64], vel: &mut [f64]) {
        let (a, b) = (rows[k], rows[k + 1]);
        let (va, vb) = (self.velocity(k), self.velocity(k + 1));
        let h = self.h;
        for i in 0..self.d {
            pos[i] = 0.5 * (a[i] + b[i]) + h / 8.0 * (va[i] - vb[i]);
            vel[i] = 1.5 * (b[i] - a[i]) / h - 0.25 * (va[i] + vb[i]);
        }
    }
}

/// Column-wise transport right-hand side on raw buffers. `local` must hold
/// the Christoffel symbols and `∂ₜg` at the point of evaluation.
pub(crate) fn transport_rhs_raw(local: &LocalGeometry, d: usize, v: &[f64], e: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    // scratch: [0..d) Γ result, [d..2d) ∂ₜg·col
    let ginv = local.inverse();
    let dt = local.metric_dt();
    for i in 0..d {
        let col = &e[i * d..(i + 1) * d];
        let (gam, rest) = scratch.split_at_mut(d);
        local.contract_gamma(v, col, gam);
        linalg::matvec(dt, col, d, &mut rest[..d]);
        for k in 0..d {
            let mut corr = 0.0;
            for m in 0..d {
                corr += ginv[idx(d, k, m)] * rest[m];
            }
            out[i * d + k] = -gam[k] - 0.5 * corr;
        }
    }
}

/// `dE/dt` for a frame `E` moving with chart velocity `v` through `(t, x)`.
pub fn transport_rhs(fam: &MetricFamily, t: f64, x: &[f64], v: &[f64], basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    fam.check_point(x)?;
    let d = fam.dim();
    if v.len() != d || basis.nrows() != d || basis.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: v.len() });
    }
    let mut local = LocalGeometry::new(d);
    local.update(fam, t, x, Needs::ALL)?;
    let mut out = DMatrix::zeros(d, d);
    let mut scratch = vec![0.0; 2 * d];
    transport_rhs_raw(&local, d, v, basis.as_slice(), out.as_mut_slice(), &mut scratch);
    Ok(out)
}

/// `‖Eᵀ g(time, base) E − I‖` (largest absolute entry).
pub fn orthonormality_defect(fam: &MetricFamily, frame: &Frame) -> Result<f64> {
    let g = fam.metric_eval(frame.time, &frame.base)?;
    let gram = frame.basis.transpose() * g * &frame.basis;
    let d = frame.dim();
    Ok((gram - DMatrix::identity(d, d)).abs().max())
}

/// Gram–Schmidt in the `g(t, x)` inner product. Columns are processed in
/// order, so column `i` of the result spans the same flag as the input.
pub fn gram_schmidt_g(fam: &MetricFamily, t: f64, x: &[f64], basis: &DMatrix<f64>) -> Result<Frame> {
    let g = fam.metric_eval(t, x)?;
    if g.clone().cholesky().is_none() {
        return Err(Error::SingularMetric { t, point: x.to_vec() });
    }
    let d = fam.dim();
    if basis.nrows() != d || basis.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: basis.nrows() });
    }
    let inner = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &g * b)[(0, 0)];
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let original: DVector<f64> = basis.column(i).into();
        let scale = inner(&original, &original).sqrt();
        let mut v = original;
        // two passes keep the result orthonormal to round-off
        for _ in 0..2 {
            for j in 0..i {
                let q: DVector<f64> = out.column(j).into();
                let c = inner(&q, &v);
                v -= q * c;
            }
        }
        let norm = inner(&v, &v).sqrt();
        if !(norm > 1e-13 * scale) || !norm.is_finite() {
            return Err(Error::DegenerateBasis { column: i });
        }
        out.set_column(i, &(v / norm));
    }
    Ok(Frame { time: t, base: ChartPoint::new(x), basis: out })
}

/// Options for [`horizontal_lift_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LiftOptions {
    /// Re-orthonormalize with [`gram_schmidt_g`] every `K` steps.
    pub reorthonormalize_every: Option<usize>,
}

fn check_start(fam: &MetricFamily, start: &[f64], u0: &Frame) -> Result<()> {
    if u0.dim() != fam.dim() {
        return Err(Error::DimensionMismatch { expected: fam.dim(), got: u0.dim() });
    }
    if u0.base.iter().zip(start).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::InvalidInput("initial frame is not based at the start of the path".into()));
    }
    let defect = orthonormality_defect(fam, &Frame { time: 0.0, ..u0.clone() })?;
    if defect > FRAME_TOLERANCE {
        return Err(Error::NonOrthonormalStart { defect, tolerance: FRAME_TOLERANCE });
    }
    Ok(())
}

struct Lifted {
    frames: Vec<Vec<f64>>,
    /// Hermite-interpolated frames at the cell midpoints.
    midpoint_frames: Vec<Vec<f64>>,
}

fn lift_raw(fam: &MetricFamily, path: &Path, u0: &Frame, opts: &LiftOptions) -> Result<Lifted> {
    check_start(fam, path.start(), u0)?;
    for p in path.points() {
        fam.check_point(p)?;
    }
    let d = fam.dim();
    let dd = d * d;
    let n = path.n();
    let h = path.step();
    let rows = path.rows();
    let deriv = GridDerivatives::new(&rows);

    let mut node = LocalGeometry::new(d);
    let mut next = LocalGeometry::new(d);
    let mut mid = LocalGeometry::new(d);
    let mut scratch = vec![0.0; 2 * d];
    let (mut xm, mut vm) = (vec![0.0; d], vec![0.0; d]);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dd], vec![0.0; dd], vec![0.0; dd], vec![0.0; dd]);
    let mut stage = vec![0.0; dd];
    let mut next_rate = vec![0.0; dd];

    let mut e = u0.basis.as_slice().to_vec();
    let mut frames = Vec::with_capacity(n + 1);
    let mut midpoint_frames = Vec::with_capacity(n);
    frames.push(e.clone());
    node.update(fam, 0.0, &rows[0], Needs::ALL)?;
    transport_rhs_raw(&node, d, deriv.velocity(0), &e, &mut k1, &mut scratch);

    for k in 0..n {
        let t = path.time(k);
        let t1 = path.time(k + 1);
        deriv.midpoint(&rows, k, &mut xm, &mut vm);
        if !fam.contains(&xm) {
            return Err(Error::OutOfChart { family: fam.id().to_string(), point: xm.clone() });
        }
        mid.update(fam, t + 0.5 * h, &xm, Needs::ALL)?;
        next.update(fam, t1, &rows[k + 1], Needs::ALL)?;

        for i in 0..dd {
            stage[i] = e[i] + 0.5 * h * k1[i];
        }
        transport_rhs_raw(&mid, d, &vm, &stage, &mut k2, &mut scratch);
        for i in 0..dd {
            stage[i] = e[i] + 0.5 * h * k2[i];
        }
        transport_rhs_raw(&mid, d, &vm, &stage, &mut k3, &mut scratch);
        for i in 0..dd {
            stage[i] = e[i] + h * k3[i];
        }
        transport_rhs_raw(&next, d, deriv.velocity(k + 1), &stage, &mut k4, &mut scratch);

        let e_prev = e.clone();
        for i in 0..dd {
            e[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !linalg::all_finite(&e) || e.iter().any(|v| v.abs() > BLOWUP_NORM) {
            return Err(Error::BlowUp { t: t1 });
        }
        if let Some(every) = opts.reorthonormalize_every {
            if every > 0 && (k + 1) % every == 0 {
                let fixed = gram_schmidt_g(fam, t1, &rows[k + 1], &DMatrix::from_column_slice(d, d, &e))?;
                e.copy_from_slice(fixed.basis.as_slice());
            }
        }
        transport_rhs_raw(&next, d, deriv.velocity(k + 1), &e, &mut next_rate, &mut scratch);
        let em: Vec<f64> = (0..dd)
            .map(|i| 0.5 * (e_prev[i] + e[i]) + h / 8.0 * (k1[i] - next_rate[i]))
            .collect();
        midpoint_frames.push(em);
        frames.push(e.clone());
        std::mem::swap(&mut node, &mut next);
        std::mem::swap(&mut k1, &mut next_rate);
    }
    Ok(Lifted { frames, midpoint_frames })
}

/// Horizontal lift of `path` starting from the `g(0)`-orthonormal frame `u0`.
pub fn horizontal_lift(fam: &MetricFamily, path: &Path, u0: &Frame) -> Result<FramePath> {
    horizontal_lift_with(fam, path, u0, &LiftOptions::default())
}

pub fn horizontal_lift_with(fam: &MetricFamily, path: &Path, u0: &Frame, opts: &LiftOptions) -> Result<FramePath> {
    let d = fam.dim();
    let lifted = lift_raw(fam, path, u0, opts)?;
    let frames = lifted
        .frames
        .into_iter()
        .enumerate()
        .map(|(k, e)| Frame {
            time: path.time(k),
            base: path.points()[k].clone(),
            basis: DMatrix::from_vec(d, d, e),
        })
        .collect();
    Ok(FramePath { frames, reorthonormalize_every: opts.reorthonormalize_every })
}

/// Anti-development `w(t) = ∫₀ᵗ u(s)⁻¹ γ̇(s) ds`, midpoint rule on the grid.
pub fn antidevelop(fam: &MetricFamily, path: &Path, u0: &Frame) -> Result<ControlPath> {
    let d = fam.dim();
    let lifted = lift_raw(fam, path, u0, &LiftOptions::default())?;
    let h = path.step();
    let mut w = vec![0.0; d];
    let mut values = Vec::with_capacity(path.n() + 1);
    values.push(w.clone());
    for (k, em) in lifted.midpoint_frames.iter().enumerate() {
        let a = path.points()[k].iter();
        let b = path.points()[k + 1].iter();
        let vel = DVector::from_iterator(d, b.zip(a).map(|(b, a)| (b - a) / h));
        let e = DMatrix::from_column_slice(d, d, em);
        let step = e.lu().solve(&vel).ok_or(Error::DegenerateBasis { column: 0 })?;
        for i in 0..d {
            w[i] += step[i] * h;
        }
        values.push(w.clone());
    }
    ControlPath::new(values)
}

/// Development of `w` from `u0`: solves `ẋ = E ẇ`, `Ė = transport(E ẇ, E)`.
pub fn develop(fam: &MetricFamily, w: &ControlPath, u0: &Frame) -> Result<(FramePath, Path)> {
    let d = fam.dim();
    if w.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: w.dim() });
    }
    check_start(fam, &u0.base, u0)?;
    let dd = d * d;
    let n = w.n();
    let h = w.step();
    let rows = w.rows();
    let deriv = GridDerivatives::new(&rows);

    let mut local = LocalGeometry::new(d);
    let mut scratch = vec![0.0; 2 * d];
    let mut wm = vec![0.0; d];
    let mut wdot_mid = vec![0.0; d];
    let mut x = u0.base.0.clone();
    let mut e = u0.basis.as_slice().to_vec();
    let mut frames = Vec::with_capacity(n + 1);
    frames.push(Frame { time: 0.0, base: ChartPoint(x.clone()), basis: DMatrix::from_vec(d, d, e.clone()) });

    // one RK4 stage: (ẋ, Ė) at (t, x, E) with control velocity wdot
    let mut rate = |t: f64, x: &[f64], e: &[f64], wdot: &[f64], dx: &mut [f64], de: &mut [f64]| -> Result<()> {
        if !fam.contains(x) {
            return Err(Error::OutOfChart { family: fam.id().to_string(), point: x.to_vec() });
        }
        local.update(fam, t, x, Needs::ALL)?;
        linalg::matvec(e, wdot, d, dx);
        transport_rhs_raw(&local, d, dx, e, de, &mut scratch);
        Ok(())
    };

    let mut kx = vec![vec![0.0; d]; 4];
    let mut ke = vec![vec![0.0; dd]; 4];
    let mut xs = vec![0.0; d];
    let mut es = vec![0.0; dd];
    for k in 0..n {
        let t = w.time(k);
        deriv.midpoint(&rows, k, &mut wm, &mut wdot_mid);
        let controls = [deriv.velocity(k), &wdot_mid[..], &wdot_mid[..], deriv.velocity(k + 1)];
        let offsets = [0.0, 0.5, 0.5, 1.0];
        for s in 0..4 {
            if s == 0 {
                xs.copy_from_slice(&x);
                es.copy_from_slice(&e);
            } else {
                let c = offsets[s] * h;
                for i in 0..d {
                    xs[i] = x[i] + c * kx[s - 1][i];
                }
                for i in 0..dd {
                    es[i] = e[i] + c * ke[s - 1][i];
                }
            }
            let (kxs, kes) = (&mut kx[s], &mut ke[s]);
            rate(t + offsets[s] * h, &xs, &es, controls[s], kxs, kes)?;
        }
        for i in 0..d {
            x[i] += h / 6.0 * (kx[0][i] + 2.0 * kx[1][i] + 2.0 * kx[2][i] + kx[3][i]);
        }
        for i in 0..dd {
            e[i] += h / 6.0 * (ke[0][i] + 2.0 * ke[1][i] + 2.0 * ke[2][i] + ke[3][i]);
        }
        let t1 = w.time(k + 1);
        if !linalg::all_finite(&x) || !linalg::all_finite(&e) || e.iter().any(|v| v.abs() > BLOWUP_NORM) {
            return Err(Error::BlowUp { t: t1 });
        }
        if !fam.contains(&x) {
            return Err(Error::OutOfChart { family: fam.id().to_string(), point: x.clone() });
        }
        frames.push(Frame { time: t1, base: ChartPoint(x.clone()), basis: DMatrix::from_vec(d, d, e.clone()) });
    }
    let frame_path = FramePath { frames, reorthonormalize_every: None };
    let path = frame_path.base_path();
    Ok((frame_path, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_flat_transport_vanishes() {
        let fam = MetricFamily::euclidean(2).unwrap();
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 2.0]);
        let r = transport_rhs(&fam, 0.4, &[1.0, 2.0], &[0.5, -1.0], &e).unwrap();
        assert_eq!(r, DMatrix::zeros(2, 2));
    }

    #[test]
    fn scalar_transport_rate() {
        let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        let t: f64 = 0.4;
        let e = DMatrix::from_element(1, 1, (1.0 + t).powf(-0.5));
        let r = transport_rhs(&fam, t, &[0.0], &[0.0], &e).unwrap();
        assert_relative_eq!(r[(0, 0)], -0.5 / (1.0 + t) * e[(0, 0)], epsilon = 1e-15);
    }

    #[test]
    fn canonical_frame_defect_is_round_off() {
        let fam = MetricFamily::shrink_sphere(0.5).unwrap();
        let f = Frame::canonical(&fam, 0.3, &[0.4, -0.7]).unwrap();
        assert!(orthonormality_defect(&fam, &f).unwrap() < 1e-14);
        let doubled = Frame { basis: &f.basis * 2.0, ..f };
        assert_relative_eq!(orthonormality_defect(&fam, &doubled).unwrap(), 3.0, epsilon = 1e-13);
    }

    #[test]
    fn gram_schmidt_examples() {
        let fam = MetricFamily::euclidean(2).unwrap();
        let id = gram_schmidt_g(&fam, 0.0, &[0.0, 0.0], &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(id.basis, DMatrix::identity(2, 2));
        let diag = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let fixed = gram_schmidt_g(&fam, 0.0, &[0.0, 0.0], &diag).unwrap();
        assert_eq!(fixed.basis, DMatrix::identity(2, 2));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            gram_schmidt_g(&fam, 0.0, &[0.0, 0.0], &singular),
            Err(Error::DegenerateBasis { column: 1 })
        ));
    }

    #[test]
    fn gram_schmidt_on_random_inputs() {
        let fam = MetricFamily::shrink_sphere(0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t: f64 = rng.gen();
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let e = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let f = gram_schmidt_g(&fam, t, &x, &e).unwrap();
            assert!(orthonormality_defect(&fam, &f).unwrap() <= 1e-12);
            let again = gram_schmidt_g(&fam, t, &x, &f.basis).unwrap();
            assert!((again.basis - &f.basis).abs().max() < 1e-12);
        }
    }

    #[test]
    fn constant_path_in_static_metric_keeps_frame() {
        let fam = MetricFamily::shrink_sphere(0.0).unwrap();
        let x0 = [0.5, 0.2];
        let u0 = Frame::canonical(&fam, 0.0, &x0).unwrap();
        let lift = horizontal_lift(&fam, &Path::constant(&x0, 50).unwrap(), &u0).unwrap();
        for f in &lift.frames {
            assert_eq!(f.basis, u0.basis);
        }
    }

    #[test]
    fn constant_path_in_scalar_metric_decays() {
        let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        let u0 = Frame::canonical(&fam, 0.0, &[0.0]).unwrap();
        let lift = horizontal_lift(&fam, &Path::constant(&[0.0], 100).unwrap(), &u0).unwrap();
        assert_relative_eq!(lift.frames[100].basis[(0, 0)], 1.0 / 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn lift_rejects_bad_start() {
        let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        let u0 = Frame::new(0.0, ChartPoint::new(vec![0.0]), DMatrix::from_element(1, 1, 2.0)).unwrap();
        let err = horizontal_lift(&fam, &Path::constant(&[0.0], 10).unwrap(), &u0).unwrap_err();
        assert!(matches!(err, Error::NonOrthonormalStart { .. }));
    }

    #[test]
    fn constant_path_has_zero_antidevelopment() {
        let fam = MetricFamily::shrink_sphere(0.5).unwrap();
        let x0 = [0.1, 0.2];
        let u0 = Frame::canonical(&fam, 0.0, &x0).unwrap();
        let w = antidevelop(&fam, &Path::constant(&x0, 20).unwrap(), &u0).unwrap();
        assert!(w.values().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn flat_line_antidevelops_to_displacement() {
        let fam = MetricFamily::euclidean(2).unwrap();
        let path = Path::segment(&[1.0, -1.0], &[2.0, 3.0], 40).unwrap();
        let u0 = Frame::new(0.0, ChartPoint::new(vec![1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
        let w = antidevelop(&fam, &path, &u0).unwrap();
        for (k, wk) in w.values().iter().enumerate() {
            let t = path.time(k);
            assert!((wk[0] - t).abs() < 1e-12 && (wk[1] - 4.0 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn development_examples() {
        let fam = MetricFamily::euclidean(2).unwrap();
        let u0 = Frame::new(0.0, ChartPoint::origin(2), DMatrix::identity(2, 2)).unwrap();
        let (_, still) = develop(&fam, &ControlPath::from_fn(10, |_| vec![0.0, 0.0]).unwrap(), &u0).unwrap();
        assert!(still.points().iter().all(|p| p.0 == vec![0.0, 0.0]));
        let (_, line) = develop(&fam, &ControlPath::from_fn(10, |t| vec![t, 0.0]).unwrap(), &u0).unwrap();
        for (k, p) in line.points().iter().enumerate() {
            assert!((p[0] - k as f64 / 10.0).abs() < 1e-14 && p[1] == 0.0);
        }
    }

    #[test]
    fn development_leaving_chart_is_an_error() {
        let fam = MetricFamily::shrink_sphere(0.0).unwrap();
        let u0 = Frame::canonical(&fam, 0.0, &[0.0, 0.0]).unwrap();
        // a unit-speed great circle of length 3.1 almost reaches the antipode
        let w = ControlPath::from_fn(100, |t| vec![3.14 * t, 0.0]).unwrap();
        assert!(matches!(develop(&fam, &w, &u0), Err(Error::OutOfChart { .. })));
    }
}
