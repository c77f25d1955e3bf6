//! Rate functionals and fixed-endpoint action minimization.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::framebundle::{ControlPath, Path};
use crate::geometry::{ChartPoint, MetricFamily};
use crate::linalg::idx;
use crate::sampler::EuclideanDiffusion;

/// Convergence threshold on the sup-norm of the interior gradient.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100_000;

/// A nonnegative action or the explicit infinite marker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Finite(f64),
    Infinite,
}

impl Action {
    pub fn finite(self) -> Option<f64> {
        match self {
            Action::Finite(v) => Some(v),
            Action::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Action::Infinite
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Finite(v) => write!(f, "{v}"),
            Action::Infinite => f.write_str("+inf"),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Action::Finite(v) => s.serialize_f64(*v),
            Action::Infinite => s.serialize_str("+inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Action::Finite(v)),
            Raw::Str(s) if s == "+inf" => Ok(Action::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid action value {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Cell differences with the metric frozen at the cell midpoint.
    Midpoint,
    /// Cellwise Simpson rule on the piecewise-linear interpolant.
    Simpson,
    /// `½ Σ |Δw|² / h` on a control path.
    Increments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub value: Action,
    pub grid: usize,
    pub quadrature: Quadrature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl ActionValue {
    fn finite(value: f64, grid: usize, quadrature: Quadrature) -> Self {
        Self { value: Action::Finite(value), grid, quadrature, diagnostic: None }
    }
}

/// Per-cell terms `½ Δγᵀ G(t_{k+½}, γ_{k+½}) Δγ / h` of the discrete action.
pub(crate) struct CellAction<'a> {
    fam: &'a MetricFamily,
    g: Vec<f64>,
    dx: Vec<f64>,
    mid: Vec<f64>,
    delta: Vec<f64>,
}

impl<'a> CellAction<'a> {
    pub fn new(fam: &'a MetricFamily) -> Self {
        let d = fam.dim();
        Self { fam, g: vec![0.0; d * d], dx: vec![0.0; d * d * d], mid: vec![0.0; d], delta: vec![0.0; d] }
    }

    fn load(&mut self, t: f64, a: &[f64], b: &[f64]) -> bool {
        for i in 0..a.len() {
            self.mid[i] = 0.5 * (a[i] + b[i]);
            self.delta[i] = b[i] - a[i];
        }
        if !self.fam.contains(&self.mid) {
            return false;
        }
        self.fam.fill_metric(t, &self.mid, &mut self.g);
        true
    }

    /// `tr G / d` at the last loaded midpoint.
    fn mean_scale(&self) -> f64 {
        let d = self.delta.len();
        (0..d).map(|i| self.g[idx(d, i, i)]).sum::<f64>() / d as f64
    }

    fn quadratic(&self) -> f64 {
        let d = self.delta.len();
        let mut s = 0.0;
        for j in 0..d {
            for i in 0..d {
                s += self.delta[i] * self.g[idx(d, i, j)] * self.delta[j];
            }
        }
        s
    }

    /// Cell action, or `None` if the midpoint leaves the chart.
    pub fn value(&mut self, t: f64, h: f64, a: &[f64], b: &[f64]) -> Option<f64> {
        self.load(t, a, b).then(|| 0.5 * self.quadratic() / h)
    }

    /// Cell action and its gradients with respect to the left and right nodes.
    fn value_and_gradient(&mut self, t: f64, h: f64, a: &[f64], b: &[f64], ga: &mut [f64], gb: &mut [f64]) -> Option<f64> {
        if !self.load(t, a, b) {
            return None;
        }
        let d = self.delta.len();
        self.fam.fill_metric_dx(t, &self.mid, &mut self.dx);
        for i in 0..d {
            let mut gd = 0.0;
            for j in 0..d {
                gd += self.g[idx(d, i, j)] * self.delta[j];
            }
            // ∂ᵢG(Δ, Δ), the midpoint moves by half of each node displacement
            let mut dq = 0.0;
            for q in 0..d {
                for p in 0..d {
                    dq += self.delta[p] * self.dx[i * d * d + idx(d, p, q)] * self.delta[q];
                }
            }
            ga[i] = (-gd + 0.25 * dq) / h;
            gb[i] = (gd + 0.25 * dq) / h;
        }
        Some(0.5 * self.quadratic() / h)
    }
}

fn check_path(fam: &MetricFamily, path: &Path) -> Result<()> {
    if path.dim() != fam.dim() {
        return Err(Error::DimensionMismatch { expected: fam.dim(), got: path.dim() });
    }
    path.points().iter().try_for_each(|p| fam.check_point(p))
}

/// `I_M(γ) = ½∫₀¹ |γ̇|²_{g(t)} dt` by the midpoint rule on cell differences.
pub fn action_manifold(fam: &MetricFamily, path: &Path) -> Result<ActionValue> {
    check_path(fam, path)?;
    let n = path.n();
    let h = path.step();
    let pts = path.points();
    let mut cell = CellAction::new(fam);
    let mut total = 0.0;
    for k in 0..n {
        let t = (k as f64 + 0.5) * h;
        total += cell.value(t, h, &pts[k], &pts[k + 1]).ok_or_else(|| Error::OutOfChart {
            family: fam.id().to_string(),
            point: pts[k].iter().zip(pts[k + 1].iter()).map(|(a, b)| 0.5 * (a + b)).collect(),
        })?;
    }
    Ok(ActionValue::finite(total, n, Quadrature::Midpoint))
}

/// `½ Σ |Δw|² / h`.
pub fn control_action(w: &ControlPath) -> ActionValue {
    let h = w.step();
    let total: f64 = w
        .values()
        .windows(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
        .sum::<f64>()
        * 0.5
        / h;
    ActionValue::finite(total, w.n(), Quadrature::Increments)
}

/// Control rates `φ̇ = σ⁻¹(γ̇ − b)` sampled at the nodes and cell midpoints of
/// the piecewise-linear interpolant of `γ`, and the integrated control `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// `[k][side]`: rates at the left node, midpoint and right node of cell `k`.
    pub rates: Vec<[Vec<f64>; 3]>,
    pub control: ControlPath,
}

enum Reconstructed {
    Ok(Reconstruction),
    Singular(String),
}

fn reconstruct(sde: &dyn EuclideanDiffusion, path: &Path) -> Result<Reconstructed> {
    let d = sde.dim();
    if sde.noise_dim() != d {
        return Ok(Reconstructed::Singular(format!(
            "diffusion matrix is {d}x{}; only square invertible σ is reconstructible",
            sde.noise_dim()
        )));
    }
    if path.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: path.dim() });
    }
    let n = path.n();
    let h = path.step();
    let pts = path.points();
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut x = vec![0.0; d];
    let mut rates = Vec::with_capacity(n);
    let mut phi = vec![vec![0.0; d]];
    for k in 0..n {
        let slope: Vec<f64> = (0..d).map(|i| (pts[k + 1][i] - pts[k][i]) / h).collect();
        let mut cell: [Vec<f64>; 3] = Default::default();
        for (s, frac) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            let t = (k as f64 + frac) * h;
            for i in 0..d {
                x[i] = pts[k][i] + frac * (pts[k + 1][i] - pts[k][i]);
            }
            sde.drift(t, &x, &mut b);
            sde.diffusion(t, &x, &mut sig);
            let m = DMatrix::from_column_slice(d, d, &sig);
            let rhs = DVector::from_iterator(d, (0..d).map(|i| slope[i] - b[i]));
            let lu = m.lu();
            let scale = sig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let det = lu.determinant();
            if !(det.abs() > 1e-14 * scale.powi(d as i32)) {
                return Ok(Reconstructed::Singular(format!("diffusion matrix is singular at t = {t}, x = {x:?}")));
            }
            match lu.solve(&rhs) {
                Some(v) if v.iter().all(|c| c.is_finite()) => cell[s] = v.as_slice().to_vec(),
                _ => return Ok(Reconstructed::Singular(format!("diffusion matrix is singular at t = {t}, x = {x:?}"))),
            }
        }
        let last = phi.last().unwrap();
        let next = (0..d).map(|i| last[i] + h / 6.0 * (cell[0][i] + 4.0 * cell[1][i] + cell[2][i])).collect();
        phi.push(next);
        rates.push(cell);
    }
    Ok(Reconstructed::Ok(Reconstruction { rates, control: ControlPath::new(phi)? }))
}

/// Reconstruction of the driving control of `γ̇ = b + σφ̇`, or an error
/// carrying the diagnostic when `σ` is not invertible along `γ`.
pub fn reconstruct_control(sde: &dyn EuclideanDiffusion, path: &Path) -> Result<Reconstruction> {
    match reconstruct(sde, path)? {
        Reconstructed::Ok(r) => Ok(r),
        Reconstructed::Singular(msg) => Err(Error::InvalidInput(msg)),
    }
}

/// Freidlin–Wentzell action `½∫|φ̇|² dt` of the control reconstructing `γ`,
/// integrated cellwise by Simpson's rule. Infinite when `σ` is singular.
pub fn action_fw(sde: &dyn EuclideanDiffusion, path: &Path) -> Result<ActionValue> {
    let n = path.n();
    match reconstruct(sde, path)? {
        Reconstructed::Singular(msg) => {
            Ok(ActionValue { value: Action::Infinite, grid: n, quadrature: Quadrature::Simpson, diagnostic: Some(msg) })
        }
        Reconstructed::Ok(r) => {
            let h = path.step();
            let sq = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>();
            let total: f64 =
                r.rates.iter().map(|c| h / 6.0 * (sq(&c[0]) + 4.0 * sq(&c[1]) + sq(&c[2]))).sum::<f64>() * 0.5;
            Ok(ActionValue::finite(total, n, Quadrature::Simpson))
        }
    }
}

/// Integrates `γ̇ = b(t, γ) + σ(t, γ)φ̇` by RK4, taking the control rates at
/// the stage times from a [`Reconstruction`].
pub fn integrate_controlled(sde: &dyn EuclideanDiffusion, x0: &[f64], rec: &Reconstruction) -> Result<Path> {
    let d = sde.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
    }
    let n = rec.rates.len();
    let h = 1.0 / n as f64;
    let mut b = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut field = |t: f64, x: &[f64], rate: &[f64], out: &mut [f64]| {
        sde.drift(t, x, &mut b);
        sde.diffusion(t, x, &mut sig);
        for i in 0..d {
            out[i] = b[i] + (0..d).map(|j| sig[idx(d, i, j)] * rate[j]).sum::<f64>();
        }
    };
    let mut x = x0.to_vec();
    let mut pts = vec![ChartPoint(x.clone())];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for (k, r) in rec.rates.iter().enumerate() {
        let t = k as f64 * h;
        field(t, &x, &r[0], &mut k1);
        (0..d).for_each(|i| tmp[i] = x[i] + 0.5 * h * k1[i]);
        field(t + 0.5 * h, &tmp, &r[1], &mut k2);
        (0..d).for_each(|i| tmp[i] = x[i] + 0.5 * h * k2[i]);
        field(t + 0.5 * h, &tmp, &r[1], &mut k3);
        (0..d).for_each(|i| tmp[i] = x[i] + h * k3[i]);
        field(t + h, &tmp, &r[2], &mut k4);
        (0..d).for_each(|i| x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t: t + h });
        }
        pts.push(ChartPoint(x.clone()));
    }
    Path::new(pts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerReport {
    pub path: Path,
    pub action: ActionValue,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerOptions {
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self { gradient_tolerance: GRADIENT_TOLERANCE, max_iterations: MAX_ITERATIONS }
    }
}

/// Discrete action and its gradient over the interior nodes, or `None` if a
/// cell midpoint leaves the chart. `weights` receives the mean metric scale
/// of each cell.
fn objective(cell: &mut CellAction, rows: &[Vec<f64>], grad: &mut [Vec<f64>], weights: &mut [f64]) -> Option<f64> {
    let n = rows.len() - 1;
    let d = rows[0].len();
    let h = 1.0 / n as f64;
    let (mut ga, mut gb) = (vec![0.0; d], vec![0.0; d]);
    grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
    let mut total = 0.0;
    for k in 0..n {
        if rows[k].iter().chain(&rows[k + 1]).any(|v| !v.is_finite()) || !cell.fam.contains(&rows[k]) {
            return None;
        }
        total += cell.value_and_gradient((k as f64 + 0.5) * h, h, &rows[k], &rows[k + 1], &mut ga, &mut gb)?;
        weights[k] = cell.mean_scale();
        for i in 0..d {
            grad[k][i] += ga[i];
            grad[k + 1][i] += gb[i];
        }
    }
    grad[0].iter_mut().for_each(|v| *v = 0.0);
    grad[n].iter_mut().for_each(|v| *v = 0.0);
    Some(total)
}

/// Solves `P y = r` over the interior nodes, one coordinate at a time
/// (Thomas algorithm), where `P` is the cell-weighted discrete Laplacian
/// `(Pz)_j = (w_{j−1}(z_j − z_{j−1}) − w_j(z_{j+1} − z_j)) / h`. With `w` the
/// metric scale this is the Hessian of the action for a metric frozen per
/// cell, so unit steps are close to Newton steps.
fn sobolev_precondition(grad: &[Vec<f64>], weights: &[f64], out: &mut [Vec<f64>], c: &mut [f64]) {
    let n = grad.len() - 1;
    let d = grad[0].len();
    let h = 1.0 / n as f64;
    let m = n - 1;
    for i in 0..d {
        let mut prev_c = 0.0;
        let mut prev_y = 0.0;
        for j in 0..m {
            let (left, right) = (weights[j] / h, weights[j + 1] / h);
            let denom = left + right + left * prev_c;
            let cj = -right / denom;
            let yj = (grad[j + 1][i] + left * prev_y) / denom;
            c[j] = cj;
            out[j + 1][i] = yj;
            prev_c = cj;
            prev_y = yj;
        }
        for j in (0..m.saturating_sub(1)).rev() {
            let next = out[j + 2][i];
            out[j + 1][i] -= c[j] * next;
        }
        out[0][i] = 0.0;
        out[n][i] = 0.0;
    }
}

fn sup_norm(v: &[Vec<f64>]) -> f64 {
    v.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Minimizes the discrete action over paths with fixed endpoints `x0`, `x1`
/// on `n` cells, starting from the straight chart segment unless `init` is
/// given.
pub fn minimize_action(fam: &MetricFamily, x0: &[f64], x1: &[f64], n: usize, init: Option<&Path>) -> Result<MinimizerReport> {
    minimize_action_with(fam, x0, x1, n, init, &MinimizerOptions::default())
}

/// Gradient descent in the discrete H¹ inner product (the Euclidean gradient
/// preconditioned by the discrete Laplacian), with Armijo backtracking.
/// Steps whose cells leave the chart are rejected and shortened.
pub fn minimize_action_with(
    fam: &MetricFamily,
    x0: &[f64],
    x1: &[f64],
    n: usize,
    init: Option<&Path>,
    opts: &MinimizerOptions,
) -> Result<MinimizerReport> {
    fam.check_point(x0)?;
    fam.check_point(x1)?;
    if n < 1 {
        return Err(Error::InvalidInput("minimization needs at least one cell".into()));
    }
    let start = match init {
        Some(p) => {
            if p.n() != n {
                return Err(Error::InvalidInput(format!("initial path has {} cells, expected {n}", p.n())));
            }
            check_path(fam, p)?;
            let mut pts = p.points().to_vec();
            pts[0] = ChartPoint(x0.to_vec());
            pts[n] = ChartPoint(x1.to_vec());
            Path::new(pts)?
        }
        None => Path::segment(x0, x1, n)?,
    };
    check_path(fam, &start)?;
    let d = fam.dim();
    let mut rows: Vec<Vec<f64>> = start.points().iter().map(|p| p.0.clone()).collect();
    let mut cell = CellAction::new(fam);
    let mut grad = vec![vec![0.0; d]; n + 1];
    let mut dir = vec![vec![0.0; d]; n + 1];
    let mut trial = rows.clone();
    let mut trial_grad = grad.clone();
    let mut scratch = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut trial_weights = vec![0.0; n];
    let mut f = objective(&mut cell, &rows, &mut grad, &mut weights).ok_or_else(|| Error::OutOfChart {
        family: fam.id().to_string(),
        point: x0.to_vec(),
    })?;
    let mut gnorm = sup_norm(&grad);
    let mut alpha: f64 = 1.0;
    let mut iterations = 0;
    while gnorm > opts.gradient_tolerance && iterations < opts.max_iterations && n > 1 {
        sobolev_precondition(&grad, &weights, &mut dir, &mut scratch);
        let slope: f64 = -grad.iter().flatten().zip(dir.iter().flatten()).map(|(g, p)| g * p).sum::<f64>();
        let mut accepted = false;
        let mut step = (alpha * 2.0).min(1.0);
        for _ in 0..80 {
            for k in 1..n {
                for i in 0..d {
                    trial[k][i] = rows[k][i] - step * dir[k][i];
                }
            }
            if let Some(ft) = objective(&mut cell, &trial, &mut trial_grad, &mut trial_weights) {
                let armijo = ft <= f + 1e-4 * step * slope;
                // near the optimum the decrease drops below the rounding of f;
                // a strict gradient decrease then decides
                let flat = (ft - f).abs() <= 1e-13 * f.abs().max(1e-300) && sup_norm(&trial_grad) < gnorm;
                if armijo || flat {
                    accepted = true;
                    f = ft;
                    break;
                }
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        alpha = step;
        std::mem::swap(&mut rows, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        std::mem::swap(&mut weights, &mut trial_weights);
        gnorm = sup_norm(&grad);
    }
    let converged = gnorm <= opts.gradient_tolerance;
    let path = Path::new(rows.into_iter().map(ChartPoint).collect())?;
    let action = action_manifold(fam, &path)?;
    Ok(MinimizerReport { path, action, iterations, gradient_norm: gnorm, converged })
}
