//! Sampling of `g(t)`-Brownian motion and of Euclidean diffusions.
//!
//! The manifold process is the projection `X = πU` of the frame-bundle SDE
//!
//! ```text
//! dU = Hᵢ(t, U) ∘ dW^{ε,i} − ½ (∂ₜg)(U eᵢ, U eⱼ) V_ij(U) dt,   W^ε = √ε W
//! ```
//!
//! In chart coordinates `U = (x, E)`, the horizontal field driven by `dW` is
//! `dx = E dW`, `dE_j = −Γ(E dW, E_j)`, and the vertical drift acts as
//! `dE = −½ E M dt` with `M = Eᵀ (∂ₜg) E`. Integration uses the
//! Stratonovich–Heun predictor–corrector with the drift taken at the
//! midpoint of predictor and start.

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framebundle::{orthonormality_defect, Frame, FramePath, Path, FRAME_TOLERANCE};
use crate::geometry::{ChartPoint, LocalGeometry, MetricFamily, Needs};
use crate::linalg::{self, idx};
use crate::rng::{NoiseConfig, NoiseStream};

const BLOWUP_NORM: f64 = 1e12;

/// Trajectories are reduced in fixed-size chunks so the floating-point
/// summation order never depends on the worker count.
pub(crate) const REDUCTION_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    ChartExit,
    BlowUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub time: f64,
    pub reason: AbortReason,
}

/// One simulated trajectory. Aborted trajectories keep the grid points
/// visited before leaving the chart.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub points: Vec<ChartPoint>,
    pub frames: Option<Vec<Frame>>,
    pub abort: Option<Abort>,
    pub n_steps: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl SamplePath {
    pub fn aborted(&self) -> bool {
        self.abort.is_some()
    }

    /// The full grid path, if the trajectory reached `t = 1`.
    pub fn path(&self) -> Option<Path> {
        if self.aborted() {
            return None;
        }
        Path::new(self.points.clone()).ok()
    }

    pub fn frame_path(&self) -> Option<FramePath> {
        self.frames.clone().map(|frames| FramePath { frames, reorthonormalize_every: None })
    }

    pub fn final_point(&self) -> &ChartPoint {
        self.points.last().expect("sample paths contain the start point")
    }
}

/// Result of integrating a single trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Outcome {
    Completed,
    Stopped { step: usize },
    Aborted(Abort),
}

/// Stratonovich–Heun stepper for the frame-bundle SDE on raw buffers.
pub(crate) struct FrameSdeStepper<'a> {
    fam: &'a MetricFamily,
    d: usize,
    geo: LocalGeometry,
    v: Vec<f64>,
    gam: Vec<f64>,
    kx0: Vec<f64>,
    ke0: Vec<f64>,
    kx1: Vec<f64>,
    ke1: Vec<f64>,
    xs: Vec<f64>,
    es: Vec<f64>,
    m: Vec<f64>,
    drift: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> FrameSdeStepper<'a> {
    pub fn new(fam: &'a MetricFamily) -> Self {
        let d = fam.dim();
        let dd = d * d;
        Self {
            fam,
            d,
            geo: LocalGeometry::new(d),
            v: vec![0.0; d],
            gam: vec![0.0; d],
            kx0: vec![0.0; d],
            ke0: vec![0.0; dd],
            kx1: vec![0.0; d],
            ke1: vec![0.0; dd],
            xs: vec![0.0; d],
            es: vec![0.0; dd],
            m: vec![0.0; dd],
            drift: vec![0.0; dd],
            tmp: vec![0.0; dd],
        }
    }

    /// Horizontal part driven by `dw`, using the geometry currently loaded.
    fn horizontal(&mut self, e: &[f64], dw: &[f64], kx: &mut [f64], ke: &mut [f64]) {
        let d = self.d;
        linalg::matvec(e, dw, d, &mut self.v);
        kx.copy_from_slice(&self.v);
        for j in 0..d {
            self.geo.contract_gamma(&self.v, &e[j * d..(j + 1) * d], &mut self.gam);
            for k in 0..d {
                ke[j * d + k] = -self.gam[k];
            }
        }
    }

    /// `−½ E Eᵀ(∂ₜg)E` into `self.drift`, using the geometry currently loaded.
    fn vertical_drift(&mut self, e: &[f64]) {
        let d = self.d;
        let dt = self.geo.metric_dt();
        linalg::matmul(dt, e, d, &mut self.tmp);
        // M = Eᵀ (∂ₜg E), M_ij = (∂ₜg)(E eᵢ, E eⱼ)
        for j in 0..d {
            for i in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += e[idx(d, k, i)] * self.tmp[idx(d, k, j)];
                }
                self.m[idx(d, i, j)] = s;
            }
        }
        linalg::matmul(e, &self.m, d, &mut self.drift);
        self.drift.iter_mut().for_each(|v| *v *= -0.5);
    }

    fn out_of_chart(&self, x: &[f64]) -> bool {
        !self.fam.contains(x)
    }

    /// Advances `(x, e)` from `t` to `t + h` with increment `dw`.
    pub fn step(&mut self, t: f64, h: f64, x: &mut [f64], e: &mut [f64], dw: &[f64]) -> std::result::Result<(), Abort> {
        if self.d == 1 {
            return self.step_scalar(t, h, &mut x[0], &mut e[0], dw[0]);
        }
        self.step_general(t, h, x, e, dw)
    }

    /// The same scheme written out for `d = 1`, where `Γ = g'/(2g)` and the
    /// vertical drift is `−½ e³ ∂ₜg`.
    fn step_scalar(&mut self, t: f64, h: f64, x: &mut f64, e: &mut f64, dw: f64) -> std::result::Result<(), Abort> {
        let blowup = |time| Abort { time, reason: AbortReason::BlowUp };
        let exit = |time| Abort { time, reason: AbortReason::ChartExit };
        let fam = self.fam;
        let (mut g, mut gx, mut gt) = ([0.0], [0.0], [0.0]);
        let mut gamma = |t: f64, x: f64| -> Option<f64> {
            fam.fill_metric(t, &[x], &mut g);
            if !(g[0] > 0.0) {
                return None;
            }
            fam.fill_metric_dx(t, &[x], &mut gx);
            Some(0.5 * gx[0] / g[0])
        };

        let gam0 = gamma(t, *x).ok_or(blowup(t))?;
        fam.fill_metric_dt(t, &[*x], &mut gt);
        let v0 = *e * dw;
        let ke0 = -gam0 * v0 * *e;
        let xs = *x + v0;
        let es = *e + ke0 - 0.5 * *e * *e * *e * gt[0] * h;
        if !fam.contains(&[xs]) {
            return Err(exit(t + h));
        }

        let gam1 = gamma(t + h, xs).ok_or(blowup(t + h))?;
        let v1 = es * dw;
        let ke1 = -gam1 * v1 * es;

        let xm = 0.5 * (*x + xs);
        let em = 0.5 * (*e + es);
        if !fam.contains(&[xm]) {
            return Err(exit(t + h));
        }
        fam.fill_metric_dt(t + 0.5 * h, &[xm], &mut gt);
        *x += 0.5 * (v0 + v1);
        *e += 0.5 * (ke0 + ke1) - 0.5 * em * em * em * gt[0] * h;

        if !x.is_finite() || !e.is_finite() || e.abs() > BLOWUP_NORM {
            return Err(blowup(t + h));
        }
        if !fam.contains(&[*x]) {
            return Err(exit(t + h));
        }
        Ok(())
    }

    fn step_general(&mut self, t: f64, h: f64, x: &mut [f64], e: &mut [f64], dw: &[f64]) -> std::result::Result<(), Abort> {
        let d = self.d;
        let dd = d * d;
        let blowup = |time| Abort { time, reason: AbortReason::BlowUp };
        let exit = |time| Abort { time, reason: AbortReason::ChartExit };

        self.geo.update(self.fam, t, x, Needs::ALL).map_err(|_| blowup(t))?;
        let (mut kx0, mut ke0) = (std::mem::take(&mut self.kx0), std::mem::take(&mut self.ke0));
        self.horizontal(e, dw, &mut kx0, &mut ke0);
        self.vertical_drift(e);
        for i in 0..d {
            self.xs[i] = x[i] + kx0[i];
        }
        for i in 0..dd {
            self.es[i] = e[i] + ke0[i] + self.drift[i] * h;
        }
        if self.out_of_chart(&self.xs) {
            self.kx0 = kx0;
            self.ke0 = ke0;
            return Err(exit(t + h));
        }

        let xs = std::mem::take(&mut self.xs);
        let es = std::mem::take(&mut self.es);
        self.geo.update(self.fam, t + h, &xs, Needs::CHRISTOFFEL).map_err(|_| blowup(t + h))?;
        let (mut kx1, mut ke1) = (std::mem::take(&mut self.kx1), std::mem::take(&mut self.ke1));
        self.horizontal(&es, dw, &mut kx1, &mut ke1);

        // drift at the midpoint of start and predictor
        let mut xm = xs;
        let mut em = es;
        for i in 0..d {
            xm[i] = 0.5 * (x[i] + xm[i]);
        }
        for i in 0..dd {
            em[i] = 0.5 * (e[i] + em[i]);
        }
        let mid_ok = !self.out_of_chart(&xm);
        if mid_ok {
            self.geo
                .update(self.fam, t + 0.5 * h, &xm, Needs::TIME_DERIVATIVE)
                .map_err(|_| blowup(t + 0.5 * h))?;
            self.vertical_drift(&em);
        }
        self.xs = xm;
        self.es = em;
        if !mid_ok {
            self.kx0 = kx0;
            self.ke0 = ke0;
            self.kx1 = kx1;
            self.ke1 = ke1;
            return Err(exit(t + h));
        }

        for i in 0..d {
            x[i] += 0.5 * (kx0[i] + kx1[i]);
        }
        for i in 0..dd {
            e[i] += 0.5 * (ke0[i] + ke1[i]) + self.drift[i] * h;
        }
        self.kx0 = kx0;
        self.ke0 = ke0;
        self.kx1 = kx1;
        self.ke1 = ke1;

        if !linalg::all_finite(x) || !linalg::all_finite(e) || e.iter().any(|v| v.abs() > BLOWUP_NORM) {
            return Err(blowup(t + h));
        }
        if self.out_of_chart(x) {
            return Err(exit(t + h));
        }
        Ok(())
    }
}

/// Integrates the frame-bundle SDE on `[t0, t1]` with `n` Heun steps.
/// `observe(k, t, x, e)` sees every grid state including the start and may
/// stop the run early.
pub(crate) fn integrate_frame_sde(
    fam: &MetricFamily,
    x0: &[f64],
    e0: &[f64],
    (t0, t1): (f64, f64),
    n: usize,
    epsilon: f64,
    stream: &mut NoiseStream,
    mut observe: impl FnMut(usize, f64, &[f64], &[f64]) -> ControlFlow<()>,
) -> Outcome {
    let d = fam.dim();
    let h = (t1 - t0) / n as f64;
    let mut stepper = FrameSdeStepper::new(fam);
    let mut x = x0.to_vec();
    let mut e = e0.to_vec();
    let mut dw = vec![0.0; d];
    if observe(0, t0, &x, &e).is_break() {
        return Outcome::Stopped { step: 0 };
    }
    for k in 0..n {
        let t = t0 + k as f64 * h;
        stream.increments(epsilon, h, &mut dw);
        if let Err(abort) = stepper.step(t, h, &mut x, &mut e, &dw) {
            return Outcome::Aborted(abort);
        }
        let tk = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * h };
        if observe(k + 1, tk, &x, &e).is_break() {
            return Outcome::Stopped { step: k + 1 };
        }
    }
    Outcome::Completed
}

pub(crate) fn check_start_frame(fam: &MetricFamily, u0: &Frame, t0: f64) -> Result<()> {
    fam.check_point(&u0.base)?;
    let defect = orthonormality_defect(fam, &Frame { time: t0, ..u0.clone() })?;
    if defect > FRAME_TOLERANCE {
        return Err(Error::NonOrthonormalStart { defect, tolerance: FRAME_TOLERANCE });
    }
    Ok(())
}

/// Samples one `g(t)`-Brownian trajectory with noise scale `ε` on `[0, 1]`.
pub fn sample_gbm(fam: &MetricFamily, u0: &Frame, noise: &NoiseConfig) -> Result<SamplePath> {
    sample_gbm_with(fam, u0, noise, true)
}

/// As [`sample_gbm`], optionally skipping the frame record.
pub fn sample_gbm_with(fam: &MetricFamily, u0: &Frame, noise: &NoiseConfig, keep_frames: bool) -> Result<SamplePath> {
    noise.validate()?;
    check_start_frame(fam, u0, 0.0)?;
    let d = fam.dim();
    let n = noise.n_steps;
    let mut points = Vec::with_capacity(n + 1);
    let mut frames = keep_frames.then(|| Vec::with_capacity(n + 1));
    let mut stream = noise.stream();
    let outcome = integrate_frame_sde(fam, &u0.base, u0.basis.as_slice(), (0.0, 1.0), n, noise.epsilon, &mut stream, |_, t, x, e| {
        points.push(ChartPoint(x.to_vec()));
        if let Some(frames) = frames.as_mut() {
            frames.push(Frame { time: t, base: ChartPoint(x.to_vec()), basis: DMatrix::from_column_slice(d, d, e) });
        }
        ControlFlow::Continue(())
    });
    let abort = match outcome {
        Outcome::Aborted(a) => Some(a),
        _ => None,
    };
    Ok(SamplePath { points, frames, abort, n_steps: n, seed: noise.seed, stream_id: noise.stream_id })
}

/// `ψ(t) = ∫₀ᵗ 1/g(r) dr` on the grid `k/n`, by adaptive Simpson quadrature.
pub fn time_change(fam: &MetricFamily, x0: &[f64], n: usize) -> Vec<f64> {
    let mut g = [0.0];
    let inv = |t: f64| {
        let mut g = [0.0];
        fam.fill_metric(t, x0, &mut g);
        1.0 / g[0]
    };
    fam.fill_metric(0.0, x0, &mut g);
    let mut psi = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    psi.push(0.0);
    for k in 0..n {
        let (a, b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
        acc += adaptive_simpson(&inv, a, b, 1e-12 / n as f64, 40);
        psi.push(acc);
    }
    psi
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

pub(crate) fn check_scalar_family(fam: &MetricFamily, x0: &[f64]) -> Result<()> {
    if fam.dim() != 1 {
        return Err(Error::InvalidInput("the time-change reference needs a one-dimensional family".into()));
    }
    fam.check_point(x0)?;
    for probe in [x0[0], x0[0] - 1.0, x0[0] + 1.0] {
        for t in [0.0, 0.5, 1.0] {
            let mut dx = [0.0];
            fam.fill_metric_dx(t, &[probe], &mut dx);
            if dx[0] != 0.0 {
                return Err(Error::InvalidInput("the time-change reference needs a spatially constant metric".into()));
            }
        }
    }
    Ok(())
}

/// Exact grid sampling of `x0 + √ε W_{ψ(t)}` for a spatially constant 1-D
/// metric. Uses the same normal draws as [`sample_gbm`] for equal noise
/// configs, so the two are coupled.
pub fn sample_scalar_reference(fam: &MetricFamily, x0: &[f64], noise: &NoiseConfig) -> Result<SamplePath> {
    noise.validate()?;
    check_scalar_family(fam, x0)?;
    let psi = time_change(fam, x0, noise.n_steps);
    Ok(scalar_reference_with(&psi, x0[0], noise))
}

pub(crate) fn scalar_reference_with(psi: &[f64], x0: f64, noise: &NoiseConfig) -> SamplePath {
    let n = psi.len() - 1;
    let mut stream = noise.stream();
    let mut z = [0.0];
    let mut x = x0;
    let mut points = Vec::with_capacity(n + 1);
    points.push(ChartPoint(vec![x]));
    for k in 0..n {
        stream.standard_normals(&mut z);
        x += (noise.epsilon * (psi[k + 1] - psi[k])).sqrt() * z[0];
        points.push(ChartPoint(vec![x]));
    }
    SamplePath { points, frames: None, abort: None, n_steps: n, seed: noise.seed, stream_id: noise.stream_id }
}

/// Stochastic calculus convention for [`sample_euclidean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Ito,
    Stratonovich,
}

/// `dX = b(t, X) dt + √ε σ(t, X) dW` on ℝᵈ with `m`-dimensional noise.
/// `b` and `σ` are expected to be jointly Lipschitz; this is not checked.
pub trait EuclideanDiffusion: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize {
        self.dim()
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Column-major `d×m`.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// [`EuclideanDiffusion`] built from two closures.
pub struct FnDiffusion<B, S> {
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: B,
    pub diffusion: S,
}

impl<B, S> FnDiffusion<B, S>
where
    B: Fn(f64, &[f64], &mut [f64]) + Sync,
    S: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, drift: B, diffusion: S) -> Self {
        Self { dim, noise_dim: dim, drift, diffusion }
    }
}

impl<B, S> EuclideanDiffusion for FnDiffusion<B, S>
where
    B: Fn(f64, &[f64], &mut [f64]) + Sync,
    S: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

/// Euler–Maruyama (Itô) or Heun (Stratonovich) sample path on `[0, 1]`.
pub fn sample_euclidean(sde: &dyn EuclideanDiffusion, x0: &[f64], noise: &NoiseConfig, scheme: Scheme) -> Result<SamplePath> {
    noise.validate()?;
    let d = sde.dim();
    let m = sde.noise_dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
    }
    let n = noise.n_steps;
    let h = 1.0 / n as f64;
    let mut stream = noise.stream();
    let mut x = x0.to_vec();
    let mut dw = vec![0.0; m];
    let (mut b0, mut b1) = (vec![0.0; d], vec![0.0; d]);
    let (mut s0, mut s1) = (vec![0.0; d * m], vec![0.0; d * m]);
    let mut xp = vec![0.0; d];
    let mut points = Vec::with_capacity(n + 1);
    points.push(ChartPoint(x.clone()));
    let noise_term = |s: &[f64], dw: &[f64], i: usize| -> f64 { (0..m).map(|j| s[i + j * d] * dw[j]).sum() };
    for k in 0..n {
        let t = k as f64 * h;
        stream.increments(noise.epsilon, h, &mut dw);
        sde.drift(t, &x, &mut b0);
        sde.diffusion(t, &x, &mut s0);
        match scheme {
            Scheme::Ito => {
                for i in 0..d {
                    x[i] += b0[i] * h + noise_term(&s0, &dw, i);
                }
            }
            Scheme::Stratonovich => {
                for i in 0..d {
                    xp[i] = x[i] + b0[i] * h + noise_term(&s0, &dw, i);
                }
                sde.drift(t + h, &xp, &mut b1);
                sde.diffusion(t + h, &xp, &mut s1);
                for i in 0..d {
                    x[i] += 0.5 * (b0[i] + b1[i]) * h + 0.5 * (noise_term(&s0, &dw, i) + noise_term(&s1, &dw, i));
                }
            }
        }
        if !linalg::all_finite(&x) || x.iter().any(|v| v.abs() > BLOWUP_NORM) {
            return Err(Error::BlowUp { t: t + h });
        }
        points.push(ChartPoint(x.clone()));
    }
    Ok(SamplePath { points, frames: None, abort: None, n_steps: n, seed: noise.seed, stream_id: noise.stream_id })
}

/// Smooth test function with closed-form chart derivatives.
pub trait TestFunction: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Column-major `d×d` Hessian.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BuiltinTestFunction {
    Constant { value: f64 },
    Coordinate { index: usize },
    SquaredNorm,
}

impl TestFunction for BuiltinTestFunction {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Coordinate { index } => x[index],
            Self::SquaredNorm => x.iter().map(|v| v * v).sum(),
        }
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (i, g) in out.iter_mut().enumerate() {
            *g = match *self {
                Self::Constant { .. } => 0.0,
                Self::Coordinate { index } => (i == index) as u8 as f64,
                Self::SquaredNorm => 2.0 * x[i],
            };
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Self::SquaredNorm = self {
            for i in 0..d {
                out[idx(d, i, i)] = 2.0;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheck {
    pub empirical: f64,
    pub analytic: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    pub aborted: usize,
}

/// `Δ_M^t f(x) = g^{ij}(∂ᵢ∂ⱼf − Γᵏᵢⱼ ∂ₖf)`.
pub fn laplace_beltrami(fam: &MetricFamily, f: &dyn TestFunction, t: f64, x: &[f64]) -> Result<f64> {
    fam.check_point(x)?;
    let d = fam.dim();
    let mut geo = LocalGeometry::new(d);
    geo.update(fam, t, x, Needs::CHRISTOFFEL)?;
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    f.gradient(x, &mut grad);
    f.hessian(x, &mut hess);
    let ginv = geo.inverse();
    let gamma = geo.gamma();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut c = hess[idx(d, i, j)];
            for k in 0..d {
                c -= gamma[k * d * d + i * d + j] * grad[k];
            }
            s += ginv[idx(d, i, j)] * c;
        }
    }
    Ok(s)
}

/// Compares `(E f(X_{t0+h}) − f(x0))/h` with `(ε/2) Δ_M^{t0} f(x0)` for the
/// process started at `x0` at time `t0` from the canonical frame.
#[allow(clippy::too_many_arguments)]
pub fn generator_check(
    fam: &MetricFamily,
    f: &dyn TestFunction,
    x0: &[f64],
    t0: f64,
    epsilon: f64,
    h: f64,
    n_samples: usize,
    seed: u64,
    substeps: usize,
) -> Result<GeneratorCheck> {
    if !(h > 0.0) || n_samples < 2 || substeps == 0 {
        return Err(Error::InvalidInput("generator check needs h > 0, n_samples >= 2, substeps >= 1".into()));
    }
    NoiseConfig::new(seed, 0, substeps, epsilon).validate()?;
    let u0 = Frame::canonical(fam, t0, x0)?;
    let analytic = 0.5 * epsilon * laplace_beltrami(fam, f, t0, x0)?;
    let f0 = f.value(x0);
    let results: Vec<Option<f64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|id| {
            let mut stream = NoiseStream::new(seed, id);
            let mut last = None;
            let outcome = integrate_frame_sde(fam, x0, u0.basis.as_slice(), (t0, t0 + h), substeps, epsilon, &mut stream, |k, _, x, _| {
                if k == substeps {
                    last = Some(f.value(x) - f0);
                }
                ControlFlow::Continue(())
            });
            match outcome {
                Outcome::Completed => last,
                _ => None,
            }
        })
        .collect();
    let values: Vec<f64> = results.iter().flatten().copied().collect();
    let aborted = n_samples - values.len();
    let (mean, var) = mean_variance(&values);
    Ok(GeneratorCheck {
        empirical: mean / h,
        analytic,
        standard_error: (var / values.len() as f64).sqrt() / h,
        n_samples,
        aborted,
    })
}

/// Runs `f` on the indices `0..n` in parallel, one fixed-size chunk at a
/// time, and hands the results to `consume` in index order.
pub(crate) fn for_each_chunked<T: Send>(n: usize, f: impl Fn(u64) -> T + Sync, mut consume: impl FnMut(T)) {
    for lo in (0..n).step_by(REDUCTION_CHUNK) {
        let hi = (lo + REDUCTION_CHUNK).min(n);
        let batch: Vec<T> = (lo as u64..hi as u64).into_par_iter().map(&f).collect();
        batch.into_iter().for_each(&mut consume);
    }
}

/// Mean and unbiased variance, accumulated chunk by chunk in index order.
pub(crate) fn mean_variance(values: &[f64]) -> (f64, f64) {
    let mut acc = Moments::default();
    for chunk in values.chunks(REDUCTION_CHUNK) {
        let mut part = Moments::default();
        chunk.iter().for_each(|&v| part.push(v));
        acc.merge(&part);
    }
    (acc.mean, acc.variance())
}

/// Streaming mean/variance with Chan's pairwise merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        self.m2 / (self.count - 1) as f64
    }
}

/// Which simulator drives a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Simulator {
    #[default]
    FrameBundle,
    ScalarReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub epsilon: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub simulator: Simulator,
    /// Number of equally spaced time slices at which moments are reported.
    pub slices: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMoments {
    pub t: f64,
    pub count: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Aggregate of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub family: String,
    pub n: usize,
    pub aborted: usize,
    pub epsilon: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub simulator: Simulator,
    pub slices: Vec<SliceMoments>,
    pub mean_frame_defect: Option<f64>,
}

impl BatchSummary {
    /// Per-coordinate variance at the final time.
    pub fn final_variance(&self) -> &[f64] {
        &self.slices.last().expect("at least one slice").variance
    }
}

fn slice_steps(n_steps: usize, slices: usize) -> Vec<usize> {
    let slices = slices.clamp(1, n_steps);
    let mut steps: Vec<usize> = (1..=slices).map(|j| (j * n_steps + slices / 2) / slices).collect();
    steps.dedup();
    steps
}

/// Runs `n_samples` independent trajectories (stream id = sample index) and
/// reduces per-slice moments. Aborted trajectories are counted and excluded
/// from the moments. Output is independent of the rayon worker count.
pub fn simulate_batch(fam: &MetricFamily, u0: &Frame, cfg: &BatchConfig) -> Result<BatchSummary> {
    let noise = NoiseConfig::new(cfg.seed, 0, cfg.n_steps, cfg.epsilon);
    noise.validate()?;
    if cfg.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    check_start_frame(fam, u0, 0.0)?;
    let d = fam.dim();
    let steps = slice_steps(cfg.n_steps, cfg.slices);
    let psi = match cfg.simulator {
        Simulator::ScalarReference => {
            check_scalar_family(fam, &u0.base)?;
            Some(time_change(fam, &u0.base, cfg.n_steps))
        }
        Simulator::FrameBundle => None,
    };

    struct Trajectory {
        values: Vec<f64>,
        defect: Option<f64>,
    }
    let run_one = |id: u64| -> Option<Trajectory> {
        let noise = noise.with_stream(id);
        let mut values = Vec::with_capacity(steps.len() * d);
        if let Some(psi) = &psi {
            let sp = scalar_reference_with(psi, u0.base[0], &noise);
            values.extend(steps.iter().map(|&k| sp.points[k][0]));
            return Some(Trajectory { values, defect: None });
        }
        let mut stream = noise.stream();
        let mut next = 0;
        let mut final_frame = None;
        let outcome = integrate_frame_sde(fam, &u0.base, u0.basis.as_slice(), (0.0, 1.0), cfg.n_steps, cfg.epsilon, &mut stream, |k, _, x, e| {
            if next < steps.len() && k == steps[next] {
                values.extend_from_slice(x);
                next += 1;
            }
            if k == cfg.n_steps {
                final_frame = Some((x.to_vec(), e.to_vec()));
            }
            ControlFlow::Continue(())
        });
        if outcome != Outcome::Completed {
            return None;
        }
        let defect = final_frame.and_then(|(x, e)| {
            let frame = Frame { time: 1.0, base: ChartPoint(x), basis: DMatrix::from_vec(d, d, e) };
            orthonormality_defect(fam, &frame).ok()
        });
        Some(Trajectory { values, defect })
    };

    let mut slices_acc = vec![Moments::default(); steps.len() * d];
    let mut defect_acc = Moments::default();
    let mut aborted = 0;
    let mut part = vec![Moments::default(); steps.len() * d];
    let mut part_defect = Moments::default();
    let mut in_part = 0;
    for_each_chunked(cfg.n_samples, run_one, |traj| {
        match traj {
            Some(traj) => {
                for (m, v) in part.iter_mut().zip(&traj.values) {
                    m.push(*v);
                }
                if let Some(defect) = traj.defect {
                    part_defect.push(defect);
                }
            }
            None => aborted += 1,
        }
        in_part += 1;
        if in_part == REDUCTION_CHUNK {
            for (acc, p) in slices_acc.iter_mut().zip(part.iter_mut()) {
                acc.merge(p);
                *p = Moments::default();
            }
            defect_acc.merge(&part_defect);
            part_defect = Moments::default();
            in_part = 0;
        }
    });
    for (acc, p) in slices_acc.iter_mut().zip(&part) {
        acc.merge(p);
    }
    defect_acc.merge(&part_defect);

    let slices = steps
        .iter()
        .enumerate()
        .map(|(s, &k)| {
            let ms = &slices_acc[s * d..(s + 1) * d];
            SliceMoments {
                t: k as f64 / cfg.n_steps as f64,
                count: ms[0].count,
                mean: ms.iter().map(|m| m.mean).collect(),
                variance: ms.iter().map(|m| m.variance()).collect(),
            }
        })
        .collect();
    Ok(BatchSummary {
        family: fam.id().to_string(),
        n: cfg.n_samples,
        aborted,
        epsilon: cfg.epsilon,
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        simulator: cfg.simulator,
        slices,
        mean_frame_defect: (defect_acc.count > 0).then_some(defect_acc.mean),
    })
}
