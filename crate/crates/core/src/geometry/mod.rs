//! Time-dependent metrics on a single coordinate chart.
//!
//! A [`MetricFamily`] wraps a [`MetricModel`] with time clamping, domain
//! checks, and the choice between closed-form and finite-difference
//! derivatives. Everything here is a pure function of its inputs.

mod families;
mod local;

use std::collections::BTreeMap;
use std::ops::Deref;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use families::{
    registered_families, ChartDomain, ConformalPlane, FamilyInfo, FamilySpec, FlatTorus,
    MetricModel, ParamInfo, Scalar1d, ShrinkSphere,
};
pub(crate) use local::{LocalGeometry, Needs};

/// Central-difference step in time.
pub const FD_STEP_T: f64 = 1e-4;
/// Central-difference step in space.
pub const FD_STEP_X: f64 = 1e-4;
/// Safety factor applied on top of the largest generalized eigenvalue.
pub const DOMINATION_SAFETY: f64 = 1.05;

/// How a derivative of the metric is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Coordinates of a point in the chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChartPoint(pub Vec<f64>);

impl ChartPoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Self {
        Self(coords.into())
    }

    pub fn origin(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for ChartPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub base: ChartPoint,
    pub components: DVector<f64>,
}

/// Christoffel symbols `Γᵏᵢⱼ`, stored once per unordered pair `{i, j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    packed: Vec<f64>,
}

impl Christoffel {
    fn pair_index(dim: usize, i: usize, j: usize) -> usize {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        lo * dim - lo * (lo + 1) / 2 + hi
    }

    pub(crate) fn from_full(dim: usize, full: &[f64]) -> Self {
        let pairs = dim * (dim + 1) / 2;
        let mut packed = vec![0.0; dim * pairs];
        for k in 0..dim {
            for i in 0..dim {
                for j in i..dim {
                    packed[k * pairs + Self::pair_index(dim, i, j)] = full[k * dim * dim + i + j * dim];
                }
            }
        }
        Self { dim, packed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Γᵏᵢⱼ`
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let pairs = self.dim * (self.dim + 1) / 2;
        self.packed[k * pairs + Self::pair_index(self.dim, i, j)]
    }

    /// `Γ(v, z)ᵏ = Γᵏⱼₗ vʲ zˡ`
    pub fn contract(&self, v: &[f64], z: &[f64]) -> DVector<f64> {
        let d = self.dim;
        DVector::from_fn(d, |k, _| {
            let mut s = 0.0;
            for j in 0..d {
                for l in 0..d {
                    s += self.get(k, j, l) * v[j] * z[l];
                }
            }
            s
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.packed.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A registered metric family together with its derivative evaluation modes.
#[derive(Debug, Clone)]
pub struct MetricFamily {
    model: Arc<dyn MetricModel>,
    spec: FamilySpec,
    dt_mode: EvalMode,
    dx_mode: EvalMode,
}

impl MetricFamily {
    /// Builds a family from the registry. Unknown ids are an error.
    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        let model = families::build_model(spec)?;
        let mut spec = spec.clone();
        spec.dim = Some(model.dim());
        Ok(Self {
            model: Arc::from(model),
            spec,
            dt_mode: EvalMode::Analytic,
            dx_mode: EvalMode::Analytic,
        })
    }

    /// Wraps a user-supplied model.
    pub fn from_model(model: Arc<dyn MetricModel>) -> Self {
        let spec = FamilySpec {
            family: model.id().to_string(),
            params: model.params(),
            dim: Some(model.dim()),
        };
        Self { model, spec, dt_mode: EvalMode::Analytic, dx_mode: EvalMode::Analytic }
    }

    pub fn scalar1d(a: f64, b: f64) -> Result<Self> {
        Self::from_spec(&FamilySpec::new("scalar1d", &[("a", a), ("b", b)]))
    }

    pub fn conformal_plane(kappa: f64) -> Result<Self> {
        Self::from_spec(&FamilySpec::new("conformal_plane", &[("kappa", kappa)]))
    }

    pub fn shrink_sphere(rate: f64) -> Result<Self> {
        Self::from_spec(&FamilySpec::new("shrink_sphere", &[("rate", rate)]))
    }

    pub fn flat_torus(a: [f64; 2], b: [f64; 2]) -> Result<Self> {
        Self::from_spec(&FamilySpec::new(
            "flat_torus",
            &[("a1", a[0]), ("b1", b[0]), ("a2", a[1]), ("b2", b[1])],
        ))
    }

    /// Euclidean metric on ℝᵈ.
    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::from_spec(&FamilySpec::new("conformal_plane", &[("kappa", 0.0)]).with_dim(dim))
    }

    pub fn with_eval_modes(mut self, dt: EvalMode, dx: EvalMode) -> Self {
        self.dt_mode = dt;
        self.dx_mode = dx;
        self
    }

    pub fn id(&self) -> &str {
        self.model.id()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        self.model.params()
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn domain(&self) -> &ChartDomain {
        self.model.domain()
    }

    pub fn is_static(&self) -> bool {
        self.model.is_static()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.model.domain().contains(x)
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !self.model.domain().contains(x) {
            return Err(Error::OutOfChart { family: self.id().to_string(), point: x.to_vec() });
        }
        Ok(())
    }

    // Raw fills: no domain checks, column-major output.

    pub(crate) fn fill_metric(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.model.metric(t.clamp(0.0, 1.0), x, out);
    }

    pub(crate) fn fill_metric_dt(&self, t: f64, x: &[f64], out: &mut [f64]) {
        if !(0.0..=1.0).contains(&t) {
            // g is constant in time outside [0, 1]
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        if self.dt_mode == EvalMode::Analytic && self.model.metric_dt(t, x, out) {
            return;
        }
        let n = out.len();
        let h = FD_STEP_T;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        if t - h < 0.0 {
            let mut c = vec![0.0; n];
            self.model.metric(t, x, &mut a);
            self.model.metric(t + h, x, &mut b);
            self.model.metric(t + 2.0 * h, x, &mut c);
            for i in 0..n {
                out[i] = (-3.0 * a[i] + 4.0 * b[i] - c[i]) / (2.0 * h);
            }
        } else if t + h > 1.0 {
            let mut c = vec![0.0; n];
            self.model.metric(t, x, &mut a);
            self.model.metric(t - h, x, &mut b);
            self.model.metric(t - 2.0 * h, x, &mut c);
            for i in 0..n {
                out[i] = (3.0 * a[i] - 4.0 * b[i] + c[i]) / (2.0 * h);
            }
        } else {
            self.model.metric(t + h, x, &mut a);
            self.model.metric(t - h, x, &mut b);
            for i in 0..n {
                out[i] = (a[i] - b[i]) / (2.0 * h);
            }
        }
    }

    pub(crate) fn fill_metric_dx(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let t = t.clamp(0.0, 1.0);
        if self.dx_mode == EvalMode::Analytic && self.model.metric_dx(t, x, out) {
            return;
        }
        let d = self.dim();
        let dd = d * d;
        let mut xp = x.to_vec();
        let mut a = vec![0.0; dd];
        let mut b = vec![0.0; dd];
        for k in 0..d {
            xp[k] = x[k] + FD_STEP_X;
            self.model.metric(t, &xp, &mut a);
            xp[k] = x[k] - FD_STEP_X;
            self.model.metric(t, &xp, &mut b);
            xp[k] = x[k];
            for i in 0..dd {
                out[k * dd + i] = (a[i] - b[i]) / (2.0 * FD_STEP_X);
            }
        }
    }

    /// `g(t, x)`; times outside `[0, 1]` are clamped.
    pub fn metric_eval(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        self.fill_metric(t, x, m.as_mut_slice());
        Ok(m)
    }

    /// `∂ₜg(t, x)`.
    pub fn metric_dt(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        self.fill_metric_dt(t, x, m.as_mut_slice());
        Ok(m)
    }

    /// Spatial derivatives `∂ₖg(t, x)`, one matrix per coordinate `k`.
    pub fn metric_dx(&self, t: f64, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        self.check_point(x)?;
        let d = self.dim();
        let mut raw = vec![0.0; d * d * d];
        self.fill_metric_dx(t, x, &mut raw);
        Ok(raw.chunks(d * d).map(|c| DMatrix::from_column_slice(d, d, c)).collect())
    }

    /// Levi-Civita connection of the frozen metric `g(t)` at `x`.
    pub fn christoffel(&self, t: f64, x: &[f64]) -> Result<Christoffel> {
        self.check_point(x)?;
        let mut local = LocalGeometry::new(self.dim());
        local.update(self, t, x, Needs::CHRISTOFFEL)?;
        Ok(Christoffel::from_full(self.dim(), local.gamma()))
    }

    /// Raises an index: returns `v = g(t,x)⁻¹ ω`.
    pub fn sharp(&self, t: f64, x: &[f64], covector: &[f64]) -> Result<TangentVector> {
        self.check_point(x)?;
        let d = self.dim();
        if covector.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: covector.len() });
        }
        let mut l = vec![0.0; d * d];
        self.fill_metric(t, x, &mut l);
        if !linalg::cholesky_in_place(&mut l, d) {
            return Err(Error::SingularMetric { t, point: x.to_vec() });
        }
        let mut v = covector.to_vec();
        linalg::cholesky_solve(&l, d, &mut v);
        Ok(TangentVector { base: ChartPoint::new(x), components: DVector::from_vec(v) })
    }

    /// Conformal scaling `c(x)` of `g(0, x)` dominating `g(t, x)` on a
    /// uniform grid of `grid` times in `[0, 1]`.
    pub fn dominating_metric(&self, grid: usize) -> DominatingMetric {
        let grid = grid.max(2);
        DominatingMetric {
            family: self.clone(),
            times: (0..grid).map(|k| k as f64 / (grid - 1) as f64).collect(),
            safety: DOMINATION_SAFETY,
        }
    }

    /// Midpoint-frozen quadratic surrogate for the `g(t)` distance,
    /// accurate to second order in `|x − y|`.
    pub fn chart_distance(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() != d || y.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len().min(y.len()) });
        }
        let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
        self.check_point(&mid)?;
        let mut g = vec![0.0; d * d];
        self.fill_metric(t, &mid, &mut g);
        let dx: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(linalg::bilinear(&g, &dx, &dx, d).max(0.0).sqrt())
    }
}

/// `ḡ = c(x)·g(0, x)` with `g(t) ≤ ḡ` for every sampled `t`.
#[derive(Debug, Clone)]
pub struct DominatingMetric {
    family: MetricFamily,
    times: Vec<f64>,
    safety: f64,
}

impl DominatingMetric {
    /// Largest generalized eigenvalue of `(g(t,x), g(0,x))` over the time grid.
    pub fn raw_scale(&self, x: &[f64]) -> Result<f64> {
        self.family.check_point(x)?;
        let d = self.family.dim();
        let mut g0 = DMatrix::zeros(d, d);
        self.family.fill_metric(0.0, x, g0.as_mut_slice());
        let chol = g0
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularMetric { t: 0.0, point: x.to_vec() })?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::SingularMetric { t: 0.0, point: x.to_vec() })?;
        let mut gt = DMatrix::zeros(d, d);
        let mut worst: f64 = 1.0;
        for &t in &self.times {
            self.family.fill_metric(t, x, gt.as_mut_slice());
            let reduced = &l_inv * &gt * l_inv.transpose();
            let reduced = (&reduced + reduced.transpose()) * 0.5;
            let eig = SymmetricEigen::new(reduced);
            worst = worst.max(eig.eigenvalues.max());
        }
        Ok(worst)
    }

    /// `c(x) ≥ 1`.
    pub fn scale(&self, x: &[f64]) -> Result<f64> {
        Ok(self.safety * self.raw_scale(x)?)
    }

    pub fn metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.family.metric_eval(0.0, x)? * self.scale(x)?)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_families() -> Vec<MetricFamily> {
        vec![
            MetricFamily::scalar1d(1.0, 1.0).unwrap(),
            MetricFamily::conformal_plane(-1.0).unwrap(),
            MetricFamily::shrink_sphere(0.5).unwrap(),
            MetricFamily::flat_torus([1.0, 2.0], [0.5, -0.5]).unwrap(),
        ]
    }

    #[test]
    fn metric_eval_examples() {
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        assert_eq!(s.metric_eval(0.5, &[0.0]).unwrap()[(0, 0)], 1.5);
        let c = MetricFamily::conformal_plane(-1.0).unwrap();
        assert_eq!(c.metric_eval(0.0, &[3.0, -2.0]).unwrap(), DMatrix::identity(2, 2));
        let sph = MetricFamily::shrink_sphere(0.5).unwrap();
        assert_eq!(sph.metric_eval(0.0, &[0.0, 0.0]).unwrap(), DMatrix::identity(2, 2) * 4.0);
    }

    #[test]
    fn time_is_clamped() {
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        assert_eq!(s.metric_eval(-3.0, &[0.0]).unwrap()[(0, 0)], 1.0);
        assert_eq!(s.metric_eval(7.0, &[0.0]).unwrap()[(0, 0)], 2.0);
        assert_eq!(s.metric_dt(-0.5, &[0.0]).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn out_of_chart_is_reported() {
        let sph = MetricFamily::shrink_sphere(0.5).unwrap();
        assert!(matches!(sph.metric_eval(0.0, &[10.0, 0.0]), Err(Error::OutOfChart { .. })));
        assert!(matches!(sph.chart_distance(0.0, &[9.5, 0.0], &[11.0, 0.0]), Err(Error::OutOfChart { .. })));
    }

    #[test]
    fn unknown_family_rejected() {
        let err = MetricFamily::from_spec(&FamilySpec::new("hyperbolic", &[])).unwrap_err();
        assert_eq!(err, Error::UnknownFamily("hyperbolic".into()));
        assert!(MetricFamily::shrink_sphere(1.0).is_err());
        assert!(MetricFamily::scalar1d(1.0, -1.0).is_err());
    }

    #[test]
    fn metric_dt_examples() {
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        assert_eq!(s.metric_dt(0.3, &[2.0]).unwrap()[(0, 0)], 1.0);
        let stat = MetricFamily::flat_torus([1.0, 3.0], [0.0, 0.0]).unwrap();
        assert_eq!(stat.metric_dt(0.4, &[1.0, 1.0]).unwrap(), DMatrix::zeros(2, 2));

        // central finite difference of metric_eval as the oracle
        let sph = MetricFamily::shrink_sphere(0.5).unwrap();
        let x = [1.0, 0.0];
        let h = 1e-4;
        let fd = (sph.metric_eval(0.25 + h, &x).unwrap() - sph.metric_eval(0.25 - h, &x).unwrap()) / (2.0 * h);
        let an = sph.metric_dt(0.25, &x).unwrap();
        assert!((fd - an).abs().max() < 1e-8);
    }

    #[test]
    fn finite_difference_mode_agrees_with_analytic() {
        for fam in all_families() {
            let fd = fam.clone().with_eval_modes(EvalMode::FiniteDifference, EvalMode::FiniteDifference);
            let d = fam.dim();
            for &t in &[0.0, 0.3, 0.99995, 1.0] {
                let x: Vec<f64> = (0..d).map(|i| 0.2 + 0.3 * i as f64).collect();
                let a = fam.metric_dt(t, &x).unwrap();
                let b = fd.metric_dt(t, &x).unwrap();
                let scale = a.abs().max().max(1.0);
                assert!((a - b).abs().max() <= 10.0 * FD_STEP_T * FD_STEP_T * scale + 1e-9);
                let ca = fam.christoffel(t, &x).unwrap();
                let cb = fd.christoffel(t, &x).unwrap();
                for k in 0..d {
                    for i in 0..d {
                        for j in 0..d {
                            assert!((ca.get(k, i, j) - cb.get(k, i, j)).abs() < 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn christoffel_examples() {
        let torus = MetricFamily::flat_torus([1.0, 2.0], [0.5, 0.5]).unwrap();
        assert_eq!(torus.christoffel(0.5, &[0.3, 0.1]).unwrap().max_abs(), 0.0);
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        assert_eq!(s.christoffel(0.5, &[0.3]).unwrap().get(0, 0, 0), 0.0);
    }

    /// Brute force: Γ from numerically differentiated metric_eval, inverted by nalgebra.
    fn brute_christoffel(fam: &MetricFamily, t: f64, x: &[f64]) -> Vec<f64> {
        let d = fam.dim();
        let h = 1e-5;
        let mut dg = Vec::new();
        for k in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            dg.push((fam.metric_eval(t, &xp).unwrap() - fam.metric_eval(t, &xm).unwrap()) / (2.0 * h));
        }
        let ginv = fam.metric_eval(t, x).unwrap().try_inverse().unwrap();
        let mut out = vec![0.0; d * d * d];
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for m in 0..d {
                        s += 0.5 * ginv[(k, m)] * (dg[i][(m, j)] + dg[j][(m, i)] - dg[m][(i, j)]);
                    }
                    out[k * d * d + i * d + j] = s;
                }
            }
        }
        out
    }

    #[test]
    fn christoffel_matches_brute_force_on_sphere() {
        let sph = MetricFamily::shrink_sphere(0.5).unwrap();
        for (t, x) in [(0.0, [1.0, 0.0]), (0.7, [0.3, -0.8]), (0.2, [-2.0, 1.5])] {
            let brute = brute_christoffel(&sph, t, &x);
            let got = sph.christoffel(t, &x).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((got.get(k, i, j) - brute[k * 4 + i * 2 + j]).abs() < 1e-6);
                        assert_eq!(got.get(k, i, j), got.get(k, j, i));
                    }
                }
            }
        }
    }

    #[test]
    fn sharp_examples() {
        let flat = MetricFamily::euclidean(2).unwrap();
        let v = flat.sharp(0.2, &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(v.components.as_slice(), &[1.0, 2.0]);
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        assert_relative_eq!(s.sharp(1.0, &[0.0], &[3.0]).unwrap().components[0], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn sharp_pairing_identity() {
        let sph = MetricFamily::shrink_sphere(0.5).unwrap();
        let x = [0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let omega = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let v = sph.sharp(0.1, &x, &omega).unwrap();
            let g = sph.metric_eval(0.1, &x).unwrap();
            for (e, w) in omega.iter().enumerate() {
                let mut basis = DVector::zeros(2);
                basis[e] = 1.0;
                let pairing = (v.components.transpose() * &g * &basis)[(0, 0)];
                assert!((pairing - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominating_metric_examples() {
        let stat = MetricFamily::euclidean(2).unwrap().dominating_metric(21);
        assert_relative_eq!(stat.scale(&[0.4, 1.0]).unwrap(), 1.05, epsilon = 1e-14);
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap().dominating_metric(21);
        for x in [-3.0, 0.0, 5.0] {
            assert_relative_eq!(s.scale(&[x]).unwrap(), 2.1, epsilon = 1e-12);
        }
        let sph = MetricFamily::shrink_sphere(0.5).unwrap().dominating_metric(21);
        assert_relative_eq!(sph.scale(&[1.0, -2.0]).unwrap(), 1.05, epsilon = 1e-12);
    }

    #[test]
    fn dominating_metric_bounds_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for fam in all_families() {
            let dom = fam.dominating_metric(101);
            let d = fam.dim();
            for _ in 0..1000 {
                let t: f64 = rng.gen();
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
                let gt = fam.metric_eval(t, &x).unwrap();
                let g0 = fam.metric_eval(0.0, &x).unwrap();
                let lhs = (v.transpose() * gt * &v)[(0, 0)];
                let rhs = dom.scale(&x).unwrap() * (v.transpose() * g0 * &v)[(0, 0)];
                assert!(lhs <= rhs, "{} at t={t}", fam.id());
            }
        }
    }

    #[test]
    fn chart_distance_examples() {
        let flat = MetricFamily::euclidean(2).unwrap();
        assert_eq!(flat.chart_distance(0.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(flat.chart_distance(0.0, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let s = MetricFamily::scalar1d(1.0, 1.0).unwrap();
        assert_relative_eq!(s.chart_distance(1.0, &[0.0], &[2.0]).unwrap(), 2.0 * 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn registered_metrics_are_spd_on_lattice() {
        for fam in all_families() {
            let d = fam.dim();
            for ti in 0..21 {
                let t = ti as f64 / 20.0;
                for a in -4..=4 {
                    for b in -4..=4 {
                        let x: Vec<f64> = [a as f64 * 0.5, b as f64 * 0.5][..d].to_vec();
                        let g = fam.metric_eval(t, &x).unwrap();
                        assert_eq!(g, g.transpose());
                        assert!(g.clone().cholesky().is_some());
                        let dt = fam.metric_dt(t, &x).unwrap();
                        assert_eq!(dt, dt.transpose());
                    }
                }
            }
        }
    }
}
