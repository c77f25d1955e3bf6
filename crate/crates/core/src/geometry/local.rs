//! Reusable scratch buffers holding the geometry at one `(t, x)`.

use super::MetricFamily;
use crate::error::{Error, Result};
use crate::linalg::{self, idx};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Needs(u8);

impl Needs {
    pub const CHRISTOFFEL: Needs = Needs(1);
    pub const TIME_DERIVATIVE: Needs = Needs(2);
    pub const ALL: Needs = Needs(3);

    fn has(self, other: Needs) -> bool {
        self.0 & other.0 == other.0
    }
}

impl std::ops::BitOr for Needs {
    type Output = Needs;
    fn bitor(self, rhs: Needs) -> Needs {
        Needs(self.0 | rhs.0)
    }
}

/// Metric, inverse, `∂ₜg` and Christoffel symbols at a single point, kept
/// in preallocated buffers so the integrators never allocate per step.
#[derive(Debug, Clone)]
pub(crate) struct LocalGeometry {
    d: usize,
    g: Vec<f64>,
    chol: Vec<f64>,
    ginv: Vec<f64>,
    dt: Vec<f64>,
    dx: Vec<f64>,
    first_kind: Vec<f64>,
    gamma: Vec<f64>,
}

impl LocalGeometry {
    pub fn new(d: usize) -> Self {
        Self {
            d,
            g: vec![0.0; d * d],
            chol: vec![0.0; d * d],
            ginv: vec![0.0; d * d],
            dt: vec![0.0; d * d],
            dx: vec![0.0; d * d * d],
            first_kind: vec![0.0; d * d * d],
            gamma: vec![0.0; d * d * d],
        }
    }

    /// Fills the buffers for `(t, x)`. The caller is responsible for the
    /// chart-domain check.
    pub fn update(&mut self, fam: &MetricFamily, t: f64, x: &[f64], needs: Needs) -> Result<()> {
        let d = self.d;
        if needs == Needs::TIME_DERIVATIVE {
            // the vertical drift needs neither the inverse nor the symbols
            fam.fill_metric_dt(t, x, &mut self.dt);
            return Ok(());
        }
        fam.fill_metric(t, x, &mut self.g);
        self.chol.copy_from_slice(&self.g);
        if !linalg::cholesky_in_place(&mut self.chol, d) {
            return Err(Error::SingularMetric { t, point: x.to_vec() });
        }
        linalg::cholesky_inverse(&self.chol, d, &mut self.ginv);
        if needs.has(Needs::TIME_DERIVATIVE) {
            fam.fill_metric_dt(t, x, &mut self.dt);
        }
        if needs.has(Needs::CHRISTOFFEL) {
            fam.fill_metric_dx(t, x, &mut self.dx);
            self.compute_christoffel();
        }
        Ok(())
    }

    fn compute_christoffel(&mut self) {
        let d = self.d;
        let dd = d * d;
        let dg = |k: usize, i: usize, j: usize| self.dx[k * dd + idx(d, i, j)];
        // first kind: Γ_{m,ij} = ½(∂ᵢg_{mj} + ∂ⱼg_{mi} − ∂ₘg_{ij}), symmetric in (i, j)
        for m in 0..d {
            for i in 0..d {
                for j in i..d {
                    let v = 0.5 * (dg(i, m, j) + dg(j, m, i) - dg(m, i, j));
                    self.first_kind[m * dd + i * d + j] = v;
                    self.first_kind[m * dd + j * d + i] = v;
                }
            }
        }
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let mut s = 0.0;
                    for m in 0..d {
                        s += self.ginv[idx(d, k, m)] * self.first_kind[m * dd + i * d + j];
                    }
                    self.gamma[k * dd + i * d + j] = s;
                    self.gamma[k * dd + j * d + i] = s;
                }
            }
        }
    }

    pub fn inverse(&self) -> &[f64] {
        &self.ginv
    }

    pub fn metric_dt(&self) -> &[f64] {
        &self.dt
    }

    /// Full `Γᵏᵢⱼ` at `[k*d*d + i*d + j]`.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `outᵏ = Γᵏⱼₗ vʲ zˡ`
    #[inline]
    pub fn contract_gamma(&self, v: &[f64], z: &[f64], out: &mut [f64]) {
        let d = self.d;
        for k in 0..d {
            let base = k * d * d;
            let mut s = 0.0;
            for j in 0..d {
                let row = base + j * d;
                let mut inner = 0.0;
                for l in 0..d {
                    inner += self.gamma[row + l] * z[l];
                }
                s += v[j] * inner;
            }
            out[k] = s;
        }
    }
}
