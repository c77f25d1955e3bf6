//! Built-in metric families and the registry that builds them from specs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open subset of ℝᵈ on which a chart is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChartDomain {
    Whole,
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ChartDomain {
    pub fn contains(&self, x: &[f64]) -> bool {
        if !x.iter().all(|v| v.is_finite()) {
            return false;
        }
        match self {
            ChartDomain::Whole => true,
            ChartDomain::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                r2 < radius * radius
            }
            ChartDomain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (lo, hi))| *v > *lo && *v < *hi),
        }
    }
}

/// A time-dependent metric `g(t, x)` on a single coordinate chart.
///
/// Implementations write column-major `d×d` matrices. Derivative hooks
/// return `false` when no closed form exists; callers then fall back to
/// finite differences. Times passed in are already clamped to `[0, 1]`.
pub trait MetricModel: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn params(&self) -> BTreeMap<String, f64>;
    fn domain(&self) -> &ChartDomain;

    fn metric(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `∂ₜg(t, x)`.
    fn metric_dt(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Spatial derivatives: `out[k*d*d + i + j*d] = ∂ₖ g_ij`.
    fn metric_dx(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// True when `g` does not depend on time.
    fn is_static(&self) -> bool {
        false
    }
}

fn fill_scaled_identity(out: &mut [f64], d: usize, s: f64) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        out[i + i * d] = s;
    }
}

/// `g(t) = a + b·t` on ℝ.
#[derive(Debug, Clone)]
pub struct Scalar1d {
    pub a: f64,
    pub b: f64,
    domain: ChartDomain,
}

impl Scalar1d {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a + b > 0.0) {
            return Err(Error::InvalidParams {
                family: "scalar1d".into(),
                reason: format!("need a > 0 and a + b > 0, got a={a}, b={b}"),
            });
        }
        Ok(Self { a, b, domain: ChartDomain::Whole })
    }
}

impl MetricModel for Scalar1d {
    fn id(&self) -> &str {
        "scalar1d"
    }
    fn dim(&self) -> usize {
        1
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("a".into(), self.a), ("b".into(), self.b)])
    }
    fn domain(&self) -> &ChartDomain {
        &self.domain
    }
    fn metric(&self, t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.a + self.b * t;
    }
    fn metric_dt(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out[0] = self.b;
        true
    }
    fn metric_dx(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out[0] = 0.0;
        true
    }
    fn is_static(&self) -> bool {
        self.b == 0.0
    }
}

/// `g(t) = e^{2κt} δ` on ℝᵈ.
#[derive(Debug, Clone)]
pub struct ConformalPlane {
    pub kappa: f64,
    dim: usize,
    domain: ChartDomain,
}

impl ConformalPlane {
    pub fn new(kappa: f64, dim: usize) -> Result<Self> {
        if dim == 0 || !kappa.is_finite() {
            return Err(Error::InvalidParams {
                family: "conformal_plane".into(),
                reason: format!("need dim >= 1 and finite kappa, got dim={dim}, kappa={kappa}"),
            });
        }
        Ok(Self { kappa, dim, domain: ChartDomain::Whole })
    }
}

impl MetricModel for ConformalPlane {
    fn id(&self) -> &str {
        "conformal_plane"
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("kappa".into(), self.kappa)])
    }
    fn domain(&self) -> &ChartDomain {
        &self.domain
    }
    fn metric(&self, t: f64, _x: &[f64], out: &mut [f64]) {
        fill_scaled_identity(out, self.dim, (2.0 * self.kappa * t).exp());
    }
    fn metric_dt(&self, t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        fill_scaled_identity(out, self.dim, 2.0 * self.kappa * (2.0 * self.kappa * t).exp());
        true
    }
    fn metric_dx(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        true
    }
    fn is_static(&self) -> bool {
        self.kappa == 0.0
    }
}

/// Round unit sphere in the stereographic chart, scaled by `1 − rate·t`:
/// `g(t, x) = (1 − rate·t) · 4/(1+|x|²)² δ`.
#[derive(Debug, Clone)]
pub struct ShrinkSphere {
    pub rate: f64,
    pub r_max: f64,
    domain: ChartDomain,
}

impl ShrinkSphere {
    pub fn new(rate: f64, r_max: f64) -> Result<Self> {
        if !(rate < 1.0) || !rate.is_finite() || !(r_max > 0.0) {
            return Err(Error::InvalidParams {
                family: "shrink_sphere".into(),
                reason: format!("need rate < 1 and r_max > 0, got rate={rate}, r_max={r_max}"),
            });
        }
        Ok(Self {
            rate,
            r_max,
            domain: ChartDomain::Ball { center: vec![0.0, 0.0], radius: r_max },
        })
    }

    fn conformal_factor(x: &[f64]) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        4.0 / ((1.0 + r2) * (1.0 + r2))
    }
}

impl MetricModel for ShrinkSphere {
    fn id(&self) -> &str {
        "shrink_sphere"
    }
    fn dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("rate".into(), self.rate), ("r_max".into(), self.r_max)])
    }
    fn domain(&self) -> &ChartDomain {
        &self.domain
    }
    fn metric(&self, t: f64, x: &[f64], out: &mut [f64]) {
        fill_scaled_identity(out, 2, (1.0 - self.rate * t) * Self::conformal_factor(x));
    }
    fn metric_dt(&self, _t: f64, x: &[f64], out: &mut [f64]) -> bool {
        fill_scaled_identity(out, 2, -self.rate * Self::conformal_factor(x));
        true
    }
    fn metric_dx(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        // ∂ₖ [4(1+r²)⁻²] = −16 xₖ (1+r²)⁻³
        let r2 = x[0] * x[0] + x[1] * x[1];
        let s = (1.0 - self.rate * t) * -16.0 / ((1.0 + r2) * (1.0 + r2) * (1.0 + r2));
        for k in 0..2 {
            fill_scaled_identity(&mut out[k * 4..(k + 1) * 4], 2, s * x[k]);
        }
        true
    }
    fn is_static(&self) -> bool {
        self.rate == 0.0
    }
}

/// Flat torus with axis coefficients `aᵢ + bᵢ t`, represented on its
/// universal cover ℝ² (coordinates are not wrapped).
#[derive(Debug, Clone)]
pub struct FlatTorus {
    pub a: [f64; 2],
    pub b: [f64; 2],
    domain: ChartDomain,
}

impl FlatTorus {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Result<Self> {
        for i in 0..2 {
            if !(a[i] > 0.0 && a[i] + b[i] > 0.0) {
                return Err(Error::InvalidParams {
                    family: "flat_torus".into(),
                    reason: format!("axis {} coefficient must stay positive on [0,1]", i + 1),
                });
            }
        }
        Ok(Self { a, b, domain: ChartDomain::Whole })
    }
}

impl MetricModel for FlatTorus {
    fn id(&self) -> &str {
        "flat_torus"
    }
    fn dim(&self) -> usize {
        2
    }
    fn params(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("a1".into(), self.a[0]),
            ("b1".into(), self.b[0]),
            ("a2".into(), self.a[1]),
            ("b2".into(), self.b[1]),
        ])
    }
    fn domain(&self) -> &ChartDomain {
        &self.domain
    }
    fn metric(&self, t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.a[0] + self.b[0] * t;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = self.a[1] + self.b[1] * t;
    }
    fn metric_dt(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out[0] = self.b[0];
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = self.b[1];
        true
    }
    fn metric_dx(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        true
    }
    fn is_static(&self) -> bool {
        self.b == [0.0, 0.0]
    }
}

/// Parameter description published by `list-families`.
#[derive(Debug, Clone, Serialize)]
pub struct ParamInfo {
    pub name: &'static str,
    pub default: f64,
    pub constraint: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyInfo {
    pub family: &'static str,
    pub dim: &'static str,
    pub description: &'static str,
    pub params: Vec<ParamInfo>,
}

pub fn registered_families() -> Vec<FamilyInfo> {
    vec![
        FamilyInfo {
            family: "scalar1d",
            dim: "1",
            description: "g(t) = a + b t on the real line",
            params: vec![
                ParamInfo { name: "a", default: 1.0, constraint: "a > 0" },
                ParamInfo { name: "b", default: 0.0, constraint: "a + b > 0" },
            ],
        },
        FamilyInfo {
            family: "conformal_plane",
            dim: ">= 1 (default 2)",
            description: "g(t) = exp(2 kappa t) times the Euclidean metric",
            params: vec![ParamInfo { name: "kappa", default: 0.0, constraint: "finite" }],
        },
        FamilyInfo {
            family: "shrink_sphere",
            dim: "2",
            description: "(1 - rate t) times the round unit-sphere metric in stereographic coordinates",
            params: vec![
                ParamInfo { name: "rate", default: 0.0, constraint: "rate < 1" },
                ParamInfo { name: "r_max", default: 10.0, constraint: "chart radius, r_max > 0" },
            ],
        },
        FamilyInfo {
            family: "flat_torus",
            dim: "2",
            description: "diag(a1 + b1 t, a2 + b2 t) on the covering plane",
            params: vec![
                ParamInfo { name: "a1", default: 1.0, constraint: "a1 > 0" },
                ParamInfo { name: "b1", default: 0.0, constraint: "a1 + b1 > 0" },
                ParamInfo { name: "a2", default: 1.0, constraint: "a2 > 0" },
                ParamInfo { name: "b2", default: 0.0, constraint: "a2 + b2 > 0" },
            ],
        },
    ]
}

/// `{"family": id, "params": {...}, "dim": d}` as read from configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl FamilySpec {
    pub fn new(family: &str, params: &[(&str, f64)]) -> Self {
        Self {
            family: family.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            dim: None,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }
}

pub(crate) fn build_model(spec: &FamilySpec) -> Result<Box<dyn MetricModel>> {
    let info = registered_families()
        .into_iter()
        .find(|f| f.family == spec.family)
        .ok_or_else(|| Error::UnknownFamily(spec.family.clone()))?;
    for key in spec.params.keys() {
        if !info.params.iter().any(|p| p.name == key) {
            return Err(Error::InvalidParams {
                family: spec.family.clone(),
                reason: format!("unknown parameter `{key}`"),
            });
        }
    }
    let p = |name: &str| -> f64 {
        spec.params.get(name).copied().unwrap_or_else(|| {
            info.params.iter().find(|p| p.name == name).map(|p| p.default).unwrap_or(0.0)
        })
    };
    let fixed_dim = |d: usize| -> Result<()> {
        match spec.dim {
            Some(got) if got != d => Err(Error::InvalidParams {
                family: spec.family.clone(),
                reason: format!("family has dimension {d}, config says {got}"),
            }),
            _ => Ok(()),
        }
    };
    let model: Box<dyn MetricModel> = match spec.family.as_str() {
        "scalar1d" => {
            fixed_dim(1)?;
            Box::new(Scalar1d::new(p("a"), p("b"))?)
        }
        "conformal_plane" => Box::new(ConformalPlane::new(p("kappa"), spec.dim.unwrap_or(2))?),
        "shrink_sphere" => {
            fixed_dim(2)?;
            Box::new(ShrinkSphere::new(p("rate"), p("r_max"))?)
        }
        "flat_torus" => {
            fixed_dim(2)?;
            Box::new(FlatTorus::new([p("a1"), p("a2")], [p("b1"), p("b2")])?)
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    Ok(model)
}
