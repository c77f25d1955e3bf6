//! Monte Carlo checks of the small-noise large deviation behaviour: tube
//! probabilities along an ε-ladder, exit statistics, and the containment
//! function `Υ = log(1 + r̃²)`.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::action::{action_manifold, Action};
use crate::error::{Error, Result};
use crate::framebundle::{Frame, Path};
use crate::geometry::MetricFamily;
use crate::linalg;
use crate::rng::{NoiseConfig, NoiseStream};
use crate::sampler::{check_scalar_family, for_each_chunked, integrate_frame_sde, scalar_reference_with, time_change, Outcome, Simulator};

/// `ε ln p̂` values closer than this many joint standard errors count as tied
/// in the monotonicity checks.
pub const MONOTONE_SE: f64 = 2.0;

/// Constant in the uniform Hamiltonian bound `½|dΥ|² ≤ 8` for the
/// containment function.
pub const HAMILTONIAN_BOUND: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitQuantiles {
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub epsilon: f64,
    pub n_samples: usize,
    pub hits: usize,
    pub aborted: usize,
    pub p_hat: f64,
    pub standard_error: f64,
    /// `ε ln p̂`; `None` when there were no hits.
    pub log_scaled: Option<f64>,
    /// Delta-method standard error of `ε ln p̂`.
    pub log_scaled_se: Option<f64>,
    pub below_resolution: bool,
    /// Quantiles of the first grid time at which the event was decided
    /// (tube exit, ball exit or abort); `None` if no trajectory had one.
    pub exit_times: Option<ExitQuantiles>,
}

impl MCEstimate {
    fn new(epsilon: f64, n_samples: usize, hits: usize, aborted: usize, mut exit_times: Vec<f64>) -> Self {
        let n = n_samples as f64;
        let p = hits as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let below = hits == 0;
        let log_scaled = (!below).then(|| epsilon * p.ln());
        let log_scaled_se = (!below).then(|| epsilon * ((1.0 - p) / (n * p)).sqrt());
        exit_times.sort_by(f64::total_cmp);
        let q = |f: f64| {
            // nearest rank
            let k = ((f * exit_times.len() as f64).ceil() as usize).clamp(1, exit_times.len());
            exit_times[k - 1]
        };
        let exit_times = (!exit_times.is_empty()).then(|| ExitQuantiles { q10: q(0.1), q50: q(0.5), q90: q(0.9) });
        Self {
            epsilon,
            n_samples,
            hits,
            aborted,
            p_hat: p,
            standard_error: se,
            log_scaled,
            log_scaled_se,
            below_resolution: below,
            exit_times,
        }
    }
}

/// Allocation-free `chart_distance` against a fixed target.
struct DistanceProbe<'a> {
    fam: &'a MetricFamily,
    g: Vec<f64>,
    mid: Vec<f64>,
    diff: Vec<f64>,
}

impl<'a> DistanceProbe<'a> {
    fn new(fam: &'a MetricFamily) -> Self {
        let d = fam.dim();
        Self { fam, g: vec![0.0; d * d], mid: vec![0.0; d], diff: vec![0.0; d] }
    }

    /// Squared distance, or `None` when the midpoint leaves the chart.
    fn squared(&mut self, t: f64, x: &[f64], y: &[f64]) -> Option<f64> {
        for i in 0..x.len() {
            self.mid[i] = 0.5 * (x[i] + y[i]);
            self.diff[i] = x[i] - y[i];
        }
        if !self.fam.contains(&self.mid) {
            return None;
        }
        self.fam.fill_metric(t, &self.mid, &mut self.g);
        Some(linalg::bilinear(&self.g, &self.diff, &self.diff, x.len()).max(0.0))
    }
}

/// Per-trajectory verdict of a grid event.
struct Verdict {
    hit: bool,
    aborted: bool,
    decided_at: Option<f64>,
}

/// Runs the trajectories of one estimate. `inside(k, t, x)` returns `false`
/// when the trajectory leaves the event region; `hit_if_inside` says whether
/// staying inside all the way counts as a hit (tube) or a miss (exit).
fn run_event(
    fam: &MetricFamily,
    u0: &Frame,
    n_steps: usize,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    simulator: Simulator,
    hit_if_inside: bool,
    inside: &(dyn Fn(&mut DistanceProbe, usize, f64, &[f64]) -> bool + Sync),
) -> Result<MCEstimate> {
    NoiseConfig::new(seed, 0, n_steps, epsilon).validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    if simulator == Simulator::ScalarReference {
        check_scalar_family(fam, &u0.base)?;
    }
    let psi = (simulator == Simulator::ScalarReference).then(|| time_change(fam, &u0.base, n_steps));
    let h = 1.0 / n_steps as f64;
    let run = |id: u64| -> Verdict {
        let mut probe = DistanceProbe::new(fam);
        let noise = NoiseConfig::new(seed, id, n_steps, epsilon);
        if let Some(psi) = &psi {
            let sp = scalar_reference_with(psi, u0.base[0], &noise);
            for (k, p) in sp.points.iter().enumerate() {
                if !inside(&mut probe, k, k as f64 * h, p) {
                    return Verdict { hit: !hit_if_inside, aborted: false, decided_at: Some(k as f64 * h) };
                }
            }
            return Verdict { hit: hit_if_inside, aborted: false, decided_at: None };
        }
        let mut stream = NoiseStream::new(seed, id);
        let mut left = None;
        let outcome = integrate_frame_sde(fam, &u0.base, u0.basis.as_slice(), (0.0, 1.0), n_steps, epsilon, &mut stream, |k, t, x, _| {
            if inside(&mut probe, k, t, x) {
                ControlFlow::Continue(())
            } else {
                left = Some(t);
                ControlFlow::Break(())
            }
        });
        match outcome {
            Outcome::Completed => Verdict { hit: hit_if_inside, aborted: false, decided_at: None },
            Outcome::Stopped { .. } => Verdict { hit: !hit_if_inside, aborted: false, decided_at: left },
            // leaving the chart leaves every event region inside it
            Outcome::Aborted(a) => Verdict { hit: !hit_if_inside, aborted: true, decided_at: Some(a.time) },
        }
    };
    let (mut hits, mut aborted) = (0, 0);
    let mut times = Vec::new();
    for_each_chunked(n_samples, run, |v| {
        hits += v.hit as usize;
        aborted += v.aborted as usize;
        times.extend(v.decided_at);
    });
    Ok(MCEstimate::new(epsilon, n_samples, hits, aborted, times))
}

/// Fraction of `g(t)`-Brownian paths started at `γ(0)` that stay within
/// `chart_distance ≤ δ` of `γ` at every grid time. The sampling grid is the
/// grid of `γ`. Aborted samples count as misses. Sample `i` uses noise stream
/// `i` of `seed`, so estimates with equal seeds are coupled.
pub fn tube_probability(
    fam: &MetricFamily,
    path: &Path,
    delta: f64,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
    simulator: Simulator,
) -> Result<MCEstimate> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("tube radius must be positive, got {delta}")));
    }
    if path.dim() != fam.dim() {
        return Err(Error::DimensionMismatch { expected: fam.dim(), got: path.dim() });
    }
    path.points().iter().try_for_each(|p| fam.check_point(p))?;
    let u0 = Frame::canonical(fam, 0.0, path.start())?;
    let rows: Vec<&[f64]> = path.points().iter().map(|p| p.0.as_slice()).collect();
    let d2 = delta * delta;
    let inside = |probe: &mut DistanceProbe, k: usize, t: f64, x: &[f64]| probe.squared(t, x, rows[k]).is_some_and(|s| s <= d2);
    run_event(fam, &u0, path.n(), epsilon, n_samples, seed, simulator, true, &inside)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub intercept_se: f64,
}

/// Weighted least squares of `y` on `x` with weights `1/se²`.
pub fn weighted_fit(x: &[f64], y: &[f64], se: &[f64]) -> Option<LinearFit> {
    if x.len() < 2 {
        return None;
    }
    let w: Vec<f64> = se.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    if !(det.abs() > 0.0) {
        return None;
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    Some(LinearFit { slope, intercept, intercept_se: (sxx / det).sqrt() })
}

/// Whether consecutive values never move against a common direction by more
/// than [`MONOTONE_SE`] joint standard errors.
pub fn monotone_within(values: &[f64], se: &[f64]) -> bool {
    let step_ok = |sign: f64| {
        values.windows(2).zip(se.windows(2)).all(|(v, s)| sign * (v[1] - v[0]) >= -MONOTONE_SE * s[0].hypot(s[1]))
    };
    step_ok(1.0) || step_ok(-1.0)
}

fn strictly_decreasing(eps: &[f64]) -> Result<()> {
    if eps.is_empty() || eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("the ε list must be positive and strictly decreasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub family: String,
    pub delta: f64,
    pub action: Action,
    pub seed: u64,
    pub simulator: Simulator,
    pub estimates: Vec<MCEstimate>,
    /// Fit of `ε ln p̂` against `ε` over the resolved rungs.
    pub fit: Option<LinearFit>,
    /// `|intercept + action| / action`.
    pub intercept_gap: Option<f64>,
    pub monotone: bool,
    pub below_resolution: Vec<f64>,
}

/// Tube probabilities of `γ` across a decreasing ε-ladder with a common seed,
/// and the extrapolation of `ε ln p̂` to `ε = 0`.
pub fn ladder_report(
    fam: &MetricFamily,
    path: &Path,
    delta: f64,
    eps: &[f64],
    n_samples: usize,
    seed: u64,
    simulator: Simulator,
) -> Result<LadderReport> {
    strictly_decreasing(eps)?;
    let action = action_manifold(fam, path)?.value;
    let estimates =
        eps.iter().map(|&e| tube_probability(fam, path, delta, e, n_samples, seed, simulator)).collect::<Result<Vec<_>>>()?;
    let resolved: Vec<&MCEstimate> = estimates.iter().filter(|e| !e.below_resolution).collect();
    let xs: Vec<f64> = resolved.iter().map(|e| e.epsilon).collect();
    let ys: Vec<f64> = resolved.iter().map(|e| e.log_scaled.unwrap()).collect();
    let ses: Vec<f64> = resolved.iter().map(|e| e.log_scaled_se.unwrap()).collect();
    let fit = weighted_fit(&xs, &ys, &ses);
    let intercept_gap = match (fit, action) {
        (Some(f), Action::Finite(a)) if a > 0.0 => Some((f.intercept + a).abs() / a),
        _ => None,
    };
    Ok(LadderReport {
        family: fam.id().to_string(),
        delta,
        action,
        seed,
        simulator,
        monotone: monotone_within(&ys, &ses),
        below_resolution: estimates.iter().filter(|e| e.below_resolution).map(|e| e.epsilon).collect(),
        estimates,
        fit,
        intercept_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub family: String,
    pub radius: f64,
    pub n_steps: usize,
    pub seed: u64,
    /// Estimates of `P(exit before t = 1)`, one per ε.
    pub estimates: Vec<MCEstimate>,
    /// `ε ln p̂` decreases along the ladder within [`MONOTONE_SE`] joint SE.
    pub decreasing: bool,
}

/// Probability that the process started at `x₀` leaves the `chart_distance`
/// ball of radius `R` (distance measured with `g(0)`) before `t = 1`.
pub fn exit_statistics(
    fam: &MetricFamily,
    x0: &[f64],
    radius: f64,
    eps: &[f64],
    n_steps: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ExitReport> {
    strictly_decreasing(eps)?;
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
    }
    let u0 = Frame::canonical(fam, 0.0, x0)?;
    let r2 = radius * radius;
    let inside = |probe: &mut DistanceProbe, _: usize, _: f64, x: &[f64]| probe.squared(0.0, x, x0).is_some_and(|s| s <= r2);
    let estimates = eps
        .iter()
        .map(|&e| run_event(fam, &u0, n_steps, e, n_samples, seed, Simulator::FrameBundle, false, &inside))
        .collect::<Result<Vec<_>>>()?;
    let resolved: Vec<&MCEstimate> = estimates.iter().filter(|e| !e.below_resolution).collect();
    let decreasing = resolved.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        b.log_scaled.unwrap() - a.log_scaled.unwrap() <= MONOTONE_SE * a.log_scaled_se.unwrap().hypot(b.log_scaled_se.unwrap())
    });
    Ok(ExitReport { family: fam.id().to_string(), radius, n_steps, seed, estimates, decreasing })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainmentOptions {
    /// Half side length of the chart lattice centred at `x₀`.
    pub half_width: f64,
    /// Lattice points per axis.
    pub points: usize,
    /// Radius below which `r̄` is smoothed.
    pub smoothing: f64,
    /// Number of time samples in `[0, 1]` for the Hamiltonian sweep.
    pub times: usize,
}

impl Default for ContainmentOptions {
    fn default() -> Self {
        Self { half_width: 3.0, points: 61, smoothing: 0.25, times: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeValue {
    pub x: Vec<f64>,
    pub radius: f64,
    pub upsilon: f64,
    /// `sup_t ½|dΥ|²_{g(t)}` at this point.
    pub hamiltonian: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sublevel {
    pub level: f64,
    pub points: usize,
    /// Largest Euclidean chart distance from `x₀` within `{Υ ≤ level}`.
    pub radius: f64,
    /// No lattice boundary point lies in the set.
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentProfile {
    pub family: String,
    pub x0: Vec<f64>,
    pub options: ContainmentOptions,
    pub lattice: Vec<LatticeValue>,
    pub upsilon_at_x0: f64,
    pub sup_hamiltonian: f64,
    pub within_bound: bool,
    pub sublevels: Vec<Sublevel>,
    pub sublevels_monotone: bool,
}

/// `C²` even profile matching `s ↦ s` to second order at `s = 1`.
fn smooth_profile(s: f64) -> f64 {
    if s >= 1.0 {
        return s;
    }
    let s2 = s * s;
    s2 * (15.0 / 8.0 - s2 * (5.0 / 4.0 - 3.0 / 8.0 * s2))
}

const GAUSS_NODES: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// `Υ = log(1 + r̃²)` with `r̃` a smoothed `ḡ`-length of the straight chart
/// segment from `x₀`, where `ḡ = c(x) g(0, x)` dominates `g(t)` on `[0, 1]`.
pub struct Containment<'a> {
    fam: &'a MetricFamily,
    dominating: crate::geometry::DominatingMetric,
    x0: Vec<f64>,
    smoothing: f64,
}

impl<'a> Containment<'a> {
    pub fn new(fam: &'a MetricFamily, x0: &[f64], smoothing: f64) -> Result<Self> {
        fam.check_point(x0)?;
        if !(smoothing > 0.0) {
            return Err(Error::InvalidInput("smoothing width must be positive".into()));
        }
        Ok(Self { fam, dominating: fam.dominating_metric(21), x0: x0.to_vec(), smoothing })
    }

    /// `ḡ`-length of the chart segment `x₀ → x` (8-point Gauss–Legendre on
    /// two halves).
    pub fn segment_length(&self, x: &[f64]) -> Result<f64> {
        let d = self.x0.len();
        let v: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        if v.iter().all(|c| *c == 0.0) {
            return Ok(0.0);
        }
        let mut g = vec![0.0; d * d];
        let mut p = vec![0.0; d];
        let mut total = 0.0;
        for (lo, hi) in [(0.0, 0.5), (0.5, 1.0)] {
            for (node, weight) in GAUSS_NODES {
                let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * node;
                for i in 0..d {
                    p[i] = self.x0[i] + s * v[i];
                }
                self.fam.check_point(&p)?;
                self.fam.fill_metric(0.0, &p, &mut g);
                let c = self.dominating.raw_scale(&p)?;
                total += 0.5 * (hi - lo) * weight * (c * linalg::bilinear(&g, &v, &v, d)).sqrt();
            }
        }
        Ok(total)
    }

    pub fn radius(&self, x: &[f64]) -> Result<f64> {
        let w = self.smoothing;
        Ok(w * smooth_profile(self.segment_length(x)? / w))
    }

    pub fn upsilon(&self, x: &[f64]) -> Result<f64> {
        let r = self.radius(x)?;
        Ok((r * r).ln_1p())
    }

    /// Central-difference `dΥ`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = 1e-5;
        let mut p = x.to_vec();
        (0..x.len())
            .map(|i| {
                p[i] = x[i] + h;
                let up = self.upsilon(&p)?;
                p[i] = x[i] - h;
                let down = self.upsilon(&p)?;
                p[i] = x[i];
                Ok((up - down) / (2.0 * h))
            })
            .collect()
    }

    /// `ℋₜ(x, dΥ) = ½|dΥ(x)|²_{g(t)}`.
    pub fn hamiltonian(&self, t: f64, x: &[f64], du: &[f64]) -> Result<f64> {
        let g = self.fam.metric_eval(t, x)?;
        let chol = g.cholesky().ok_or_else(|| Error::SingularMetric { t, point: x.to_vec() })?;
        let z = chol.solve(&nalgebra::DVector::from_column_slice(du));
        Ok(0.5 * z.dot(&nalgebra::DVector::from_column_slice(du)))
    }
}

fn lattice_points(x0: &[f64], opts: &ContainmentOptions) -> Vec<(Vec<f64>, bool)> {
    let d = x0.len();
    let m = opts.points;
    let coord = |j: usize| -opts.half_width + 2.0 * opts.half_width * j as f64 / (m - 1) as f64;
    let total = m.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            let mut x = Vec::with_capacity(d);
            let mut edge = false;
            for i in 0..d {
                let j = flat % m;
                flat /= m;
                edge |= j == 0 || j == m - 1;
                x.push(x0[i] + coord(j));
            }
            (x, edge)
        })
        .collect()
}

/// Evaluates `Υ` and `sup_t ℋₜ(x, dΥ)` on a lattice around `x₀`, and the
/// sublevel sets of `Υ` at fractions of its minimum over the lattice edge.
/// Lattice points whose difference stencil leaves the chart are skipped.
pub fn containment_profile(fam: &MetricFamily, x0: &[f64], opts: &ContainmentOptions) -> Result<ContainmentProfile> {
    if opts.points < 3 || !(opts.half_width > 0.0) || opts.times < 2 {
        return Err(Error::InvalidInput("containment lattice needs ≥ 3 points per axis, positive width and ≥ 2 times".into()));
    }
    let c = Containment::new(fam, x0, opts.smoothing)?;
    let times: Vec<f64> = (0..opts.times).map(|k| k as f64 / (opts.times - 1) as f64).collect();
    let mut lattice = Vec::new();
    let mut edges = Vec::new();
    for (x, edge) in lattice_points(x0, opts) {
        let stencil_ok = (0..x.len()).all(|i| {
            let mut p = x.clone();
            p[i] += 2e-5;
            let up = fam.contains(&p);
            p[i] -= 4e-5;
            up && fam.contains(&p)
        });
        if !stencil_ok || !fam.contains(&x) {
            continue;
        }
        let (upsilon, du) = match (c.upsilon(&x), c.gradient(&x)) {
            (Ok(u), Ok(du)) => (u, du),
            // segment from x₀ leaves the chart
            (Err(Error::OutOfChart { .. }), _) | (_, Err(Error::OutOfChart { .. })) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let mut hamiltonian = 0.0f64;
        for &t in &times {
            hamiltonian = hamiltonian.max(c.hamiltonian(t, &x, &du)?);
        }
        let radius = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        edges.push(edge);
        lattice.push(LatticeValue { x, radius, upsilon, hamiltonian });
    }
    if lattice.is_empty() {
        return Err(Error::OutOfChart { family: fam.id().to_string(), point: x0.to_vec() });
    }
    let sup_hamiltonian = lattice.iter().map(|v| v.hamiltonian).fold(0.0, f64::max);
    let edge_min = lattice.iter().zip(&edges).filter(|(_, e)| **e).map(|(v, _)| v.upsilon).fold(f64::INFINITY, f64::min);
    let top = if edge_min.is_finite() { edge_min } else { lattice.iter().map(|v| v.upsilon).fold(0.0, f64::max) };
    let sublevels: Vec<Sublevel> = [0.25, 0.5, 0.75, 0.95]
        .iter()
        .map(|f| {
            let level = f * top;
            let members = lattice.iter().zip(&edges).filter(|(v, _)| v.upsilon <= level);
            let (mut points, mut radius, mut bounded) = (0, 0.0f64, true);
            for (v, edge) in members {
                points += 1;
                radius = radius.max(v.radius);
                bounded &= !edge;
            }
            Sublevel { level, points, radius, bounded }
        })
        .collect();
    let sublevels_monotone = sublevels.windows(2).all(|w| w[1].radius >= w[0].radius && w[1].points >= w[0].points);
    Ok(ContainmentProfile {
        family: fam.id().to_string(),
        x0: x0.to_vec(),
        options: *opts,
        upsilon_at_x0: c.upsilon(x0)?,
        within_bound: sup_hamiltonian.is_finite() && sup_hamiltonian <= HAMILTONIAN_BOUND,
        sup_hamiltonian,
        lattice,
        sublevels,
        sublevels_monotone,
    })
}
