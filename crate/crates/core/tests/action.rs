use evolvebm::action::{
    action_fw, action_manifold, control_action, integrate_controlled, minimize_action, reconstruct_control, Action,
};
use evolvebm::framebundle::{antidevelop, develop, ControlPath, Frame, Path};
use evolvebm::sampler::FnDiffusion;
use evolvebm::MetricFamily;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn value(fam: &MetricFamily, p: &Path) -> f64 {
    action_manifold(fam, p).unwrap().value.finite().unwrap()
}

/// Random smooth curve: a few low Fourier modes around a base point.
fn random_curve(rng: &mut ChaCha8Rng, base: &[f64], amp: f64, n: usize) -> Path {
    let d = base.len();
    let coef: Vec<[f64; 4]> = (0..d).map(|_| std::array::from_fn(|_| rng.gen_range(-amp..amp))).collect();
    Path::from_fn(n, |t| {
        (0..d)
            .map(|i| {
                let c = coef[i];
                base[i] + c[0] * t + c[1] * (PI * t).sin() + c[2] * (2.0 * PI * t).cos() + c[3] * t * t
            })
            .collect()
    })
    .unwrap()
}

#[test]
fn euler_lagrange_minimizer_for_linear_metric() {
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let r = minimize_action(&fam, &[0.0], &[1.0], 200, None).unwrap();
    assert!(r.converged, "gradient {:e} after {}", r.gradient_norm, r.iterations);
    let exact = 0.5 / 2f64.ln();
    assert!((r.action.value.finite().unwrap() - exact).abs() < 1e-4);
    // γ(t) = ln(1+t)/ln 2
    for (k, p) in r.path.points().iter().enumerate() {
        let t = r.path.time(k);
        assert!((p[0] - (1.0 + t).ln() / 2f64.ln()).abs() < 1e-4);
    }
}

#[test]
fn minimizer_survives_smooth_bumps() {
    let fam = MetricFamily::shrink_sphere(0.5).unwrap();
    let r = minimize_action(&fam, &[-0.4, 0.1], &[0.5, 0.3], 100, None).unwrap();
    assert!(r.converged);
    let best = r.action.value.finite().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (a, b, j) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(1..4) as f64);
        let pts = r
            .path
            .points()
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let bump = 1e-3 * (j * PI * r.path.time(k)).sin();
                evolvebm::ChartPoint(vec![p[0] + a * bump, p[1] + b * bump])
            })
            .collect();
        assert!(value(&fam, &Path::new(pts).unwrap()) >= best);
    }
}

#[test]
fn sphere_minimizer_from_bent_start_beats_segment() {
    let fam = MetricFamily::shrink_sphere(0.0).unwrap();
    let bent = Path::from_fn(64, |t| vec![-0.5 + t, 0.4 * (PI * t).sin()]).unwrap();
    let r = minimize_action(&fam, &[-0.5, 0.0], &[0.5, 0.0], 64, Some(&bent)).unwrap();
    assert!(r.converged);
    // the chord through the origin is a great circle arc of length 4·atan(0.5)
    let arc = 4.0 * 0.5f64.atan();
    assert!((r.action.value.finite().unwrap() - 0.5 * arc * arc).abs() < 1e-3);
    assert!(r.path.points().iter().all(|p| p[1].abs() < 1e-6));
}

#[test]
fn fw_reconstruction_round_trip() {
    let sde = FnDiffusion::new(1, |_, x: &[f64], b: &mut [f64]| b[0] = -x[0], |_, _, s: &mut [f64]| s[0] = 1.0);
    let line = Path::segment(&[0.0], &[1.0], 100).unwrap();
    let a = action_fw(&sde, &line).unwrap();
    assert!((a.value.finite().unwrap() - 7.0 / 6.0).abs() < 1e-10);
    let rec = reconstruct_control(&sde, &line).unwrap();
    let back = integrate_controlled(&sde, &[0.0], &rec).unwrap();
    assert!(back.sup_distance(&line) < 1e-8);
    // φ(t) = t + t²/2
    assert!((rec.control.values()[100][0] - 1.5).abs() < 1e-12);
}

#[test]
fn fw_schilder_line() {
    let sde = FnDiffusion::new(2, |_, _, b: &mut [f64]| b.fill(0.0), |_, _, s: &mut [f64]| {
        s.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    });
    let path = Path::segment(&[0.0, 0.0], &[3.0, -4.0], 17).unwrap();
    assert!((action_fw(&sde, &path).unwrap().value.finite().unwrap() - 12.5).abs() < 1e-12);
}

#[test]
fn fw_state_dependent_diffusion_round_trip() {
    let sde = FnDiffusion::new(
        2,
        |t, x: &[f64], b: &mut [f64]| {
            b[0] = -x[1] + t;
            b[1] = x[0].sin();
        },
        |_, x: &[f64], s: &mut [f64]| s.copy_from_slice(&[1.0 + 0.2 * x[0] * x[0], 0.1, -0.3, 2.0]),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let path = random_curve(&mut rng, &[0.1, -0.2], 0.5, 500);
    let rec = reconstruct_control(&sde, &path).unwrap();
    let back = integrate_controlled(&sde, path.start(), &rec).unwrap();
    assert!(back.sup_distance(&path) < 1e-8);
}

#[test]
fn control_action_of_antidevelopment_matches_manifold_action() {
    let families = [
        (MetricFamily::scalar1d(1.0, 1.0).unwrap(), vec![0.2]),
        (MetricFamily::conformal_plane(-1.0).unwrap(), vec![0.1, -0.3]),
        (MetricFamily::shrink_sphere(0.5).unwrap(), vec![0.1, 0.2]),
        (MetricFamily::flat_torus([1.0, 2.0], [1.0, -0.5]).unwrap(), vec![0.3, 0.3]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for (fam, base) in &families {
        for _ in 0..5 {
            let path = random_curve(&mut rng, base, 0.4, 2000);
            let u0 = Frame::canonical(fam, 0.0, path.start()).unwrap();
            let w = antidevelop(fam, &path, &u0).unwrap();
            let a = control_action(&w).value.finite().unwrap();
            let b = value(fam, &path);
            assert!((a - b).abs() <= 1e-5 * b, "{}: {a} vs {b}", fam.id());
        }
    }
}

#[test]
fn unit_speed_development_has_half_action() {
    let fam = MetricFamily::shrink_sphere(0.5).unwrap();
    let u0 = Frame::canonical(&fam, 0.0, &[0.0, 0.0]).unwrap();
    let w = ControlPath::from_fn(4000, |t| vec![0.6 * t, 0.8 * t]).unwrap();
    let (_, path) = develop(&fam, &w, &u0).unwrap();
    assert!((value(&fam, &path) - 0.5).abs() < 1e-6);
}

#[test]
fn quadrature_is_second_order() {
    let fam = MetricFamily::conformal_plane(0.7).unwrap();
    let curve = |t: f64| vec![(2.0 * t).sin(), t * t - 0.5 * t];
    let errs: Vec<f64> = [50, 100, 200]
        .iter()
        .map(|&n| value(&fam, &Path::from_fn(n, curve).unwrap()) - value(&fam, &Path::from_fn(2 * n, curve).unwrap()))
        .collect();
    for w in errs.windows(2) {
        assert!((w[1].abs() / w[0].abs() - 0.25).abs() < 0.05, "{errs:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn action_is_nonnegative_and_zero_only_when_constant(seed in any::<u64>(), scale in 1e-6f64..0.5, still in any::<bool>()) {
        let fam = MetricFamily::shrink_sphere(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = if still {
            Path::constant(&[0.1, 0.1], 50).unwrap()
        } else {
            random_curve(&mut rng, &[0.1, 0.1], scale, 50)
        };
        let a = value(&fam, &path);
        prop_assert!(a >= 0.0);
        let moved = path.points().windows(2).any(|p| p[0] != p[1]);
        prop_assert_eq!(a == 0.0, !moved);
    }

    #[test]
    fn constant_speed_beats_reparameterized_copy(seed in any::<u64>(), warp in 0.05f64..0.9) {
        let fam = MetricFamily::shrink_sphere(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b): (f64, f64) = (rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
        // chart lines through the origin are great circles; |x| = tan(φ/2) with φ the arc angle
        let norm = (a * a + b * b).sqrt().max(1e-3);
        let (phi0, phi1) = (-1.2f64, 1.2f64);
        let point = |phi: f64| vec![(phi / 2.0).tan() * a / norm, (phi / 2.0).tan() * b / norm];
        let uniform = Path::from_fn(200, |t| point(phi0 + t * (phi1 - phi0))).unwrap();
        let warped = Path::from_fn(200, |t| {
            let s = t + warp * (PI * t).sin() / PI;
            point(phi0 + s * (phi1 - phi0))
        }).unwrap();
        prop_assert!(value(&fam, &uniform) < value(&fam, &warped));
    }

    #[test]
    fn fw_identity_diffusion_equals_flat_action(seed in any::<u64>()) {
        let flat = MetricFamily::euclidean(2).unwrap();
        let sde = FnDiffusion::new(2, |_, _, b: &mut [f64]| b.fill(0.0), |_, _, s: &mut [f64]| {
            s.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = random_curve(&mut rng, &[0.0, 0.0], 2.0, 40);
        let fw = action_fw(&sde, &path).unwrap().value.finite().unwrap();
        prop_assert!((fw - value(&flat, &path)).abs() <= 1e-12 * (1.0 + fw));
    }
}

#[test]
fn action_value_reports_grid() {
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let a = action_manifold(&fam, &Path::segment(&[0.0], &[1.0], 10).unwrap()).unwrap();
    assert_eq!(a.grid, 10);
    assert!(matches!(a.value, Action::Finite(_)));
}
