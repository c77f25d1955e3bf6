use evolvebm::framebundle::{
    antidevelop, develop, horizontal_lift, horizontal_lift_with, orthonormality_defect, Frame, LiftOptions, Path,
};
use evolvebm::geometry::MetricFamily;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn families() -> Vec<MetricFamily> {
    vec![
        MetricFamily::scalar1d(1.0, 1.0).unwrap(),
        MetricFamily::conformal_plane(-1.0).unwrap(),
        MetricFamily::shrink_sphere(0.5).unwrap(),
        MetricFamily::flat_torus([1.0, 2.0], [1.0, -0.5]).unwrap(),
    ]
}

fn test_curve(dim: usize, n: usize) -> Path {
    Path::from_fn(n, |t| {
        let x = vec![0.1 + 0.6 * (PI * t).sin() + 0.2 * t, -0.2 + 0.4 * t * t - 0.2 * (3.0 * t).sin()];
        x[..dim].to_vec()
    })
    .unwrap()
}

#[test]
fn lift_preserves_isometry_at_fine_grid() {
    for fam in families() {
        let path = test_curve(fam.dim(), 10_000);
        let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
        let lift = horizontal_lift(&fam, &path, &u0).unwrap();
        let defect = lift.max_orthonormality_defect(&fam).unwrap();
        assert!(defect <= 1e-5, "{}: {defect:e}", fam.id());
        assert_eq!(lift.frames.len(), 10_001);
        assert_eq!(lift.base_path(), path);
    }
}

#[test]
fn great_circle_on_shrinking_sphere_stays_orthonormal() {
    let fam = MetricFamily::shrink_sphere(0.5).unwrap();
    // straight chart lines through the origin are great circles
    let path = Path::segment(&[0.0, 0.0], &[1.5, 0.8], 10_000).unwrap();
    let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
    let lift = horizontal_lift(&fam, &path, &u0).unwrap();
    for f in lift.frames.iter().step_by(500) {
        let g = fam.metric_eval(f.time, &f.base).unwrap();
        let gram = f.basis.transpose() * g * &f.basis;
        assert!((gram - DMatrix::identity(2, 2)).abs().max() <= 1e-5);
    }
}

#[test]
fn inner_products_are_preserved_for_arbitrary_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for fam in families() {
        let d = fam.dim();
        let path = test_curve(d, 2000);
        let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
        let lift = horizontal_lift(&fam, &path, &u0).unwrap();
        let n = path.n() as f64;
        let tol = 1e-5 * (1.0 + n * (1.0 / n).powi(2));
        for _ in 0..10 {
            let a = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let start = a.dot(&b);
            for f in &lift.frames {
                let g = fam.metric_eval(f.time, &f.base).unwrap();
                let now = ((&f.basis * &a).transpose() * g * (&f.basis * &b))[(0, 0)];
                assert!((now - start).abs() <= tol);
            }
        }
    }
}

/// Classical parallel transport for a time-independent metric: the curve and
/// its velocity are evaluated in closed form and the symbols come from a
/// finite-difference brute force, so nothing is shared with the library path.
fn classical_transport(fam: &MetricFamily, curve: impl Fn(f64) -> (Vec<f64>, Vec<f64>), e0: &DMatrix<f64>, n: usize) -> Vec<DMatrix<f64>> {
    let d = fam.dim();
    let gamma = |x: &[f64]| -> Vec<f64> {
        let h = 1e-5;
        let dg: Vec<DMatrix<f64>> = (0..d)
            .map(|k| {
                let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                xp[k] += h;
                xm[k] -= h;
                (fam.metric_eval(0.0, &xp).unwrap() - fam.metric_eval(0.0, &xm).unwrap()) / (2.0 * h)
            })
            .collect();
        let ginv = fam.metric_eval(0.0, x).unwrap().try_inverse().unwrap();
        let mut out = vec![0.0; d * d * d];
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    out[(k * d + i) * d + j] = (0..d)
                        .map(|m| 0.5 * ginv[(k, m)] * (dg[i][(m, j)] + dg[j][(m, i)] - dg[m][(i, j)]))
                        .sum();
                }
            }
        }
        out
    };
    let rhs = |t: f64, e: &DMatrix<f64>| -> DMatrix<f64> {
        let (x, v) = curve(t);
        let g = gamma(&x);
        DMatrix::from_fn(d, d, |k, col| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += g[(k * d + i) * d + j] * v[i] * e[(j, col)];
                }
            }
            -s
        })
    };
    let h = 1.0 / n as f64;
    let mut e = e0.clone();
    let mut out = vec![e.clone()];
    for k in 0..n {
        let t = k as f64 * h;
        let k1 = rhs(t, &e);
        let k2 = rhs(t + h / 2.0, &(&e + &k1 * (h / 2.0)));
        let k3 = rhs(t + h / 2.0, &(&e + &k2 * (h / 2.0)));
        let k4 = rhs(t + h, &(&e + &k3 * h));
        e += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(e.clone());
    }
    out
}

#[test]
fn static_metric_lift_matches_classical_transport() {
    let fam = MetricFamily::shrink_sphere(0.0).unwrap();
    let curve = |t: f64| {
        (
            vec![0.2 + 0.5 * (PI * t).sin(), -0.3 + 0.4 * t * t],
            vec![0.5 * PI * (PI * t).cos(), 0.8 * t],
        )
    };
    let n = 10_000;
    let path = Path::from_fn(n, |t| curve(t).0).unwrap();
    let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
    let lift = horizontal_lift(&fam, &path, &u0).unwrap();
    let reference = classical_transport(&fam, curve, &u0.basis, n);
    let err = lift
        .frames
        .iter()
        .zip(&reference)
        .map(|(f, r)| (&f.basis - r).abs().max())
        .fold(0.0, f64::max);
    assert!(err <= 1e-8, "max deviation {err:e}");
}

#[test]
fn develop_inverts_antidevelop() {
    for fam in families() {
        let path = test_curve(fam.dim(), 10_000);
        let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
        let w = antidevelop(&fam, &path, &u0).unwrap();
        assert!(w.values()[0].iter().all(|v| *v == 0.0));
        let (_, back) = develop(&fam, &w, &u0).unwrap();
        let err = back.sup_distance(&path);
        assert!(err <= 1e-6, "{}: {err:e}", fam.id());
    }
}

#[test]
fn antidevelopment_speed_matches_metric_speed() {
    for fam in families() {
        let path = test_curve(fam.dim(), 4000);
        let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
        let w = antidevelop(&fam, &path, &u0).unwrap();
        let h = path.step();
        for k in 1..path.n() {
            let wdot: f64 = (0..fam.dim())
                .map(|i| ((w.values()[k + 1][i] - w.values()[k - 1][i]) / (2.0 * h)).powi(2))
                .sum::<f64>()
                .sqrt();
            let v = DVector::from_fn(fam.dim(), |i, _| (path.points()[k + 1][i] - path.points()[k - 1][i]) / (2.0 * h));
            let g = fam.metric_eval(path.time(k), &path.points()[k]).unwrap();
            let speed = (v.transpose() * g * &v)[(0, 0)].sqrt();
            assert!((wdot - speed).abs() <= 1e-5, "{} at k={k}", fam.id());
        }
    }
}

#[test]
fn unit_speed_development_on_sphere() {
    let fam = MetricFamily::shrink_sphere(0.5).unwrap();
    let u0 = Frame::canonical(&fam, 0.0, &[0.0, 0.0]).unwrap();
    let w = evolvebm::framebundle::ControlPath::from_fn(10_000, |t| vec![t, 0.0]).unwrap();
    let (frames, path) = develop(&fam, &w, &u0).unwrap();
    let h = path.step();
    for k in (1..path.n()).step_by(97) {
        let v = DVector::from_fn(2, |i, _| (path.points()[k + 1][i] - path.points()[k - 1][i]) / (2.0 * h));
        let g = fam.metric_eval(path.time(k), &path.points()[k]).unwrap();
        assert!(((v.transpose() * g * &v)[(0, 0)].sqrt() - 1.0).abs() <= 1e-6);
    }
    assert!(frames.max_orthonormality_defect(&fam).unwrap() <= 1e-6);
}

#[test]
fn reorthonormalization_is_recorded() {
    let fam = MetricFamily::shrink_sphere(0.5).unwrap();
    let path = test_curve(2, 200);
    let u0 = Frame::canonical(&fam, 0.0, path.start()).unwrap();
    let opts = LiftOptions { reorthonormalize_every: Some(10) };
    let lift = horizontal_lift_with(&fam, &path, &u0, &opts).unwrap();
    assert_eq!(lift.reorthonormalize_every, Some(10));
    assert!(orthonormality_defect(&fam, &lift.frames[200]).unwrap() < 1e-12);
}
