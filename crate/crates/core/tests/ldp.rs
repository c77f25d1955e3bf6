use evolvebm::action::minimize_action;
use evolvebm::framebundle::Path;
use evolvebm::ldp::{
    containment_profile, exit_statistics, ladder_report, tube_probability, ContainmentOptions, MCEstimate,
};
use evolvebm::sampler::Simulator;
use evolvebm::MetricFamily;

fn joint_se(a: &MCEstimate, b: &MCEstimate) -> f64 {
    a.standard_error.hypot(b.standard_error)
}

#[test]
fn huge_tube_only_loses_aborted_samples() {
    let fam = MetricFamily::shrink_sphere(0.5).unwrap();
    let path = Path::constant(&[0.0, 0.0], 100).unwrap();
    let est = tube_probability(&fam, &path, 1e6, 1.0, 500, 3, Simulator::FrameBundle).unwrap();
    assert_eq!(est.hits + est.aborted, est.n_samples);
    assert!((est.p_hat - (1.0 - est.aborted as f64 / 500.0)).abs() < 1e-15);
}

#[test]
fn frozen_process_stays_in_tube() {
    let fam = MetricFamily::conformal_plane(-1.0).unwrap();
    let path = Path::constant(&[0.3, -0.2], 100).unwrap();
    let est = tube_probability(&fam, &path, 0.1, 1e-6, 200, 1, Simulator::FrameBundle).unwrap();
    assert_eq!(est.hits, 200);
    assert_eq!(est.log_scaled, Some(0.0));
}

#[test]
fn frame_bundle_and_reference_tubes_agree() {
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let path = Path::constant(&[0.0], 200).unwrap();
    let a = tube_probability(&fam, &path, 0.5, 0.1, 20_000, 17, Simulator::FrameBundle).unwrap();
    let b = tube_probability(&fam, &path, 0.5, 0.1, 20_000, 17, Simulator::ScalarReference).unwrap();
    assert!((a.p_hat - b.p_hat).abs() <= 3.0 * joint_se(&a, &b), "{} vs {}", a.p_hat, b.p_hat);
    assert!(a.exit_times.is_some());
}

#[test]
fn nested_tubes_are_coupled() {
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let path = Path::segment(&[0.0], &[0.5], 100).unwrap();
    let hits: Vec<usize> = [0.2, 0.3, 0.5]
        .iter()
        .map(|&d| tube_probability(&fam, &path, d, 0.25, 4000, 5, Simulator::FrameBundle).unwrap().hits)
        .collect();
    assert!(hits.windows(2).all(|w| w[0] <= w[1]), "{hits:?}");
}

#[test]
fn enormous_action_is_below_resolution() {
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let path = Path::segment(&[0.0], &[10.0], 100).unwrap();
    let rep = ladder_report(&fam, &path, 0.3, &[0.5, 0.25], 2000, 1, Simulator::FrameBundle).unwrap();
    assert!(rep.action.finite().unwrap() > 50.0);
    assert_eq!(rep.below_resolution, vec![0.5, 0.25]);
    assert!(rep.fit.is_none());
}

/// Kendall rank correlation (τ-a) of two equally long samples.
fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += ((x[i] - x[j]) * (y[i] - y[j])).signum();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

#[test]
fn ladder_respects_upper_bound_with_shrinking_slack() {
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let min = minimize_action(&fam, &[0.0], &[1.0], 200, None).unwrap();
    let delta = 0.3;
    // infimum over the tube: the rescaled minimizer ending δ/√g(1) short of 1
    let end = 1.0 - delta / 2f64.sqrt();
    let tube_inf = 0.5 * end * end / 2f64.ln();
    let eps = [0.5, 0.25, 0.1];
    let rep = ladder_report(&fam, &min.path, delta, &eps, 50_000, 11, Simulator::FrameBundle).unwrap();
    let mut slack = Vec::new();
    for e in &rep.estimates {
        let ls = e.log_scaled.expect("resolved rung");
        assert!(ls <= -tube_inf + 2.0 * e.log_scaled_se.unwrap());
        slack.push(-tube_inf - ls);
    }
    assert!(kendall_tau(&slack, &eps) > 0.0, "{slack:?}");
    assert!(rep.monotone);
}

#[test]
fn containment_on_flat_plane() {
    let fam = MetricFamily::euclidean(2).unwrap();
    let prof = containment_profile(&fam, &[0.0, 0.0], &ContainmentOptions::default()).unwrap();
    assert_eq!(prof.upsilon_at_x0, 0.0);
    // ½ (2r/(1+r²))² peaks at r = 1 with value ½
    assert!((prof.sup_hamiltonian - 0.5).abs() < 1e-6, "{}", prof.sup_hamiltonian);
    assert!(prof.sublevels.iter().all(|s| s.bounded));
    assert!(prof.sublevels_monotone);
}

#[test]
fn containment_on_every_family() {
    let cases = [
        (MetricFamily::scalar1d(1.0, 1.0).unwrap(), vec![0.0]),
        (MetricFamily::conformal_plane(-1.0).unwrap(), vec![0.0, 0.0]),
        (MetricFamily::shrink_sphere(0.5).unwrap(), vec![0.2, 0.0]),
        (MetricFamily::flat_torus([1.0, 2.0], [1.0, -0.5]).unwrap(), vec![0.0, 0.0]),
    ];
    let opts = ContainmentOptions { points: 31, ..Default::default() };
    for (fam, x0) in &cases {
        let prof = containment_profile(fam, x0, &opts).unwrap();
        assert_eq!(prof.upsilon_at_x0, 0.0);
        assert!(prof.lattice.iter().all(|v| v.upsilon >= 0.0));
        assert!(prof.within_bound, "{}: {}", fam.id(), prof.sup_hamiltonian);
        assert!(prof.sublevels.iter().all(|s| s.bounded), "{}", fam.id());
        assert!(prof.sublevels_monotone, "{}", fam.id());
    }
}

#[test]
fn scalar_containment_matches_closed_form() {
    // ḡ = 2, r̄ = √2|x|; away from the smoothing zone Υ = ln(1 + 2x²) and
    // ℋ₀ = ½ (4x/(1+2x²))² peaks at x = 1/√2 with value 1
    let fam = MetricFamily::scalar1d(1.0, 1.0).unwrap();
    let opts = ContainmentOptions { half_width: 2.0, points: 4001, ..Default::default() };
    let prof = containment_profile(&fam, &[0.0], &opts).unwrap();
    assert!((prof.sup_hamiltonian - 1.0).abs() < 1e-5, "{}", prof.sup_hamiltonian);
    for v in prof.lattice.iter().filter(|v| v.radius > 0.25) {
        assert!((v.upsilon - (2.0 * v.x[0] * v.x[0]).ln_1p()).abs() < 1e-12);
    }
}

#[test]
fn exit_probabilities_behave() {
    let flat = MetricFamily::euclidean(1).unwrap();
    let far = exit_statistics(&flat, &[0.0], 50.0, &[0.5], 100, 1000, 2).unwrap();
    assert_eq!(far.estimates[0].hits, 0);
    assert!(far.estimates[0].below_resolution);

    let near = exit_statistics(&flat, &[0.0], 0.5, &[0.5], 200, 5000, 2).unwrap();
    let wide = exit_statistics(&flat, &[0.0], 1.0, &[0.5], 200, 5000, 2).unwrap();
    assert!(wide.estimates[0].log_scaled.unwrap() < near.estimates[0].log_scaled.unwrap());
}

#[test]
fn flat_exit_rate_near_reflection_value() {
    let flat = MetricFamily::euclidean(1).unwrap();
    let rep = exit_statistics(&flat, &[0.0], 1.0, &[0.5, 0.2], 400, 20_000, 4).unwrap();
    let ls = rep.estimates[1].log_scaled.unwrap();
    assert!((ls + 0.5).abs() <= 0.3 * 0.5, "{ls}");
}
