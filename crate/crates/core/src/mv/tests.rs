use super::*;
use crate::sim::JumpDiffusionSpec;

fn active() -> MvParams {
    MvParams { r: 0.05, rho: 0.3, sigma: 0.3, beta: 1.0, lambda: 1.0, gamma: 1.2, horizon: 1.0 }
}

fn quiet() -> MvParams {
    MvParams { gamma: 50.0, ..active() }
}

/// Reflection active but moderate; the projection scheme's O(sqrt dt) bias scales with the
/// amount of eta.
fn moderate() -> MvParams {
    MvParams { gamma: 2.0, ..active() }
}

fn uniform() -> InitialLaw {
    InitialLaw::Uniform { low: vec![-0.1], high: vec![0.1] }
}

#[test]
fn closed_forms_solve_their_odes() {
    for p in [active(), MvParams { r: -0.2, rho: 0.7, sigma: 0.4, beta: 3.0, ..active() }] {
        let v = p.value();
        assert_eq!(v.terminal_residuals(), [0.0; 4]);
        for t in [0.0, 0.25, 0.5, 0.9, 1.0] {
            for e in v.ode_residuals(t) {
                assert!(e.abs() <= 1e-10, "{e}");
            }
        }
    }
}

#[test]
fn closed_form_examples() {
    let p = MvParams { r: 0.5, rho: 1.0, sigma: 1.0, beta: 2.0, ..active() };
    for t in [0.0, 0.3, 1.0] {
        assert!((p.value().a(t) - 1.0).abs() < 1e-15);
    }
    let p = MvParams { rho: 0.4, sigma: 0.4, beta: 1.5, ..active() };
    let e = std::f64::consts::E;
    assert!((p.value().d(0.0) - (1.0 - e) / 3.0).abs() < 1e-14);
    let v = closed_form_value(&active(), 1.0, &EmpiricalMeasure::dirac(&[0.7])).unwrap();
    assert_eq!(v, -0.7);
    assert!(closed_form_value(&active(), 1.5, &EmpiricalMeasure::dirac(&[0.7])).is_err());
}

#[test]
fn regions() {
    let free = MvParams { lambda: 0.0, gamma: 0.3, ..active() };
    assert_eq!(region_classify(&free, 0.2, 0.0, -100.0, 1e-9), Region::Continuation);
    let p = active();
    assert_eq!(region_classify(&p, 0.2, 0.0, 10.0, 1e-9), Region::Continuation);
    assert_eq!(region_classify(&p, 0.2, 0.0, -10.0, 1e-9), Region::Action);
    let root = p.boundary_offset(0.2) + 0.4;
    assert!(p.s(0.2, 0.4, root).abs() < 1e-14);
    assert_eq!(region_classify(&p, 0.2, 0.4, root, 1e-9), Region::Boundary);
}

#[test]
fn projection_lands_on_boundary() {
    let p = active();
    let refl = MvReflection::new(p, 1e-9, 0.0);
    let mut xs: Vec<f64> = (0..200).map(|i| -1.5 + 0.02 * i as f64).collect();
    let before = xs.clone();
    let push = refl.project(0.5, &mut xs, 1, &[1.0]).unwrap();
    let m = cloud_mean(&xs, 1)[0];
    let b = m + p.boundary_offset(0.5);
    for ((x, y), e) in before.iter().zip(&xs).zip(&push) {
        assert!(*e >= 0.0);
        assert!((y - x - e).abs() < 1e-14);
        if *e > 0.0 {
            assert!((y - b).abs() < 1e-12);
        } else {
            assert!(*y >= b);
        }
    }
    assert!(push.iter().any(|e| *e > 0.0));
    let mut inside = xs.clone();
    assert!(refl.project(0.5, &mut inside, 1, &[1.0]).unwrap().iter().all(|e| *e == 0.0));
}

#[test]
fn initial_cloud_must_be_inside() {
    let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let run = MvRun::new(InitialLaw::Samples { points: vec![vec![-3.0], vec![3.0]] }, 10, g.clone(), 1);
    assert!(matches!(run_optimal(&active(), &run, &mut MvObserver::new(active(), 1e-6)), Err(Error::OutsideContinuation { .. })));
    let stuck = MvParams { lambda: 0.0, gamma: 1e-3, ..active() };
    let run = MvRun::new(uniform(), 10, g, 1);
    let rep = run_optimal(&stuck, &run, &mut MvObserver::new(stuck, 1e-6));
    assert!(rep.is_ok());
}

#[test]
fn no_reflection_matches_free_dynamics() {
    let p = quiet();
    let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let run = MvRun::new(uniform(), 300, g.clone(), 4);
    let (bundle, obs) = simulate_optimal(&p, &run).unwrap();
    assert!(obs.eta_totals().iter().all(|e| *e == 0.0));
    let spec = JumpDiffusionSpec::new(Arc::new(MvDynamics::new(p, [0.0; 3]).unwrap()), uniform()).unwrap();
    let free = crate::sim::simulate_jump_diffusion(&spec, 300, &g, 4).unwrap();
    for k in 0..=50 {
        assert_eq!(bundle.values(k), free.values(k));
    }
}

#[test]
fn degenerate_case_follows_the_mean_ode() {
    let p = MvParams { beta: 1e12, ..quiet() };
    let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let run = MvRun::new(InitialLaw::Point { at: vec![0.4] }, 50, g.clone(), 2);
    let (bundle, obs) = simulate_optimal(&p, &run).unwrap();
    assert!(obs.eta_totals().iter().all(|e| *e == 0.0));
    for k in 0..=100 {
        let exact = 0.4 * (p.r * g.nodes()[k]).exp();
        for x in bundle.values(k) {
            assert!((x - exact).abs() < 1e-3, "{x} {exact}");
        }
    }
}

#[test]
fn adjoint_identities() {
    let p = active();
    let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let run = MvRun::new(uniform(), 2000, g, 9);
    let (bundle, _) = simulate_optimal(&p, &run).unwrap();
    let (paths, chk) = adjoint_along_path(&p, &bundle, 1e-6).unwrap();
    assert!(chk.terminal_residual <= 1e-10);
    // a particle at the mean carries C(t)
    let m = cloud_mean(bundle.values(0), 1)[0];
    let at_mean = 2.0 * p.value().a(0.0) * (m - m) + p.value().c(0.0);
    assert_eq!(at_mean, p.value().c(0.0));
    assert_eq!(paths.len(), 101);
    let (_, chk) = adjoint_along_path(&quiet(), &simulate_optimal(&quiet(), &run).unwrap().0, 1e-6).unwrap();
    assert_eq!(chk.free_steps, 100);
    assert!((chk.drift_slope - chk.expected_slope).abs() <= 3.0 * chk.drift_slope_se, "{chk:?}");
}

#[test]
fn pushes_happen_only_on_the_boundary() {
    let p = active();
    let run = MvRun::new(uniform(), 4000, TimeGrid::new(0.0, 1.0, 100).unwrap(), 3);
    let (rep, obs) = mc_value_check(&p, &run, 10.0).unwrap();
    assert!(rep.eta_mean_total > 0.0);
    assert_eq!(rep.boundary_violations, 0);
    assert_eq!(rep.action_visits, 0);
    assert_eq!(obs.activity.len(), 101);
    let mut buf = Vec::new();
    obs.write_regions_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 102);
}

#[test]
fn value_check_small() {
    for p in [quiet(), moderate()] {
        let run = MvRun::new(uniform(), 20_000, TimeGrid::new(0.0, 1.0, 200).unwrap(), 11);
        let (rep, _) = mc_value_check(&p, &run, 10.0).unwrap();
        assert!(rep.within_band, "{rep:?}");
        assert_eq!(rep.boundary_violations, 0);
    }
}

#[test]
fn terminal_horizon_is_exact() {
    let (j, _, v) = terminal_value_check(&active(), &InitialLaw::Normal { mean: vec![0.3], std: vec![0.5] }, 1000, 5).unwrap();
    assert!((j - v).abs() < 1e-12);
}

#[test]
fn boundary_start_pushes_about_half() {
    let p = active();
    // one particle in 20 sits on the boundary, so pushes barely move the mean
    let off = p.boundary_offset(0.0);
    let high = off - 20.0 * off / 19.0;
    let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![if i == 0 { off } else { high }]).collect();
    let mut run = MvRun::new(InitialLaw::Samples { points: pts }, 40_000, TimeGrid::new(0.0, 0.01, 10).unwrap(), 6);
    run.tol = 1e-9;
    let (bundle, _) = simulate_optimal(&p, &run).unwrap();
    let push = bundle.eta_continuous(0).unwrap();
    let low: Vec<f64> = push.iter().step_by(20).copied().collect();
    let frac = low.iter().filter(|e| **e > 0.0).count() as f64 / low.len() as f64;
    assert!((0.4..=0.6).contains(&frac), "{frac}");
}

#[test]
fn perturbed_policies_cost_more() {
    let p = active();
    let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let run = MvRun::new(uniform(), 10_000, g, 21);
    let (star, _) = mc_value_check(&p, &run, 0.0).unwrap();
    for k in [[0.3, 0.0, 0.0], [0.0, -0.4, 0.4], [-0.2, 0.2, 0.0]] {
        let pert = MvRun { perturbation: k, ..run.clone() };
        let (rep, _) = mc_value_check(&p, &pert, 0.0).unwrap();
        let se = (star.se.powi(2) + rep.se.powi(2)).sqrt();
        assert!(rep.j_hat >= star.j_hat - 3.0 * se, "{k:?}: {} < {}", rep.j_hat, star.j_hat);
    }
}
