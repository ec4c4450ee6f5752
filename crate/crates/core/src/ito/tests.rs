use std::sync::Arc;

use super::*;
use crate::polynomial::Polynomial;
use crate::sim::{
    simulate_jump_diffusion, simulate_singular, AffineModel, EtaScenario, IdiosyncraticEta, InitialLaw, JumpConfig,
    MarkLaw, TimeGrid,
};

fn scalar(b0: f64, b1: f64, sigma: f64, jumps: Option<JumpConfig>) -> Arc<AffineModel> {
    Arc::new(AffineModel::scalar(b0, b1, 0.0, sigma, 0.0, jumps).unwrap())
}

fn origin() -> InitialLaw {
    InitialLaw::Point { at: vec![0.0] }
}

fn x2() -> CylindricalFunctional {
    CylindricalFunctional::moment_1d(2)
}

fn x1() -> CylindricalFunctional {
    CylindricalFunctional::moment_1d(1)
}

fn within(r: &ItoReport, c_weak: f64) -> bool {
    r.residual.abs() <= r.band(c_weak)
}

#[test]
fn brownian_second_moment() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 1.0, None), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let b = simulate_jump_diffusion(&spec, 4000, &g, 3).unwrap();
    let r = verify_general(&x2(), &b, 0, 200).unwrap();
    assert!(within(&r, 5.0), "{r:?}");
    assert!((r.lhs - 1.0).abs() <= 3.0 * r.lhs_se + 0.01, "{r:?}");
    // no jumps: the jump terms vanish identically
    assert_eq!(r.terms.law_jump_term, 0.0);
    assert_eq!(r.terms.lions_jump_compensator, 0.0);
    assert_eq!(r.terms.linear_derivative_jump_term, 0.0);
    assert!((r.terms.quadratic_variation_term - 1.0).abs() < 1e-12);
}

#[test]
fn deterministic_drift_is_exact() {
    let spec = JumpDiffusionSpec::new(scalar(0.7, 0.0, 0.0, None), InitialLaw::Uniform { low: vec![0.0], high: vec![1.0] })
        .unwrap();
    let g = TimeGrid::new(0.0, 2.0, 40).unwrap();
    let b = simulate_jump_diffusion(&spec, 100, &g, 1).unwrap();
    let r = verify_general(&x1(), &b, 0, 40).unwrap();
    assert!(r.residual.abs() < 1e-12);
    assert!((r.lhs - 1.4).abs() < 1e-12);
    assert_eq!(r.terms.quadratic_variation_term, 0.0);
    let c = verify_jump_corollary(&x1(), &spec, &b, 0, 40, 1).unwrap();
    assert!(c.residual.abs() < 1e-12);
}

#[test]
fn telescoping_windows() {
    let j = AffineModel::mark_jumps(1.5, MarkLaw::Uniform { low: vec![-1.0], high: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.1, -0.5, 0.4, Some(j)), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 30).unwrap();
    let b = simulate_jump_diffusion(&spec, 300, &g, 9).unwrap();
    let phi = CylindricalFunctional::squared(Polynomial::univariate(&[0.0, 1.0, 1.0]));
    let a = verify_general(&phi, &b, 0, 12).unwrap();
    let c = verify_general(&phi, &b, 12, 30).unwrap();
    let full = verify_general(&phi, &b, 0, 30).unwrap();
    for ((x, y), z) in a.terms.as_array().iter().zip(c.terms.as_array()).zip(full.terms.as_array()) {
        assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()), "{x} + {y} != {z}");
    }
    assert!((a.lhs + c.lhs - full.lhs).abs() <= 1e-12);
}

#[test]
fn jump_terms_close_the_identity() {
    let j = AffineModel::mark_jumps(1.0, MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 0.0, Some(j)), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let b = simulate_jump_diffusion(&spec, 20_000, &g, 4).unwrap();
    // pure jumps: general decomposition is exact pathwise
    let r = verify_general(&x2(), &b, 0, 50).unwrap();
    assert!(r.residual.abs() < 1e-10, "{r:?}");
    // generator form: mean jump 1/2 per unit time
    let c = verify_jump_corollary(&x1(), &spec, &b, 0, 50, 4).unwrap();
    assert!((c.terms.linear_derivative_jump_term - 0.5).abs() < 0.01, "{c:?}");
    assert!(within(&c, 0.0));
    assert!((c.lhs - 0.5).abs() < 3.0 * c.lhs_se + 1e-3);
}

#[test]
fn zero_jump_size_gives_zero_nu_term() {
    let j = JumpConfig {
        rate: 2.0,
        marks: MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] },
        size: crate::sim::AffineJump { constant: vec![0.0], state: vec![vec![0.0]], mean: vec![vec![0.0]], mark: vec![vec![0.0]] },
    };
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 1.0, Some(j)), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let b = simulate_jump_diffusion(&spec, 200, &g, 1).unwrap();
    let c = verify_jump_corollary(&x2(), &spec, &b, 0, 20, 3).unwrap();
    assert_eq!(c.terms.linear_derivative_jump_term, 0.0);
}

#[test]
fn compound_poisson_second_moment() {
    let lam = 2.0;
    let j = AffineModel::mark_jumps(lam, MarkLaw::Constant { value: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 0.0, Some(j)), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 400).unwrap();
    let b = simulate_jump_diffusion(&spec, 20_000, &g, 8).unwrap();
    let c = verify_jump_corollary(&x2(), &spec, &b, 0, 400, 1).unwrap();
    let exact = lam * lam + lam;
    assert!((c.lhs - exact).abs() <= 3.0 * c.lhs_se, "{c:?}");
    assert!((c.terms.linear_derivative_jump_term - exact).abs() <= 3.0 * c.lhs_se + 0.02, "{c:?}");
    assert!(within(&c, 1.0), "{c:?}");
}

#[test]
fn general_and_corollary_agree() {
    let j = AffineModel::mark_jumps(1.0, MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.2, -0.5, 0.3, Some(j)), InitialLaw::Normal { mean: vec![0.0], std: vec![0.5] })
        .unwrap();
    let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let b = simulate_jump_diffusion(&spec, 10_000, &g, 21).unwrap();
    let a = verify_general(&x2(), &b, 0, 100).unwrap();
    let c = verify_jump_corollary(&x2(), &spec, &b, 0, 100, 2).unwrap();
    assert_eq!(a.lhs, c.lhs);
    assert!(within(&a, 2.0), "{a:?}");
    assert!(within(&c, 2.0), "{c:?}");
    let comb = (a.residual_se.powi(2) + c.residual_se.powi(2)).sqrt();
    assert!((a.residual - c.residual).abs() <= 3.0 * comb + 2.0 * 0.01, "{a:?} {c:?}");
}

#[test]
fn singular_without_eta_has_zero_eta_terms() {
    let s = SingularSpec::new(scalar(0.1, 0.0, 0.5, None), vec![1.0], EtaScenario::None, origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let b = simulate_singular(&s, 500, &g, 2).unwrap();
    let r = verify_singular_corollary(&x2(), &s, &b, 0, 50).unwrap();
    assert_eq!(r.terms.singular_control_integral, 0.0);
    assert_eq!(r.terms.law_jump_term, 0.0);
    assert_eq!(r.terms.lions_jump_compensator, 0.0);
    assert_eq!(r.terms.linear_derivative_jump_term, 0.0);
}

#[test]
fn common_singular_jump_is_exact() {
    let s = SingularSpec::new(
        scalar(0.0, 0.0, 0.0, None),
        vec![1.0],
        EtaScenario::Deterministic { jumps: vec![(0.5, vec![1.0])], rate: vec![0.0] },
        origin(),
    )
    .unwrap();
    let g = TimeGrid::with_mandatory(0.0, 1.0, 10, &s.common_times()).unwrap();
    let b = simulate_singular(&s, 100, &g, 1).unwrap();
    let r = verify_singular_corollary(&x2(), &s, &b, 0, g.n_steps()).unwrap();
    assert_eq!(r.lhs, 1.0);
    assert_eq!(r.terms.law_jump_term, 1.0);
    assert!(r.residual.abs() <= 1e-10);
    let bounds = law_jump_bounds(&x2(), &b).unwrap();
    assert_eq!(bounds.len(), 1);
    assert!(bounds[0].law_jump <= bounds[0].bound + 1e-12, "{bounds:?}");
    // starting exactly at the jump node includes it
    let k = g.node_index(0.5).unwrap();
    let r = verify_singular_corollary(&x2(), &s, &b, k, g.n_steps()).unwrap();
    assert_eq!((r.lhs, r.terms.law_jump_term), (1.0, 1.0));
}

#[test]
fn idiosyncratic_singular_jumps() {
    let s = SingularSpec::new(
        scalar(0.0, 0.0, 0.0, None),
        vec![1.0],
        EtaScenario::Idiosyncratic(IdiosyncraticEta::UniformOnce { window: [0.0, 1.0], size: vec![1.0] }),
        origin(),
    )
    .unwrap();
    let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let b = simulate_singular(&s, 5000, &g, 6).unwrap();
    let r = verify_singular_corollary(&x2(), &s, &b, 0, 20).unwrap();
    assert_eq!(r.terms.law_jump_term, 0.0);
    assert!((r.lhs - 1.0).abs() < 1e-12);
    assert!(r.residual.abs() <= r.band(0.0), "{r:?}");
}

#[test]
fn law_jump_bound_holds_for_spread_clouds() {
    let s = SingularSpec::new(
        scalar(0.0, 0.0, 0.6, None),
        vec![0.5],
        EtaScenario::Deterministic { jumps: vec![(0.3, vec![1.0]), (0.7, vec![2.0])], rate: vec![0.1] },
        InitialLaw::Normal { mean: vec![0.0], std: vec![1.0] },
    )
    .unwrap();
    let g = TimeGrid::with_mandatory(0.0, 1.0, 20, &s.common_times()).unwrap();
    let b = simulate_singular(&s, 400, &g, 3).unwrap();
    let phi = CylindricalFunctional::squared(Polynomial::univariate(&[0.0, 0.0, 1.0]));
    let bounds = law_jump_bounds(&phi, &b).unwrap();
    assert_eq!(bounds.len(), 2);
    for jb in bounds {
        assert!(jb.law_jump <= jb.bound, "{jb:?}");
    }
    let r = verify_singular_corollary(&phi, &s, &b, 0, g.n_steps()).unwrap();
    assert!(r.terms.law_jump_term > 0.0);
}

#[test]
fn streaming_matches_replay() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, -1.0, 0.5, None), InitialLaw::Normal { mean: vec![1.0], std: vec![0.2] })
        .unwrap();
    let g = TimeGrid::new(0.0, 1.0, 25).unwrap();
    let b = simulate_jump_diffusion(&spec, 300, &g, 12).unwrap();
    let stored = verify_jump_corollary(&x2(), &spec, &b, 0, 25, 1).unwrap();
    let mut acc = ItoAccumulator::jump_corollary(x2(), &spec, 0, 25, 1).unwrap();
    crate::sim::run_jump_diffusion(&spec, 300, &g, 12, &mut acc).unwrap();
    assert_eq!(acc.report().unwrap(), stored);
}

#[test]
fn window_errors() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 1.0, None), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let b = simulate_jump_diffusion(&spec, 10, &g, 1).unwrap();
    assert!(verify_general(&x2(), &b, 5, 5).is_err());
    assert!(verify_general(&x2(), &b, 0, 11).is_err());
    let two_d = CylindricalFunctional::linear(Polynomial::var(2, 0));
    assert!(matches!(verify_general(&two_d, &b, 0, 10), Err(Error::Dimension { .. })));
}

#[test]
fn steps_csv_has_one_row_per_step() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 1.0, None), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
    let b = simulate_jump_diffusion(&spec, 10, &g, 1).unwrap();
    let r = verify_general(&x2(), &b, 2, 7).unwrap();
    let mut buf = Vec::new();
    r.write_steps_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
}

#[test]
fn sweep_on_deterministic_flow() {
    let spec = JumpDiffusionSpec::new(scalar(1.0, 0.0, 0.0, None), origin()).unwrap();
    let t = convergence_sweep(&x1(), &spec, 0.0, 1.0, &[10, 100], &[10, 20], &[1, 2], SweepMethod::General).unwrap();
    assert_eq!(t.rows.len(), 4);
    assert!(t.rows.iter().all(|r| r.rms_residual < 1e-12));
}

#[test]
fn sweep_drift_bias_is_first_order() {
    // b = -x, generator form: trapezoid error O(dt) on the mean
    let spec = JumpDiffusionSpec::new(scalar(0.0, -1.0, 0.0, None), InitialLaw::Point { at: vec![1.0] }).unwrap();
    let t = convergence_sweep(&x1(), &spec, 0.0, 1.0, &[4], &[10, 20, 40, 80], &[1], SweepMethod::JumpCorollary { mark_mc: 1 })
        .unwrap();
    let s = t.slope_dt.unwrap();
    assert!((s - 1.0).abs() < 0.35 || (s - 2.0).abs() < 0.35, "{t:?}");
    assert!(t.c_weak > 0.0);
}

#[test]
fn fokker_planck_trivial_and_heat() {
    let grid = TimeGrid::new(0.0, 0.5, 50).unwrap();
    let space = SpaceGrid { low: -6.0, high: 6.0, nodes: 241 };
    let init = InitialLaw::Normal { mean: vec![0.0], std: vec![0.5] };
    let cfg = FpConfig { grid, space, particles: 2000, seed: 1, mark_mc: 1, pde_substeps: 1, windows: 5 };
    let still = JumpDiffusionSpec::new(scalar(0.0, 0.0, 0.0, None), init.clone()).unwrap();
    let r = fokker_planck_consistency(&still, &x2(), &cfg).unwrap();
    assert_eq!((r.pde_rate, r.mc_rate, r.rel_error), (0.0, 0.0, 0.0));

    let heat = JumpDiffusionSpec::new(scalar(0.0, 0.0, 1.0, None), init).unwrap();
    assert!(matches!(fokker_planck_consistency(&heat, &x2(), &cfg), Err(Error::Cfl { .. })));
    let cfg = FpConfig { pde_substeps: 8, ..cfg };
    let r = fokker_planck_consistency(&heat, &x2(), &cfg).unwrap();
    assert!((r.pde_rate - 1.0).abs() < 0.01, "{r:?}");
    assert!(r.rel_error < 0.01, "{r:?}");
}

#[test]
fn fokker_planck_unit_jumps() {
    let j = AffineModel::mark_jumps(1.0, MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, 0.0, Some(j)), InitialLaw::Uniform { low: vec![-0.5], high: vec![0.5] })
        .unwrap();
    let cfg = FpConfig {
        grid: TimeGrid::new(0.0, 0.5, 50).unwrap(),
        space: SpaceGrid { low: -2.0, high: 3.0, nodes: 201 },
        particles: 5000,
        seed: 2,
        mark_mc: 4,
        pde_substeps: 1,
        windows: 5,
    };
    let r = fokker_planck_consistency(&spec, &x1(), &cfg).unwrap();
    assert!((r.pde_rate - 0.5).abs() < 0.01, "{r:?}");
    assert!(r.rel_error < 0.05, "{r:?}");
}

#[test]
fn fokker_planck_conserves_mass_across_a_drift_sign_change() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, -0.5, 0.6, None), InitialLaw::Normal { mean: vec![0.5], std: vec![0.5] })
        .unwrap();
    let cfg = FpConfig {
        grid: TimeGrid::new(0.0, 0.5, 100).unwrap(),
        space: SpaceGrid { low: -5.0, high: 5.0, nodes: 401 },
        particles: 2000,
        seed: 3,
        mark_mc: 1,
        pde_substeps: 8,
        windows: 5,
    };
    let r = fokker_planck_consistency(&spec, &x2(), &cfg).unwrap();
    assert!(r.mass_drift < 1e-9, "{r:?}");
}
