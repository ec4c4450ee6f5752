use std::sync::Arc;

use super::*;
use crate::measure::EmpiricalMeasure;
use crate::numeric::{mean_se, rk4_step};
use crate::sim::{InitialLaw, MarkLaw, TimeGrid};

fn standard() -> LqCoefficients {
    LqCoefficients {
        b0: 0.2,
        b1: -0.3,
        b1_bar: 0.1,
        b2: 1.0,
        sigma0: 0.2,
        sigma1: 0.1,
        sigma1_bar: 0.05,
        sigma2: 0.1,
        f1: 1.0,
        f1_bar: 0.5,
        f2: 0.5,
        g1: 1.0,
        g1_bar: 0.5,
        jumps: Some(LqJumps {
            rate: 1.0,
            marks: MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] },
            beta0: JumpFn::Linear { intercept: 0.0, slope: 0.1 },
            beta1: JumpFn::Constant(0.05),
            beta1_bar: JumpFn::Linear { intercept: 0.0, slope: 0.02 },
            beta2: JumpFn::Linear { intercept: 0.0, slope: 0.05 },
            moments: None,
        }),
    }
}

fn decoupled() -> LqCoefficients {
    LqCoefficients {
        b0: 0.3,
        b1: -0.4,
        b1_bar: 0.25,
        sigma0: 0.3,
        sigma1: 0.2,
        sigma1_bar: 0.1,
        f1: 1.0,
        f1_bar: 0.3,
        f2: 1.0,
        g1: 1.0,
        g1_bar: 0.5,
        jumps: Some(LqJumps {
            rate: 0.7,
            marks: MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] },
            beta0: JumpFn::Linear { intercept: 0.1, slope: 0.2 },
            beta1: JumpFn::Linear { intercept: 0.0, slope: 0.1 },
            beta1_bar: JumpFn::Constant(0.05),
            beta2: JumpFn::Constant(0.0),
            moments: None,
        }),
        ..Default::default()
    }
}

fn max_err(sol: &RiccatiSolution, co: &LqCoefficients) -> f64 {
    let mut e: f64 = 0.0;
    for (k, t) in sol.times().iter().enumerate() {
        let exact = decoupled_closed_form(co, sol.t_end(), *t).unwrap();
        for i in 0..4 {
            e = e.max((sol.node(k)[i] - exact[i]).abs());
        }
    }
    e
}

#[test]
fn terminal_values_are_exact() {
    let sol = solve_riccati(&standard(), 1.0, 100).unwrap();
    assert_eq!(sol.node(100), [1.0, 1.5, 0.0, 0.0]);
    let p = sol.at(1.0).unwrap();
    assert_eq!((p.a, p.b, p.c, p.d), (1.0, 1.5, 0.0, 0.0));
    assert!((0..=100).all(|k| sol.aux_node(k)[0] > 0.0));
}

#[test]
fn pure_running_cost_gives_time_to_go() {
    let co = LqCoefficients { f1: 1.0, f2: 1.0, ..Default::default() };
    let sol = solve_riccati(&co, 2.0, 40).unwrap();
    for (k, t) in sol.times().iter().enumerate() {
        assert!((sol.node(k)[0] - (2.0 - t)).abs() < 1e-12);
    }
}

#[test]
fn decoupled_matches_closed_form() {
    let co = decoupled();
    let sol = solve_riccati(&co, 1.0, 10_000).unwrap();
    assert!(max_err(&sol, &co) <= 1e-8);
    let (e1, e2) = (max_err(&solve_riccati(&co, 1.0, 10).unwrap(), &co), max_err(&solve_riccati(&co, 1.0, 20).unwrap(), &co));
    let ratio = e1 / e2;
    assert!((8.0..=32.0).contains(&ratio), "{e1} {e2}");
    // the control cannot act
    assert_eq!(optimal_feedback(&sol, 0.3, 1.7, -0.2).unwrap(), 0.0);
    let mean = mean_dynamics(&sol, 0.5, &TimeGrid::new(0.0, 1.0, 10).unwrap()).unwrap();
    assert!(mean.iter().all(|m| m.is_finite()));
}

#[test]
fn closed_form_handles_resonant_rates() {
    // h = c1 + c2 = 0 and l = 0: polynomial-times-exponential terms
    let co = LqCoefficients { b0: 0.5, sigma0: 0.3, f1: 1.0, f1_bar: 1.0, f2: 1.0, g1: 1.0, ..Default::default() };
    let sol = solve_riccati(&co, 1.0, 1000).unwrap();
    assert!(max_err(&sol, &co) < 1e-10);
}

#[test]
fn feedback_identities() {
    let co = LqCoefficients { b1: -0.2, b2: 1.0, sigma1: 0.3, f1: 1.0, f2: 0.5, g1: 1.0, g1_bar: 0.2, ..Default::default() };
    let sol = solve_riccati(&co, 1.0, 200).unwrap();
    let p = sol.at(0.37).unwrap();
    assert!(p.y.abs() < 1e-14);
    let xb = 0.8;
    let a = optimal_feedback(&sol, 0.37, xb, xb).unwrap();
    assert!((a + p.z / p.u * xb).abs() < 1e-14);
    let sol = solve_riccati(&standard(), 1.0, 200).unwrap();
    let (lo, hi) = (optimal_feedback(&sol, 0.5, 0.3 - 0.4, 0.3).unwrap(), optimal_feedback(&sol, 0.5, 0.3 + 0.4, 0.3).unwrap());
    let mid = optimal_feedback(&sol, 0.5, 0.3, 0.3).unwrap();
    assert!((0.5 * (lo + hi) - mid).abs() < 1e-12);
    assert!(optimal_feedback(&sol, 1.5, 0.0, 0.0).is_err());
}

#[test]
fn value_function_examples() {
    let sol = solve_riccati(&standard(), 1.0, 100).unwrap();
    let p = sol.at(0.2).unwrap();
    let v = value_function(&sol, 0.2, &EmpiricalMeasure::dirac(&[1.3])).unwrap();
    assert!((v - (p.b * 1.69 + p.c * 1.3 + p.d)).abs() < 1e-12);
    let mu = EmpiricalMeasure::from_flat(1, vec![-1.0, 0.5, 2.0, 0.1]).unwrap();
    let x2 = mu.flat().iter().map(|x| x * x).sum::<f64>() / 4.0;
    let m = mu.flat().iter().sum::<f64>() / 4.0;
    let vt = value_function(&sol, 1.0, &mu).unwrap();
    assert!((vt - (1.0 * x2 + 0.5 * m * m)).abs() < 1e-12);
    let zero = LqCoefficients { f2: 1.0, ..standard() };
    let zero = LqCoefficients { f1: 0.0, f1_bar: 0.0, g1: 0.0, g1_bar: 0.0, ..zero };
    let s0 = solve_riccati(&zero, 1.0, 50).unwrap();
    assert_eq!(value_function(&s0, 0.0, &mu).unwrap(), 0.0);
    assert!(value_function(&sol, 0.0, &EmpiricalMeasure::dirac(&[0.0, 1.0])).is_err());
}

#[test]
fn no_mean_cost_keeps_b_zero() {
    let co = LqCoefficients { b1: 0.1, b2: 1.0, sigma0: 0.3, sigma2: 0.4, f2: 1.0, g1: 1.0, g1_bar: -1.0, ..Default::default() };
    let sol = solve_riccati(&co, 1.0, 100).unwrap();
    assert!((0..=100).all(|k| sol.node(k)[1] == 0.0));
}

#[test]
fn blow_up_is_reported() {
    let co = LqCoefficients { sigma2: 1.0, f2: 0.1, g1: -1.0, ..Default::default() };
    assert!(matches!(solve_riccati(&co, 1.0, 20), Err(crate::Error::RiccatiBlowUp { .. })));
    assert!(solve_riccati(&standard(), 1.0, 5).is_err());
}

#[test]
fn hjb_residual_vanishes() {
    let sol = solve_riccati(&standard(), 1.0, 2000).unwrap();
    let mu = EmpiricalMeasure::from_flat(1, vec![-0.3, 0.2, 0.9, 1.4, 0.0]).unwrap();
    for t in [0.0, 0.1234, 0.5, 0.777, 1.0] {
        let r = hjb_residual(&sol, t, &mu).unwrap();
        assert!(r.abs() < 1e-8, "t = {t}: {r}");
    }
}

#[test]
fn nu_moments_agree() {
    let co = standard();
    let a = co.nu_moments_closed().unwrap();
    let b = co.nu_moments_quadrature(8).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-14);
    let (m, se) = co.nu_moments_mc(20_000, 3).unwrap();
    for i in 0..4 {
        assert!((m.mean[i] - a.mean[i]).abs() <= 3.0 * se.mean[i] + 1e-15);
        for k in 0..4 {
            assert!((m.gram[i][k] - a.gram[i][k]).abs() <= 3.0 * se.gram[i][k] + 1e-15);
        }
    }
    assert_eq!(a.table().len(), 16);
    let normal = LqCoefficients {
        jumps: Some(LqJumps { marks: MarkLaw::Normal { mean: vec![0.2], std: vec![0.5] }, ..co.jumps.clone().unwrap() }),
        ..co
    };
    let c = normal.nu_moments_closed().unwrap();
    let q = normal.nu_moments_quadrature(8).unwrap();
    assert!(c.max_abs_diff(&q) < 1e-10);
}

#[test]
fn mean_dynamics_matches_closed_loop_ensemble() {
    let co = standard();
    let sol = Arc::new(solve_riccati(&co, 1.0, 400).unwrap());
    let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
    let path = mean_dynamics(&sol, 0.5, &grid).unwrap();
    let init = InitialLaw::Normal { mean: vec![0.5], std: vec![0.4] };
    let model = LqModel::new(co, Policy::Optimal(sol)).unwrap();
    let spec = crate::sim::JumpDiffusionSpec::new(Arc::new(model), init).unwrap();
    let b = crate::sim::simulate_jump_diffusion(&spec, 20_000, &grid, 5).unwrap();
    let (m, se) = mean_se(b.values(200));
    assert!((m - path[200]).abs() <= 3.0 * se + 0.01, "{m} {} {se}", path[200]);
}

#[test]
fn zero_cost_is_zero() {
    let co = LqCoefficients { f1: 0.0, f1_bar: 0.0, f2: 0.0, g1: 0.0, g1_bar: 0.0, ..decoupled() };
    let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
    for pol in [Policy::zero(), Policy::Affine([1.0, 2.0, 3.0])] {
        let c = evaluate_cost(&co, &pol, &InitialLaw::Point { at: vec![1.0] }, 50, &g, 1).unwrap();
        assert_eq!((c.j, c.se), (0.0, 0.0));
    }
}

#[test]
fn deterministic_cost_matches_ode_oracle() {
    let co = LqCoefficients { b0: 0.3, b1: -0.5, b1_bar: 0.2, b2: 1.0, f1: 1.0, f1_bar: 0.5, f2: 0.5, g1: 1.0, g1_bar: 0.5, ..Default::default() };
    let sol = Arc::new(solve_riccati(&co, 1.0, 4000).unwrap());
    let x0 = 1.2;
    // direct ODE for the state and the accumulated cost under the optimal feedback
    let pol = Policy::Optimal(sol.clone());
    let mut f = |t: f64, y: &[f64; 2]| {
        let a = pol.eval(t, y[0], y[0]);
        let dx = co.b0 + (co.b1 + co.b1_bar) * y[0] + co.b2 * a;
        [dx, (co.f1 + co.f1_bar) * y[0] * y[0] + co.f2 * a * a]
    };
    let mut y = [x0, 0.0];
    let n = 4000;
    for k in 0..n {
        y = rk4_step(&mut f, k as f64 / n as f64, y, 1.0 / n as f64);
    }
    let oracle = y[1] + (co.g1 + co.g1_bar) * y[0] * y[0];
    let v0 = value_function(&sol, 0.0, &EmpiricalMeasure::dirac(&[x0])).unwrap();
    assert!((oracle - v0).abs() < 1e-8, "{oracle} {v0}");
    let g = TimeGrid::new(0.0, 1.0, 4000).unwrap();
    let c = evaluate_cost(&co, &pol, &InitialLaw::Point { at: vec![x0] }, 1, &g, 1).unwrap();
    assert!((c.j - oracle).abs() < 2e-3 * oracle.abs(), "{} {oracle}", c.j);
    // a zero policy costs more here
    let z = evaluate_cost(&co, &Policy::zero(), &InitialLaw::Point { at: vec![x0] }, 1, &g, 1).unwrap();
    assert!(c.j < z.j);
}

#[test]
fn optimality_small() {
    let co = standard();
    let sol = Arc::new(solve_riccati(&co, 1.0, 200).unwrap());
    let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let init = InitialLaw::Normal { mean: vec![0.5], std: vec![0.4] };
    let r = verify_optimality(&co, sol.clone(), 3, 0.2, &init, 2000, &g, 7).unwrap();
    assert!(r.all_pass, "{r:?}");
    assert!(r.perturbations.iter().all(|p| p.gap > 0.0));
    let r0 = verify_optimality(&co, sol, 2, 0.0, &init, 500, &g, 7).unwrap();
    assert!(r0.perturbations.iter().all(|p| p.gap == 0.0 && p.gap_double == 0.0));
    assert_eq!(r0.gap_ratio, None);
}
