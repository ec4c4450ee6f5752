//! Mean-variance problem with a singular control: closed-form value, reflected optimal
//! paths and the Monte Carlo cost.

use measure_flow::measure::EmpiricalMeasure;
use measure_flow::mv::{adjoint_along_path, closed_form_value, mc_value_check, region_classify, simulate_optimal, MvParams, MvRun};
use measure_flow::sim::{InitialLaw, TimeGrid};

fn main() -> measure_flow::Result<()> {
    let p = MvParams { r: 0.05, rho: 0.3, sigma: 0.3, beta: 1.0, lambda: 1.0, gamma: 2.0, horizon: 1.0 };
    let v = p.value();
    for t in [0.0, 0.5, 1.0] {
        println!("t={t}: A {:.4} C {:.4} D {:.4}  boundary at mean {:+.4}", v.a(t), v.c(t), v.d(t), p.boundary_offset(t));
    }
    let mu = EmpiricalMeasure::from_flat(1, vec![-0.1, 0.0, 0.1])?;
    println!("V(0, mu) = {:.5}", closed_form_value(&p, 0.0, &mu)?);
    for x in [-3.0, p.boundary_offset(0.0), 1.0] {
        println!("x = {x:+.3}: {:?}", region_classify(&p, 0.0, 0.0, x, 1e-9));
    }

    let init = InitialLaw::Uniform { low: vec![-0.1], high: vec![0.1] };
    let run = MvRun::new(init, 20_000, TimeGrid::new(0.0, 1.0, 200)?, 5);
    let (bundle, obs) = simulate_optimal(&p, &run)?;
    let eta = obs.eta_totals();
    println!(
        "mean eta {:.4}, particles pushed at {} of {} nodes, pushes off the boundary {}",
        eta.iter().sum::<f64>() / eta.len() as f64,
        obs.activity.iter().filter(|a| a.active > 0).count(),
        obs.activity.len(),
        obs.boundary_violations
    );
    let (_, adj) = adjoint_along_path(&p, &bundle, 1e-6)?;
    println!("adjoint terminal residual {:e}", adj.terminal_residual);

    let (rep, _) = mc_value_check(&p, &run, 10.0)?;
    println!("J = {:.4} +- {:.4}, V = {:.4}, gap {:+.4} (band {:.4})", rep.j_hat, rep.se, rep.value, rep.gap, rep.band);
    Ok(())
}
