//! Optimal feedback against random affine perturbations, with common random numbers.

use std::sync::Arc;

use measure_flow::lq::{solve_riccati, verify_optimality, JumpFn, LqCoefficients, LqJumps};
use measure_flow::sim::{InitialLaw, MarkLaw, TimeGrid};

fn main() -> measure_flow::Result<()> {
    let co = LqCoefficients {
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
    };
    let sol = Arc::new(solve_riccati(&co, 1.0, 1000)?);
    let grid = TimeGrid::new(0.0, 1.0, 100)?;
    let init = InitialLaw::Normal { mean: vec![0.5], std: vec![0.4] };
    let r = verify_optimality(&co, sol.clone(), 8, 0.1, &init, 5000, &grid, 3)?;

    let p = sol.at(0.0)?;
    let (m, v) = (r.initial_mean, r.initial_variance);
    println!("J(a*) = {:.5} +- {:.5}, V(0) = {:.5}", r.j_star, r.se_star, p.a * v + p.b * m * m + p.c * m + p.d);
    for k in &r.perturbations {
        println!("  k={} J = {:.5}  gap {:+.2e}  gap at 2 eps {:+.2e}", k.index, k.j, k.gap, k.gap_double);
    }
    println!("eps-doubling gap ratio {:.3}, all pass: {}", r.gap_ratio.unwrap_or(f64::NAN), r.all_pass);
    Ok(())
}
