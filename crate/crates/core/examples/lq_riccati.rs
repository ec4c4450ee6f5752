//! Riccati system of a linear-quadratic mean-field problem with jumps, against the
//! closed form available when the control does not enter the dynamics.

use measure_flow::lq::{
    decoupled_closed_form, hjb_residual, optimal_feedback, solve_riccati, value_function, JumpFn, LqCoefficients,
    LqJumps,
};
use measure_flow::measure::EmpiricalMeasure;
use measure_flow::sim::MarkLaw;

fn main() -> measure_flow::Result<()> {
    let decoupled = LqCoefficients {
        b0: 0.3,
        b1: -0.4,
        b1_bar: 0.25,
        sigma0: 0.3,
        sigma1: 0.2,
        f1: 1.0,
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
    };
    let mut errs = Vec::new();
    for steps in [10, 20, 40, 10_000] {
        let sol = solve_riccati(&decoupled, 1.0, steps)?;
        let exact = decoupled_closed_form(&decoupled, 1.0, 0.0)?;
        let err = sol.node(0).iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{steps:>6} steps: max error at t=0 {err:.3e}");
        errs.push(err);
    }
    println!("halving ratios {:.2} {:.2}", errs[0] / errs[1], errs[1] / errs[2]);

    // let the control act on the drift and the noise
    let controlled = LqCoefficients { b2: 1.0, sigma2: 0.2, f2: 0.5, ..decoupled };
    let sol = solve_riccati(&controlled, 1.0, 2000)?;
    let p = sol.at(0.0)?;
    println!("A B C D at 0: {:.4} {:.4} {:.4} {:.4}", p.a, p.b, p.c, p.d);
    let mu = EmpiricalMeasure::from_flat(1, vec![-0.5, 0.0, 0.4, 1.2])?;
    println!("V(0, mu) = {:.5}", value_function(&sol, 0.0, &mu)?);
    println!("HJB residual at t = 0.5: {:.2e}", hjb_residual(&sol, 0.5, &mu)?);
    println!("a*(0, x=1, mean=0.3) = {:.4}", optimal_feedback(&sol, 0.0, 1.0, 0.3)?);
    Ok(())
}
