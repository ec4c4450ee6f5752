//! Singular controls: a jump shared by every particle moves the law, independent jumps
//! do not.

use std::sync::Arc;

use measure_flow::functional::CylindricalFunctional;
use measure_flow::ito::{law_jump_bounds, verify_singular_corollary};
use measure_flow::sim::{
    simulate_singular, AffineModel, EtaScenario, IdiosyncraticEta, InitialLaw, SingularSpec, TimeGrid,
};

fn main() -> measure_flow::Result<()> {
    let phi = CylindricalFunctional::moment_1d(2);
    let still = Arc::new(AffineModel::scalar(0.0, 0.0, 0.0, 0.0, 0.0, None)?);
    let origin = InitialLaw::Point { at: vec![0.0] };

    let common = SingularSpec::new(
        still.clone(),
        vec![1.0],
        EtaScenario::Deterministic { jumps: vec![(0.5, vec![1.0])], rate: vec![0.0] },
        origin.clone(),
    )?;
    let grid = TimeGrid::with_mandatory(0.0, 1.0, 10, &common.common_times())?;
    let bundle = simulate_singular(&common, 100, &grid, 1)?;
    let r = verify_singular_corollary(&phi, &common, &bundle, 0, grid.n_steps())?;
    println!("common jump at t=0.5: lhs {} law-jump term {} residual {:e}", r.lhs, r.terms.law_jump_term, r.residual);
    for b in law_jump_bounds(&phi, &bundle)? {
        println!("  node {}: |jump| {:.3} <= bound {:.3}", b.node, b.law_jump, b.bound);
    }

    let spread = SingularSpec::new(
        still,
        vec![1.0],
        EtaScenario::Idiosyncratic(IdiosyncraticEta::UniformOnce { window: [0.0, 1.0], size: vec![1.0] }),
        origin,
    )?;
    let grid = TimeGrid::new(0.0, 1.0, 50)?;
    let bundle = simulate_singular(&spread, 10_000, &grid, 2)?;
    let r = verify_singular_corollary(&phi, &spread, &bundle, 0, grid.n_steps())?;
    println!(
        "independent jumps: lhs {:.4} law-jump term {} linear-derivative jumps {:.4} residual {:e}",
        r.lhs, r.terms.law_jump_term, r.terms.linear_derivative_jump_term, r.residual
    );
    Ok(())
}
