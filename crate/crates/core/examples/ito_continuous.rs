//! Brownian motion from the origin, Phi(mu) = <x^2, mu>: the flow gains exactly t.

use std::sync::Arc;

use measure_flow::functional::CylindricalFunctional;
use measure_flow::ito::verify_general;
use measure_flow::sim::{simulate_jump_diffusion, AffineModel, InitialLaw, JumpDiffusionSpec, TimeGrid};

fn main() -> measure_flow::Result<()> {
    let model = AffineModel::scalar(0.0, 0.0, 0.0, 1.0, 0.0, None)?;
    let spec = JumpDiffusionSpec::new(Arc::new(model), InitialLaw::Point { at: vec![0.0] })?;
    let grid = TimeGrid::new(0.0, 1.0, 200)?;
    let bundle = simulate_jump_diffusion(&spec, 20_000, &grid, 1)?;
    let phi = CylindricalFunctional::moment_1d(2);

    let rep = verify_general(&phi, &bundle, 0, grid.n_steps())?;
    println!("Phi(mu_1) - Phi(mu_0) = {:.5} +- {:.5}", rep.lhs, rep.lhs_se);
    println!("drift term           = {:.5}", rep.terms.drift_diffusion_integral);
    println!("quadratic variation  = {:.5}", rep.terms.quadratic_variation_term);
    println!("residual             = {:.2e} (band {:.2e})", rep.residual, rep.band(5.0));

    // halves of the window add up to the whole
    let mid = grid.n_steps() / 2;
    let a = verify_general(&phi, &bundle, 0, mid)?;
    let b = verify_general(&phi, &bundle, mid, grid.n_steps())?;
    println!("split windows: {:.5} + {:.5} = {:.5}", a.lhs, b.lhs, a.lhs + b.lhs);
    Ok(())
}
