//! RMS residual over seeds as the particle count grows.

use std::sync::Arc;

use measure_flow::functional::CylindricalFunctional;
use measure_flow::ito::{convergence_sweep, SweepMethod};
use measure_flow::sim::{AffineModel, InitialLaw, JumpDiffusionSpec};

fn main() -> measure_flow::Result<()> {
    let spec = JumpDiffusionSpec::new(
        Arc::new(AffineModel::scalar(0.0, 0.0, 0.0, 1.0, 0.0, None)?),
        InitialLaw::Point { at: vec![0.0] },
    )?;
    let phi = CylindricalFunctional::moment_1d(2);
    let seeds: Vec<u64> = (1..=8).collect();
    let t = convergence_sweep(&phi, &spec, 0.0, 1.0, &[250, 1000, 4000, 16_000], &[50], &seeds, SweepMethod::General)?;
    t.write_csv(std::io::stdout())?;
    println!("slope vs N: {:.3}", t.slope_n.unwrap_or(f64::NAN));
    Ok(())
}
