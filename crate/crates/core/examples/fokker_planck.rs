//! Density evolution on a grid against the particle generator, for unit-rate jumps with
//! Uniform(0,1) sizes.

use std::sync::Arc;

use measure_flow::functional::CylindricalFunctional;
use measure_flow::ito::{fokker_planck_consistency, FpConfig, SpaceGrid};
use measure_flow::sim::{AffineModel, InitialLaw, JumpDiffusionSpec, MarkLaw, TimeGrid};

fn main() -> measure_flow::Result<()> {
    let jumps = AffineModel::mark_jumps(1.0, MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] });
    let model = AffineModel::scalar(0.0, 0.0, 0.0, 0.4, 0.0, Some(jumps))?;
    let spec = JumpDiffusionSpec::new(Arc::new(model), InitialLaw::Uniform { low: vec![-0.5], high: vec![0.5] })?;
    let cfg = FpConfig {
        grid: TimeGrid::new(0.0, 0.5, 100)?,
        space: SpaceGrid { low: -3.0, high: 5.0, nodes: 401 },
        particles: 10_000,
        seed: 4,
        mark_mc: 2,
        pde_substeps: 4,
        windows: 5,
    };
    for (name, phi) in [("<x>", CylindricalFunctional::moment_1d(1)), ("<x^2>", CylindricalFunctional::moment_1d(2))] {
        let r = fokker_planck_consistency(&spec, &phi, &cfg)?;
        println!("{name}: PDE {:.4}  particles {:.4}  relative error {:.2e}", r.pde_rate, r.mc_rate, r.rel_error);
        for w in &r.windows {
            println!("  [{:.1}, {:.1}] {:.4} {:.4}", w.t_start, w.t_end, w.pde_rate, w.mc_rate);
        }
    }
    Ok(())
}
