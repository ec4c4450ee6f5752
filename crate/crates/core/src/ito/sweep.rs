use serde::Serialize;

use super::{ItoAccumulator, ItoReport};
use crate::error::{Error, Result};
use crate::functional::CylindricalFunctional;
use crate::numeric::{linear_fit, mean};
use crate::sim::{run_jump_diffusion, JumpDiffusionSpec, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    General,
    JumpCorollary { mark_mc: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub particles: usize,
    pub steps: usize,
    pub dt: f64,
    pub seeds: usize,
    pub mean_residual: f64,
    /// Root mean square of the residual over seeds.
    pub rms_residual: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Slope of log rms residual against log N at the finest time step.
    pub slope_n: Option<f64>,
    /// Slope of log rms residual against log dt at the largest N (first order gives +1).
    pub slope_dt: Option<f64>,
    /// Largest bias per unit dt not explained by 3 standard errors of the seed mean.
    pub c_weak: f64,
}

/// Runs `method` on `phi` over the whole horizon of the spec for every (N, steps, seed).
#[allow(clippy::too_many_arguments)]
pub fn convergence_sweep(
    phi: &CylindricalFunctional,
    spec: &JumpDiffusionSpec,
    t0: f64,
    t_end: f64,
    n_list: &[usize],
    steps_list: &[usize],
    seeds: &[u64],
    method: SweepMethod,
) -> Result<SweepTable> {
    convergence_sweep_with(n_list, steps_list, seeds, |n, steps, seed| {
        let grid = TimeGrid::new(t0, t_end, steps)?;
        let mut acc = match method {
            SweepMethod::General => ItoAccumulator::general(phi.clone(), 0, grid.n_steps()),
            SweepMethod::JumpCorollary { mark_mc } => {
                ItoAccumulator::jump_corollary(phi.clone(), spec, 0, grid.n_steps(), mark_mc)?
            }
        };
        run_jump_diffusion(spec, n, &grid, seed, &mut acc)?;
        acc.report()
    })
}

/// Same table for any report producer.
pub fn convergence_sweep_with<F>(n_list: &[usize], steps_list: &[usize], seeds: &[u64], mut run: F) -> Result<SweepTable>
where
    F: FnMut(usize, usize, u64) -> Result<ItoReport>,
{
    if n_list.is_empty() || steps_list.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("sweep lists must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &steps in steps_list {
        for &n in n_list {
            let mut res = Vec::with_capacity(seeds.len());
            let mut ses = Vec::with_capacity(seeds.len());
            let mut dt = 0.0;
            for &seed in seeds {
                let r = run(n, steps, seed)?;
                res.push(r.residual);
                ses.push(r.residual_se);
                dt = r.max_dt;
            }
            let sq: Vec<f64> = res.iter().map(|r| r * r).collect();
            rows.push(SweepRow {
                particles: n,
                steps,
                dt,
                seeds: seeds.len(),
                mean_residual: mean(&res),
                rms_residual: mean(&sq).sqrt(),
                mean_se: mean(&ses),
            });
        }
    }
    let finest = *steps_list.iter().max().unwrap();
    let largest = *n_list.iter().max().unwrap();
    let slope_n = fit(rows.iter().filter(|r| r.steps == finest), |r| r.particles as f64);
    let slope_dt = fit(rows.iter().filter(|r| r.particles == largest), |r| r.dt);
    let c_weak = rows
        .iter()
        .map(|r| {
            let noise = 3.0 * r.mean_se / (r.seeds as f64).sqrt();
            (r.mean_residual.abs() - noise).max(0.0) / r.dt
        })
        .fold(0.0, f64::max);
    Ok(SweepTable { rows, slope_n, slope_dt, c_weak })
}

fn fit<'a>(rows: impl Iterator<Item = &'a SweepRow>, x: impl Fn(&SweepRow) -> f64) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        rows.filter(|r| r.rms_residual > 0.0).map(|r| (x(r).ln(), r.rms_residual.ln())).unzip();
    let distinct = xs.iter().any(|v| (v - xs[0]).abs() > 1e-12);
    (xs.len() >= 2 && distinct).then(|| linear_fit(&xs, &ys).0)
}

impl SweepTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["particles", "steps", "dt", "seeds", "mean_residual", "rms_residual", "mean_se"])?;
        for r in &self.rows {
            wr.write_record([
                r.particles.to_string(),
                r.steps.to_string(),
                format!("{:e}", r.dt),
                r.seeds.to_string(),
                format!("{:e}", r.mean_residual),
                format!("{:e}", r.rms_residual),
                format!("{:e}", r.mean_se),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
