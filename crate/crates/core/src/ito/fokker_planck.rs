//! Explicit finite-difference Fokker-Planck solver for 1-d jump-diffusions with `beta = theta`,
//! compared against the particle generator estimate.

use serde::{Deserialize, Serialize};

use super::ItoAccumulator;
use crate::error::{Error, Result};
use crate::functional::CylindricalFunctional;
use crate::sim::{run_jump_diffusion, Features, JumpDiffusionSpec, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceGrid {
    pub low: f64,
    pub high: f64,
    pub nodes: usize,
}

impl SpaceGrid {
    pub fn dx(&self) -> f64 {
        (self.high - self.low) / (self.nodes - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.low + j as f64 * self.dx()
    }
}

#[derive(Debug, Clone)]
pub struct FpConfig {
    /// Particle grid; the PDE runs on the same nodes with `pde_substeps` substeps each.
    pub grid: TimeGrid,
    pub space: SpaceGrid,
    pub particles: usize,
    pub seed: u64,
    pub mark_mc: usize,
    pub pde_substeps: usize,
    /// Equal-length windows over the horizon.
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub pde_rate: f64,
    pub mc_rate: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpReport {
    pub windows: Vec<FpWindow>,
    /// Rates averaged over the whole horizon.
    pub pde_rate: f64,
    pub mc_rate: f64,
    pub rel_error: f64,
    pub max_window_rel_error: f64,
    pub mass_drift: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= 1e-12 {
        0.0
    } else {
        diff / b.abs().max(1e-300)
    }
}

struct Solver<'a> {
    spec: &'a JumpDiffusionSpec,
    space: SpaceGrid,
    xs: Vec<f64>,
    kernel: Vec<(usize, f64)>,
    rate: f64,
}

impl Solver<'_> {
    fn features(&self, p: &[f64]) -> Features {
        let dx = self.space.dx();
        let mass: f64 = p.iter().sum::<f64>() * dx;
        let mean = self.xs.iter().zip(p).map(|(x, q)| x * q).sum::<f64>() * dx / mass;
        let var = self.xs.iter().zip(p).map(|(x, q)| (x - mean).powi(2) * q).sum::<f64>() * dx / mass;
        let moments = self
            .spec
            .model
            .feature_polys()
            .iter()
            .map(|g| self.xs.iter().zip(p).map(|(x, q)| g.eval(&[*x]) * q).sum::<f64>() * dx / mass)
            .collect();
        Features { mean: vec![mean], variance: var, moments }
    }

    fn coefs(&self, t: f64, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = &self.spec.model;
        let f = self.features(p);
        let mut a = vec![0.0; m.control_dim()];
        let mut b = vec![0.0];
        let mut s = vec![0.0];
        let mut drift = Vec::with_capacity(self.xs.len());
        let mut diff = Vec::with_capacity(self.xs.len());
        for x in &self.xs {
            m.control(t, &[*x], &f, &mut a);
            m.drift(t, &[*x], &a, &f, &mut b);
            m.diffusion(t, &[*x], &a, &f, &mut s);
            drift.push(b[0]);
            diff.push(s[0] * s[0]);
        }
        (drift, diff)
    }

    fn check_cfl(&self, drift: &[f64], diff: &[f64], h: f64) -> Result<()> {
        let dx = self.space.dx();
        let bmax = drift.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let smax = diff.iter().fold(0.0_f64, |a, b| a.max(*b));
        let checks = [
            ("|b| dt / dx", bmax * h / dx, 1.0),
            ("sigma^2 dt / dx^2", smax * h / (dx * dx), 1.0),
            ("|b| dt / dx + sigma^2 dt / dx^2 + rate dt", bmax * h / dx + smax * h / (dx * dx) + self.rate * h, 1.0),
        ];
        for (bound, value, limit) in checks {
            if value > limit {
                return Err(Error::Cfl { bound: bound.into(), value, limit });
            }
        }
        Ok(())
    }

    fn step(&self, t: f64, p: &mut Vec<f64>, h: f64) -> Result<()> {
        let (b, s2) = self.coefs(t, p);
        self.check_cfl(&b, &s2, h)?;
        let dx = self.space.dx();
        let n = p.len();
        let at = |v: &[f64], j: isize| if j < 0 || j >= n as isize { 0.0 } else { v[j as usize] };
        let dd: Vec<f64> = s2.iter().zip(p.iter()).map(|(s, q)| s * q).collect();
        // upwind flux through the interface between j and j + 1, zero outside the grid
        let iface = |j: isize| -> f64 {
            let (l, r) = (at(&b, j), at(&b, j + 1));
            let v = if j < 0 { r } else if j + 1 >= n as isize { l } else { 0.5 * (l + r) };
            v.max(0.0) * at(p, j) + v.min(0.0) * at(p, j + 1)
        };
        let mut next = vec![0.0; n];
        for j in 0..n {
            let ji = j as isize;
            let div = (iface(ji) - iface(ji - 1)) / dx;
            let lap = (at(&dd, ji + 1) - 2.0 * dd[j] + at(&dd, ji - 1)) / (dx * dx);
            let mut conv = 0.0;
            for &(m, w) in &self.kernel {
                conv += w * at(p, ji - m as isize);
            }
            next[j] = p[j] + h * (-div + 0.5 * lap + self.rate * (conv - p[j]));
        }
        *p = next;
        Ok(())
    }

    fn phi(&self, phi: &CylindricalFunctional, p: &[f64]) -> f64 {
        let dx = self.space.dx();
        let m: Vec<f64> = phi
            .inner()
            .iter()
            .map(|g| self.xs.iter().zip(p).map(|(x, q)| g.eval(&[*x]) * q).sum::<f64>() * dx)
            .collect();
        phi.outer().eval(&m)
    }
}

/// Evolves the density by explicit finite differences and compares the rate of change of
/// `Phi` with the particle generator estimate on matched windows.
pub fn fokker_planck_consistency(spec: &JumpDiffusionSpec, phi: &CylindricalFunctional, cfg: &FpConfig) -> Result<FpReport> {
    let model = &spec.model;
    if model.dim() != 1 || phi.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: model.dim().max(phi.dim()) });
    }
    let space = cfg.space;
    if space.nodes < 3 || !(space.high > space.low) {
        return Err(Error::Invalid("space grid needs low < high and at least 3 nodes".into()));
    }
    if cfg.windows == 0 || cfg.pde_substeps == 0 || cfg.grid.n_steps() % cfg.windows != 0 {
        return Err(Error::Invalid("windows must divide the number of steps; substeps >= 1".into()));
    }
    let dx = space.dx();
    let xs: Vec<f64> = (0..space.nodes).map(|j| space.x(j)).collect();
    let rate = model.jump_rate();
    let mut kernel = Vec::new();
    if rate > 0.0 {
        let law = model.mark_law().ok_or_else(|| Error::Invalid("jumps without a mark law".into()))?;
        if law.dim() != 1 {
            return Err(Error::Invalid("marks must be one-dimensional".into()));
        }
        // beta(theta) = theta, checked at a few states
        let f = Features { mean: vec![0.0], variance: 1.0, moments: vec![0.0; model.feature_polys().len()] };
        let a = vec![0.0; model.control_dim()];
        let mut out = [0.0];
        for (x, th) in [(0.0, 0.3), (1.0, 0.7), (-2.0, 0.1)] {
            model.jump_size(0.0, &[x], &a, &f, &[th], &mut out);
            if (out[0] - th).abs() > 1e-12 {
                return Err(Error::Invalid("the Fokker-Planck check needs jump size equal to the mark".into()));
            }
        }
        let (lo, hi) = law.support_1d();
        if lo < 0.0 {
            return Err(Error::Invalid("mark support must be nonnegative on the lattice".into()));
        }
        let m0 = (lo / dx).ceil() as usize;
        let m1 = (hi / dx).floor() as usize;
        for m in m0..=m1 {
            let th = m as f64 * dx;
            let dens = law.density_1d(th).ok_or_else(|| Error::Invalid("mark law needs a density".into()))?;
            let end = (m == m0 && (th - lo).abs() < 1e-9 * dx) || (m == m1 && (hi - th).abs() < 1e-9 * dx);
            kernel.push((m, if end { 0.5 } else { 1.0 } * dens * dx));
        }
        let tot: f64 = kernel.iter().map(|k| k.1).sum();
        if !(tot > 0.0) {
            return Err(Error::Invalid("mark kernel has no mass on the space grid".into()));
        }
        kernel.iter_mut().for_each(|k| k.1 /= tot);
    }
    // cell averages of the initial density
    let mut p: Vec<f64> = xs
        .iter()
        .map(|x| {
            let sub = 8;
            (0..sub)
                .map(|k| spec.initial.density_1d(x - 0.5 * dx + (k as f64 + 0.5) * dx / sub as f64))
                .sum::<Option<f64>>()
                .map(|s| s / sub as f64)
        })
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::Invalid("initial law needs a density".into()))?;
    let mass0 = p.iter().sum::<f64>() * dx;
    if (mass0 - 1.0).abs() > 1e-3 {
        return Err(Error::MassDrift(mass0 - 1.0));
    }
    let solver = Solver { spec, space, xs, kernel, rate };

    let grid = &cfg.grid;
    let per = grid.n_steps() / cfg.windows;
    let mut phis = vec![solver.phi(phi, &p)];
    let mut mass_drift: f64 = 0.0;
    for k in 0..grid.n_steps() {
        let h = grid.dt(k) / cfg.pde_substeps as f64;
        for s in 0..cfg.pde_substeps {
            solver.step(grid.nodes()[k] + s as f64 * h, &mut p, h)?;
        }
        let mass = p.iter().sum::<f64>() * dx;
        mass_drift = mass_drift.max((mass - mass0).abs());
        if mass_drift > 1e-3 {
            return Err(Error::MassDrift(mass_drift));
        }
        if (k + 1) % per == 0 {
            phis.push(solver.phi(phi, &p));
        }
    }

    let mut acc = ItoAccumulator::jump_corollary(phi.clone(), spec, 0, grid.n_steps(), cfg.mark_mc)?;
    run_jump_diffusion(spec, cfg.particles, grid, cfg.seed, &mut acc)?;
    let rep = acc.report()?;
    let mut windows = Vec::with_capacity(cfg.windows);
    for w in 0..cfg.windows {
        let steps = &rep.steps[w * per..(w + 1) * per];
        let (ta, tb) = (steps[0].t_start, steps[per - 1].t_end);
        let mc: f64 = steps.iter().map(|s| s.terms.total()).sum::<f64>() / (tb - ta);
        let pde = (phis[w + 1] - phis[w]) / (tb - ta);
        windows.push(FpWindow { t_start: ta, t_end: tb, pde_rate: pde, mc_rate: mc, rel_error: rel(pde, mc) });
    }
    let span = grid.t_end() - grid.t0();
    let pde_rate = (phis[cfg.windows] - phis[0]) / span;
    let mc_rate = rep.terms.total() / span;
    Ok(FpReport {
        max_window_rel_error: windows.iter().map(|w| w.rel_error).fold(0.0, f64::max),
        windows,
        pde_rate,
        mc_rate,
        rel_error: rel(pde_rate, mc_rate),
        mass_drift,
    })
}
