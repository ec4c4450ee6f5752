//! Mean-variance singular control.
//!
//! Dynamics `dX = (r X + rho a) dt + sigma a dW + lambda d eta`, no running cost, terminal cost
//! `beta/2 (x - m)^2 - x`, proportional cost `gamma d eta`. The value is
//! `A Var + C m + D` with `B = 0`, and `eta` only acts where `gamma + lambda (2A (x - m) + C) = 0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{cloud_mean, cloud_mean_var, EmpiricalMeasure};
use crate::numeric::mean_se;
use crate::sim::{
    run_singular, CommonJump, Dynamics, EtaScenario, Features, InitialLaw, JumpModel, PathBundle, Reflection, RunInfo,
    SingularSpec, StepObserver, StepRecord, TimeGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvParams {
    pub r: f64,
    pub rho: f64,
    pub sigma: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    #[serde(alias = "T")]
    pub horizon: f64,
}

impl MvParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r, self.rho, self.sigma, self.beta, self.lambda, self.gamma, self.horizon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MV parameter".into()));
        }
        if !(self.sigma > 0.0 && self.beta > 0.0 && self.horizon > 0.0 && self.lambda >= 0.0) {
            return Err(Error::Invalid("need sigma > 0, beta > 0, horizon > 0, lambda >= 0".into()));
        }
        Ok(())
    }

    /// `rho^2 / sigma^2`
    pub fn k(&self) -> f64 {
        (self.rho / self.sigma).powi(2)
    }

    pub fn value(&self) -> MvValue {
        MvValue { p: *self }
    }

    /// Optimal feedback `-rho/sigma^2 (x - m) + rho/(beta sigma^2) e^{(k - r)(T - t)}`.
    pub fn feedback(&self, t: f64, x: f64, m: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        -self.rho / s2 * (x - m) + self.rho / (self.beta * s2) * ((self.k() - self.r) * (self.horizon - t)).exp()
    }

    /// `gamma + lambda d_mu V(t, mu)(x)`; the continuation region is `s > 0`.
    pub fn s(&self, t: f64, xbar: f64, x: f64) -> f64 {
        let v = self.value();
        self.gamma + self.lambda * (2.0 * v.a(t) * (x - xbar) + v.c(t))
    }

    /// Magnitude used to turn a relative tolerance on `s` into an absolute one.
    pub fn s_scale(&self, t: f64) -> f64 {
        (self.gamma.abs() + self.lambda * self.value().c(t).abs()).max(f64::MIN_POSITIVE)
    }

    /// `x - xbar` on the boundary `s = 0` (`lambda > 0`).
    pub fn boundary_offset(&self, t: f64) -> f64 {
        let v = self.value();
        (-self.gamma / self.lambda - v.c(t)) / (2.0 * v.a(t))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Invalid(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }
}

/// Closed-form coefficients of the value function.
#[derive(Debug, Clone, Copy)]
pub struct MvValue {
    p: MvParams,
}

impl MvValue {
    fn tau(&self, t: f64) -> f64 {
        self.p.horizon - t
    }

    pub fn a(&self, t: f64) -> f64 {
        0.5 * self.p.beta * ((2.0 * self.p.r - self.p.k()) * self.tau(t)).exp()
    }

    pub fn b(&self, _t: f64) -> f64 {
        0.0
    }

    pub fn c(&self, t: f64) -> f64 {
        -(self.p.r * self.tau(t)).exp()
    }

    /// `(1 - e^{k (T - t)}) / (2 beta)`
    pub fn d(&self, t: f64) -> f64 {
        -(self.p.k() * self.tau(t)).exp_m1() / (2.0 * self.p.beta)
    }

    pub fn da(&self, t: f64) -> f64 {
        -(2.0 * self.p.r - self.p.k()) * self.a(t)
    }

    pub fn db(&self, _t: f64) -> f64 {
        0.0
    }

    pub fn dc(&self, t: f64) -> f64 {
        -self.p.r * self.c(t)
    }

    pub fn dd(&self, t: f64) -> f64 {
        self.p.k() * (self.p.k() * self.tau(t)).exp() / (2.0 * self.p.beta)
    }

    /// Residuals of the four coefficient ODEs at `t`.
    pub fn ode_residuals(&self, t: f64) -> [f64; 4] {
        let (k, r) = (self.p.k(), self.p.r);
        let (a, b, c) = (self.a(t), self.b(t), self.c(t));
        [
            self.da(t) - (k - 2.0 * r) * a,
            self.db(t) - k * b * b / a + 2.0 * r * b,
            self.dc(t) + r * c - k * b / a,
            self.dd(t) - k * c * c / (4.0 * a),
        ]
    }

    /// `[A(T) - beta/2, B(T), C(T) + 1, D(T)]`
    pub fn terminal_residuals(&self) -> [f64; 4] {
        let t = self.p.horizon;
        [self.a(t) - 0.5 * self.p.beta, self.b(t), self.c(t) + 1.0, self.d(t)]
    }

    pub fn at_moments(&self, t: f64, mean: f64, var: f64) -> f64 {
        self.a(t) * var + self.b(t) * mean * mean + self.c(t) * mean + self.d(t)
    }
}

pub fn closed_form_value(params: &MvParams, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
    params.check_time(t)?;
    if mu.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: mu.dim() });
    }
    let (m, v) = mu.mean_and_variance();
    Ok(params.value().at_moments(t, m[0], v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Continuation,
    Boundary,
    /// `s < -tol`: the state violates `gamma + lambda d_mu V >= 0`.
    Action,
}

pub fn region_classify(params: &MvParams, t: f64, xbar: f64, x: f64, tol: f64) -> Region {
    let s = params.s(t, xbar, x);
    if s > tol {
        Region::Continuation
    } else if s >= -tol {
        Region::Boundary
    } else {
        Region::Action
    }
}

/// Closed-loop dynamics; `perturbation` adds `k0 + kx x + km m` to the optimal feedback.
pub struct MvDynamics {
    params: MvParams,
    perturbation: [f64; 3],
}

impl MvDynamics {
    pub fn new(params: MvParams, perturbation: [f64; 3]) -> Result<Self> {
        params.validate()?;
        Ok(MvDynamics { params, perturbation })
    }
}

impl Dynamics for MvDynamics {
    fn dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn control(&self, t: f64, x: &[f64], f: &Features, a: &mut [f64]) {
        let k = &self.perturbation;
        a[0] = self.params.feedback(t, x[0], f.mean[0]) + k[0] + k[1] * x[0] + k[2] * f.mean[0];
    }

    fn drift(&self, _t: f64, x: &[f64], a: &[f64], _f: &Features, out: &mut [f64]) {
        out[0] = self.params.r * x[0] + self.params.rho * a[0];
    }

    fn diffusion(&self, _t: f64, _x: &[f64], a: &[f64], _f: &Features, out: &mut [f64]) {
        out[0] = self.params.sigma * a[0];
    }
}

impl JumpModel for MvDynamics {}

/// Pushes particles with `s < 0` up to the boundary. The boundary moves with the mean, which
/// the push itself raises, so the post-push mean is solved for exactly on the sorted cloud.
pub struct MvReflection {
    params: MvParams,
    tol: f64,
    t0: f64,
}

impl MvReflection {
    /// `tol` is relative to [`MvParams::s_scale`].
    pub fn new(params: MvParams, tol: f64, t0: f64) -> Self {
        MvReflection { params, tol, t0 }
    }

    fn violators(&self, t: f64, states: &[f64]) -> (usize, f64, usize) {
        let m = cloud_mean(states, 1)[0];
        let tol = self.tol * self.params.s_scale(t);
        let mut count = 0;
        let mut worst = f64::INFINITY;
        let mut first = usize::MAX;
        for (i, x) in states.iter().enumerate() {
            let s = self.params.s(t, m, *x);
            if s < -tol {
                count += 1;
                first = first.min(i);
            }
            worst = worst.min(s);
        }
        (count, worst, first)
    }
}

impl Reflection for MvReflection {
    fn project(&self, t: f64, states: &mut [f64], dim: usize, lambda: &[f64]) -> Result<Vec<f64>> {
        if dim != 1 {
            return Err(Error::Dimension { expected: 1, found: dim });
        }
        let n = states.len();
        let mut push = vec![0.0; n];
        if t == self.t0 {
            let (count, worst, first) = self.violators(t, states);
            if count > 0 {
                return Err(Error::OutsideContinuation { particle: first, s: worst });
            }
            return Ok(push);
        }
        let lam = lambda[0];
        if lam == 0.0 {
            let (count, _, first) = self.violators(t, states);
            if count > 0 {
                return Err(Error::NoControlAuthority { t, particle: first });
            }
            return Ok(push);
        }
        let off = self.params.boundary_offset(t);
        let m = cloud_mean(states, 1)[0];
        if states.iter().all(|x| *x - m >= off) {
            return Ok(push);
        }
        let mut sorted = states.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        // upper[k] = sum of sorted[k..]
        let mut upper = vec![0.0; n + 1];
        for k in (0..n).rev() {
            upper[k] = upper[k + 1] + sorted[k];
        }
        let mut level = None;
        for k in 1..n {
            let mk = (upper[k] + k as f64 * off) / (n - k) as f64;
            if mk + off <= sorted[k] {
                level = Some(mk + off);
                break;
            }
        }
        let Some(b) = level else {
            let (count, worst, _) = self.violators(t, states);
            return Err(Error::Projection { t, violators: count, worst });
        };
        for (x, p) in states.iter_mut().zip(push.iter_mut()) {
            if *x < b {
                *p = (b - *x) / lam;
                *x = b;
            }
        }
        let (count, worst, _) = self.violators(t, states);
        if count > 0 {
            return Err(Error::Projection { t, violators: count, worst });
        }
        Ok(push)
    }
}

/// Simulation settings shared by the MV runs.
#[derive(Debug, Clone)]
pub struct MvRun {
    pub initial: InitialLaw,
    pub particles: usize,
    pub grid: TimeGrid,
    pub seed: u64,
    /// Region tolerance relative to `|gamma| + lambda |C(t)|`.
    pub tol: f64,
    pub perturbation: [f64; 3],
}

impl MvRun {
    pub fn new(initial: InitialLaw, particles: usize, grid: TimeGrid, seed: u64) -> Self {
        MvRun { initial, particles, grid, seed, tol: 1e-6, perturbation: [0.0; 3] }
    }

    fn spec(&self, params: &MvParams) -> Result<SingularSpec> {
        params.validate()?;
        if self.grid.t0() < 0.0 || self.grid.t_end() > params.horizon + 1e-12 {
            return Err(Error::Invalid("grid must lie inside [0, horizon]".into()));
        }
        let dynamics = Arc::new(MvDynamics::new(*params, self.perturbation)?);
        let refl = Arc::new(MvReflection::new(*params, self.tol, self.grid.t0()));
        SingularSpec::new(dynamics, vec![params.lambda], EtaScenario::Reflection(refl), self.initial.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EtaActivity {
    pub time: f64,
    /// Mean eta increment over the particles at this node.
    pub mass: f64,
    pub active: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionCounts {
    pub time: f64,
    pub continuation: usize,
    pub boundary: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointCheck {
    /// `max |p_T - (beta (X_T - m_T) - 1)|`
    pub terminal_residual: f64,
    /// Least-squares slope of `dp / dt` on `p` over reflection-free steps; the adjoint
    /// equation gives `-r`.
    pub drift_slope: f64,
    pub drift_slope_se: f64,
    pub expected_slope: f64,
    pub free_steps: usize,
}

/// Streams everything the MV checks need from a simulation.
pub struct MvObserver {
    params: MvParams,
    tol: f64,
    steps: usize,
    eta: Vec<f64>,
    pub activity: Vec<EtaActivity>,
    pub regions: Vec<RegionCounts>,
    /// Pushed particles whose post-push state is not on the boundary.
    pub boundary_violations: usize,
    terminal: Vec<f64>,
    terminal_residual: f64,
    num: Vec<f64>,
    den: Vec<f64>,
    free_steps: usize,
    initial: (f64, f64),
}

impl MvObserver {
    pub fn new(params: MvParams, tol: f64) -> Self {
        MvObserver {
            params,
            tol,
            steps: 0,
            eta: vec![],
            activity: vec![],
            regions: vec![],
            boundary_violations: 0,
            terminal: vec![],
            terminal_residual: 0.0,
            num: vec![],
            den: vec![],
            free_steps: 0,
            initial: (0.0, 0.0),
        }
    }

    fn node(&mut self, t: f64, values: &[f64], push: Option<&[f64]>) {
        let m = cloud_mean(values, 1)[0];
        let tol = self.tol * self.params.s_scale(t);
        let mut c = RegionCounts { time: t, continuation: 0, boundary: 0, action: 0 };
        let mut act = EtaActivity { time: t, mass: 0.0, active: 0 };
        for (i, x) in values.iter().enumerate() {
            let reg = region_classify(&self.params, t, m, *x, tol);
            match reg {
                Region::Continuation => c.continuation += 1,
                Region::Boundary => c.boundary += 1,
                Region::Action => c.action += 1,
            }
            if let Some(p) = push {
                if p[i] > 0.0 {
                    act.active += 1;
                    act.mass += p[i];
                    self.eta[i] += p[i];
                    if reg != Region::Boundary {
                        self.boundary_violations += 1;
                    }
                }
            }
        }
        act.mass /= values.len() as f64;
        self.regions.push(c);
        self.activity.push(act);
    }

    fn adjoint(&self, t: f64, values: &[f64]) -> Vec<f64> {
        let v = self.params.value();
        let m = cloud_mean(values, 1)[0];
        let (a, c) = (v.a(t), v.c(t));
        values.iter().map(|x| 2.0 * a * (x - m) + c).collect()
    }

    /// Realized per-particle cost `beta/2 (X_T - m_T)^2 - X_T + gamma eta_T`.
    pub fn costs(&self) -> &[f64] {
        &self.terminal
    }

    pub fn eta_totals(&self) -> &[f64] {
        &self.eta
    }

    pub fn initial_moments(&self) -> (f64, f64) {
        self.initial
    }

    pub fn action_visits(&self) -> usize {
        self.regions.iter().map(|r| r.action).sum()
    }

    pub fn adjoint_check(&self) -> AdjointCheck {
        let dsum: f64 = self.den.iter().sum();
        let slope = if dsum > 0.0 { self.num.iter().sum::<f64>() / dsum } else { 0.0 };
        let se = if dsum > 0.0 {
            let r2: f64 = self.num.iter().zip(&self.den).map(|(n, d)| (n - slope * d).powi(2)).sum();
            r2.sqrt() / dsum
        } else {
            f64::INFINITY
        };
        AdjointCheck {
            terminal_residual: self.terminal_residual,
            drift_slope: slope,
            drift_slope_se: se,
            expected_slope: -self.params.r,
            free_steps: self.free_steps,
        }
    }

    pub fn write_activity_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for a in &self.activity {
            wr.serialize(a)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_regions_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.regions {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

impl StepObserver for MvObserver {
    fn begin(&mut self, info: &RunInfo, _left: &[f64], value: &[f64], common: Option<CommonJump>) -> Result<()> {
        if info.dim != 1 {
            return Err(Error::Dimension { expected: 1, found: info.dim });
        }
        self.steps = info.grid.n_steps();
        self.eta = vec![0.0; info.n];
        self.num = vec![0.0; info.n];
        self.den = vec![0.0; info.n];
        let (m, v) = cloud_mean_var(value, 1);
        self.initial = (m[0], v);
        self.node(info.grid.t0(), value, common.map(|c| c.eta));
        Ok(())
    }

    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        let push = rec.eta_continuous;
        self.node(rec.t_end, rec.end, push);
        let free = push.is_none_or(|p| p.iter().all(|v| *v == 0.0));
        if free {
            let h = rec.t_end - rec.t_start;
            let p0 = self.adjoint(rec.t_start, rec.start);
            let p1 = self.adjoint(rec.t_end, rec.end);
            for i in 0..p0.len() {
                self.num[i] += (p1[i] - p0[i]) * p0[i];
                self.den[i] += h * p0[i] * p0[i];
            }
            self.free_steps += 1;
        }
        if rec.step + 1 == self.steps {
            let m = cloud_mean(rec.end, 1)[0];
            let p = self.adjoint(rec.t_end, rec.end);
            let beta = self.params.beta;
            self.terminal_residual = rec
                .end
                .iter()
                .zip(&p)
                .map(|(x, pt)| (pt - (beta * (x - m) - 1.0)).abs())
                .fold(0.0, f64::max);
            self.terminal = rec
                .end
                .iter()
                .zip(&self.eta)
                .map(|(x, e)| 0.5 * beta * (x - m).powi(2) - x + self.params.gamma * e)
                .collect();
        }
        Ok(())
    }
}

/// Runs the reflected optimal dynamics through `obs`.
pub fn run_optimal(params: &MvParams, run: &MvRun, obs: &mut dyn StepObserver) -> Result<()> {
    let spec = run.spec(params)?;
    run_singular(&spec, run.particles, &run.grid, run.seed, obs)
}

/// Full paths plus the streamed eta log and region counts.
pub fn simulate_optimal(params: &MvParams, run: &MvRun) -> Result<(PathBundle, MvObserver)> {
    let spec = run.spec(params)?;
    let bundle = crate::sim::simulate_singular(&spec, run.particles, &run.grid, run.seed)?;
    let mut obs = MvObserver::new(*params, run.tol);
    bundle.replay(&mut obs)?;
    Ok((bundle, obs))
}

/// `p_t = 2A(t)(X_t - m_t) + C(t)` at every node (N per node) and the adjoint checks.
pub fn adjoint_along_path(params: &MvParams, bundle: &PathBundle, tol: f64) -> Result<(Vec<Vec<f64>>, AdjointCheck)> {
    let mut obs = MvObserver::new(*params, tol);
    bundle.replay(&mut obs)?;
    let nodes = bundle.grid().nodes();
    let paths = (0..nodes.len()).map(|k| obs.adjoint(nodes[k], bundle.values(k))).collect();
    Ok((paths, obs.adjoint_check()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvValueReport {
    pub params: MvParams,
    pub particles: usize,
    pub steps: usize,
    pub max_dt: f64,
    pub j_hat: f64,
    pub se: f64,
    pub initial_mean: f64,
    pub initial_variance: f64,
    /// Closed-form value at the empirical initial cloud.
    pub value: f64,
    pub gap: f64,
    /// `3 se + c_dt max_dt`
    pub band: f64,
    pub within_band: bool,
    pub eta_mean_total: f64,
    pub eta_active_nodes: usize,
    pub boundary_violations: usize,
    pub action_visits: usize,
    pub adjoint: AdjointCheck,
}

/// Monte Carlo cost of the reflected optimal policy against the closed-form value at the
/// empirical initial law. `c_dt` scales the time-discretization allowance.
pub fn mc_value_check(params: &MvParams, run: &MvRun, c_dt: f64) -> Result<(MvValueReport, MvObserver)> {
    let t0 = run.grid.t0();
    params.check_time(t0)?;
    let mut obs = MvObserver::new(*params, run.tol);
    if run.grid.t_end() < params.horizon - 1e-12 {
        return Err(Error::Invalid("the value check needs a grid ending at the horizon".into()));
    }
    run_optimal(params, run, &mut obs)?;
    let (j_hat, se) = mean_se(obs.costs());
    let (m0, v0) = obs.initial_moments();
    let value = params.value().at_moments(t0, m0, v0);
    let max_dt = (0..run.grid.n_steps()).map(|k| run.grid.dt(k)).fold(0.0, f64::max);
    let gap = j_hat - value;
    let band = 3.0 * se + c_dt * max_dt;
    let rep = MvValueReport {
        params: *params,
        particles: run.particles,
        steps: run.grid.n_steps(),
        max_dt,
        j_hat,
        se,
        initial_mean: m0,
        initial_variance: v0,
        value,
        gap,
        band,
        within_band: gap.abs() <= band,
        eta_mean_total: obs.eta_totals().iter().sum::<f64>() / run.particles as f64,
        eta_active_nodes: obs.activity.iter().filter(|a| a.active > 0).count(),
        boundary_violations: obs.boundary_violations,
        action_visits: obs.action_visits(),
        adjoint: obs.adjoint_check(),
    };
    Ok((rep, obs))
}

/// The value check on a zero-length horizon: `(J, se, V(T, mu))` for a cloud drawn like the
/// simulator's initial cloud.
pub fn terminal_value_check(params: &MvParams, initial: &InitialLaw, particles: usize, seed: u64) -> Result<(f64, f64, f64)> {
    params.validate()?;
    let mut xs = vec![0.0; particles];
    for (i, x) in xs.iter_mut().enumerate() {
        let mut r = crate::rng::stream(seed, crate::rng::DOMAIN_PATH, i as u64);
        initial.sample(&mut r, i, std::slice::from_mut(x));
    }
    let (m, v) = cloud_mean_var(&xs, 1);
    let costs: Vec<f64> = xs.iter().map(|x| 0.5 * params.beta * (x - m[0]).powi(2) - x).collect();
    let (j, se) = mean_se(&costs);
    Ok((j, se, params.value().at_moments(params.horizon, m[0], v)))
}

#[cfg(test)]
mod tests;
