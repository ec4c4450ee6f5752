use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{LqCoefficients, RiccatiSolution};
use crate::error::{Error, Result};
use crate::measure::cloud_mean_var;
use crate::numeric::{mean, mean_se};
use crate::rng::{stream, DOMAIN_POLICY};
use crate::sim::{
    run_jump_diffusion, CommonJump, Dynamics, Features, InitialLaw, JumpDiffusionSpec, JumpModel, MarkLaw, RunInfo,
    StepObserver, StepRecord, TimeGrid,
};

/// Feedback maps `a(t, x, m)`.
#[derive(Debug, Clone)]
pub enum Policy {
    Optimal(Arc<RiccatiSolution>),
    /// `k0 + kx x + km m`
    Affine([f64; 3]),
    /// Optimal feedback plus `eps (k0 + kx x + km m)`.
    Perturbed { sol: Arc<RiccatiSolution>, eps: f64, coefs: [f64; 3] },
}

impl Policy {
    pub fn zero() -> Self {
        Policy::Affine([0.0; 3])
    }

    /// Every policy here is affine in `(x, m)` at fixed `t`: `[k0, kx, km]`.
    pub fn affine_at(&self, t: f64) -> [f64; 3] {
        let opt = |sol: &RiccatiSolution| {
            let p = sol.at_clamped(t);
            [-p.y / (2.0 * p.u), -p.s / p.u, (p.s - p.z) / p.u]
        };
        match self {
            Policy::Optimal(sol) => opt(sol),
            Policy::Affine(k) => *k,
            Policy::Perturbed { sol, eps, coefs } => {
                let o = opt(sol);
                std::array::from_fn(|i| o[i] + eps * coefs[i])
            }
        }
    }

    pub fn eval(&self, t: f64, x: f64, m: f64) -> f64 {
        let k = self.affine_at(t);
        k[0] + k[1] * x + k[2] * m
    }
}

/// The LQ state equation closed with a feedback policy.
pub struct LqModel {
    coeffs: LqCoefficients,
    policy: Policy,
}

impl LqModel {
    pub fn new(coeffs: LqCoefficients, policy: Policy) -> Result<Self> {
        coeffs.validate()?;
        Ok(LqModel { coeffs, policy })
    }

    fn basis(&self, x: &[f64], a: &[f64], f: &Features) -> [f64; 4] {
        [1.0, x[0], f.mean[0], a[0]]
    }
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Dynamics for LqModel {
    fn dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn control(&self, t: f64, x: &[f64], f: &Features, a: &mut [f64]) {
        a[0] = self.policy.eval(t, x[0], f.mean[0]);
    }

    fn drift(&self, _t: f64, x: &[f64], a: &[f64], f: &Features, out: &mut [f64]) {
        out[0] = dot4(&self.coeffs.drift_coefs(), &self.basis(x, a, f));
    }

    fn diffusion(&self, _t: f64, x: &[f64], a: &[f64], f: &Features, out: &mut [f64]) {
        out[0] = dot4(&self.coeffs.sigma_coefs(), &self.basis(x, a, f));
    }
}

impl JumpModel for LqModel {
    fn jump_rate(&self) -> f64 {
        self.coeffs.jumps.as_ref().map_or(0.0, |j| j.rate)
    }

    fn mark_law(&self) -> Option<&MarkLaw> {
        self.coeffs.jumps.as_ref().map(|j| &j.marks)
    }

    fn jump_size(&self, _t: f64, x: &[f64], a: &[f64], f: &Features, mark: &[f64], out: &mut [f64]) {
        out[0] = match &self.coeffs.jumps {
            Some(j) => dot4(&j.eval(mark[0]), &self.basis(x, a, f)),
            None => 0.0,
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub j: f64,
    pub se: f64,
    pub initial_mean: f64,
    pub initial_variance: f64,
}

/// Per-particle cost with trapezoidal running cost over the grid nodes.
struct CostObserver<'a> {
    coeffs: &'a LqCoefficients,
    policy: &'a Policy,
    steps: usize,
    rate: Vec<f64>,
    cost: Vec<f64>,
    initial: (f64, f64),
}

impl CostObserver<'_> {
    fn rates(&self, t: f64, xs: &[f64]) -> Vec<f64> {
        let m = mean(xs);
        let c = self.coeffs;
        let k = self.policy.affine_at(t);
        xs.iter()
            .map(|x| {
                let a = k[0] + k[1] * x + k[2] * m;
                c.f1 * x * x + c.f1_bar * m * m + c.f2 * a * a
            })
            .collect()
    }
}

impl StepObserver for CostObserver<'_> {
    fn begin(&mut self, info: &RunInfo, _left: &[f64], value: &[f64], _c: Option<CommonJump>) -> Result<()> {
        self.steps = info.grid.n_steps();
        self.rate = self.rates(info.grid.t0(), value);
        self.cost = vec![0.0; info.n];
        let (m, v) = cloud_mean_var(value, 1);
        self.initial = (m[0], v);
        Ok(())
    }

    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        let dt = rec.t_end - rec.t_start;
        let next = self.rates(rec.t_end, rec.end);
        for ((c, a), b) in self.cost.iter_mut().zip(&self.rate).zip(&next) {
            *c += 0.5 * dt * (a + b);
        }
        self.rate = next;
        if rec.step + 1 == self.steps {
            let m = mean(rec.end);
            for (c, x) in self.cost.iter_mut().zip(rec.end) {
                *c += self.coeffs.g1 * x * x + self.coeffs.g1_bar * m * m;
            }
        }
        Ok(())
    }
}

/// Closed-loop simulation of `policy`; returns every particle's realized cost and the initial
/// (mean, variance).
pub fn evaluate_costs(
    coeffs: &LqCoefficients,
    policy: &Policy,
    initial: &InitialLaw,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(Vec<f64>, (f64, f64))> {
    let model = LqModel::new(coeffs.clone(), policy.clone())?;
    let spec = JumpDiffusionSpec::new(Arc::new(model), initial.clone())?;
    let mut obs = CostObserver { coeffs, policy, steps: 0, rate: vec![], cost: vec![], initial: (0.0, 0.0) };
    run_jump_diffusion(&spec, n, grid, seed, &mut obs)?;
    Ok((obs.cost, obs.initial))
}

pub fn evaluate_cost(
    coeffs: &LqCoefficients,
    policy: &Policy,
    initial: &InitialLaw,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<CostEstimate> {
    let (c, (m, v)) = evaluate_costs(coeffs, policy, initial, n, grid, seed)?;
    let (j, se) = mean_se(&c);
    Ok(CostEstimate { j, se, initial_mean: m, initial_variance: v })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Perturbation {
    pub index: usize,
    pub coefs: [f64; 3],
    pub j: f64,
    pub se: f64,
    /// `J(alpha_k) - J(alpha*)`
    pub gap: f64,
    /// Standard error of the paired (common random number) difference.
    pub gap_se: f64,
    /// `sqrt(se*^2 + se_k^2)`
    pub combined_se: f64,
    pub passes: bool,
    /// Gap at twice the magnitude.
    pub gap_double: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub eps: f64,
    pub j_star: f64,
    pub se_star: f64,
    pub perturbations: Vec<Perturbation>,
    /// Sum of gaps at `2 eps` over the sum at `eps`.
    pub gap_ratio: Option<f64>,
    pub all_pass: bool,
    pub initial_mean: f64,
    pub initial_variance: f64,
}

/// Compares the optimal feedback with `k` random affine detunings of size `eps` (and `2 eps`),
/// all simulated with the same seed.
#[allow(clippy::too_many_arguments)]
pub fn verify_optimality(
    coeffs: &LqCoefficients,
    sol: Arc<RiccatiSolution>,
    k: usize,
    eps: f64,
    initial: &InitialLaw,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<OptimalityReport> {
    if k == 0 {
        return Err(Error::Invalid("need at least one perturbation".into()));
    }
    let (star, (m0, v0)) = evaluate_costs(coeffs, &Policy::Optimal(sol.clone()), initial, n, grid, seed)?;
    let (j_star, se_star) = mean_se(&star);
    let mut perts = Vec::with_capacity(k);
    let (mut sum1, mut sum2) = (0.0, 0.0);
    for idx in 0..k {
        let mut rng = stream(seed, DOMAIN_POLICY, idx as u64);
        let coefs: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let run = |e: f64| {
            let p = Policy::Perturbed { sol: sol.clone(), eps: e, coefs };
            evaluate_costs(coeffs, &p, initial, n, grid, seed).map(|r| r.0)
        };
        let c1 = run(eps)?;
        let c2 = run(2.0 * eps)?;
        let (j, se) = mean_se(&c1);
        let diff: Vec<f64> = c1.iter().zip(&star).map(|(a, b)| a - b).collect();
        let (gap, gap_se) = mean_se(&diff);
        let diff2: Vec<f64> = c2.iter().zip(&star).map(|(a, b)| a - b).collect();
        let gap_double = mean(&diff2);
        let combined_se = (se_star * se_star + se * se).sqrt();
        sum1 += gap;
        sum2 += gap_double;
        perts.push(Perturbation {
            index: idx,
            coefs,
            j,
            se,
            gap,
            gap_se,
            combined_se,
            passes: j_star <= j + 3.0 * combined_se,
            gap_double,
        });
    }
    let gap_ratio = (sum1 != 0.0).then(|| sum2 / sum1);
    Ok(OptimalityReport {
        eps,
        j_star,
        se_star,
        all_pass: perts.iter().all(|p| p.passes),
        perturbations: perts,
        gap_ratio,
        initial_mean: m0,
        initial_variance: v0,
    })
}
