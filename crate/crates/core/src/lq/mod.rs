//! Linear-quadratic mean-field control with jumps.
//!
//! State equation `dX = (b0 + b1 X + bb1 m + b2 a) dt + (s0 + s1 X + sb1 m + s2 a) dW
//! + int (beta0 + beta1 X + bb1 m + beta2 a)(theta) N(dt, dtheta)` with `m = E[X]`, running cost
//! `f1 x^2 + fb1 m^2 + f2 a^2`, terminal cost `g1 x^2 + gb1 m^2`. The value function is
//! `A Var + B m^2 + C m + D` with `A..D` from a triangular Riccati system.

mod policy;
mod riccati;

use serde::{Deserialize, Serialize};

pub use policy::{
    evaluate_cost, evaluate_costs, verify_optimality, CostEstimate, LqModel, OptimalityReport, Perturbation, Policy,
};
pub use riccati::{
    decoupled_closed_form, hjb_residual, mean_dynamics, optimal_feedback, solve_riccati, value_function,
    RiccatiPoint, RiccatiSolution,
};

use crate::error::{Error, Result};
use crate::numeric::mean_se;
use crate::rng::{stream, DOMAIN_MARKS};
use crate::sim::MarkLaw;

/// A jump coefficient as a function of the mark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpFn {
    Constant(f64),
    /// `intercept + slope * theta`
    Linear { intercept: f64, slope: f64 },
}

impl Default for JumpFn {
    fn default() -> Self {
        JumpFn::Constant(0.0)
    }
}

impl JumpFn {
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            JumpFn::Constant(c) => c,
            JumpFn::Linear { intercept, slope } => intercept + slope * theta,
        }
    }

    fn parts(&self) -> (f64, f64) {
        match *self {
            JumpFn::Constant(c) => (c, 0.0),
            JumpFn::Linear { intercept, slope } => (intercept, slope),
        }
    }
}

/// `lambda <beta_i>` and `lambda <beta_i beta_j>` over the basis (1, x, m, a).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuMoments {
    pub mean: [f64; 4],
    pub gram: [[f64; 4]; 4],
}

impl NuMoments {
    /// The integrals the Riccati system consumes, by name.
    pub fn table(&self) -> Vec<(&'static str, f64)> {
        let (m, g) = (&self.mean, &self.gram);
        vec![
            ("2beta1+beta1^2", 2.0 * m[1] + g[1][1]),
            ("beta1*beta1_bar+beta1_bar", g[1][2] + m[2]),
            ("beta1", m[1]),
            ("beta1_bar", m[2]),
            ("beta1_bar^2", g[2][2]),
            ("beta0*beta1+beta0", g[0][1] + m[0]),
            ("beta0*beta1_bar", g[0][2]),
            ("beta0", m[0]),
            ("beta0^2", g[0][0]),
            ("beta2^2", g[3][3]),
            ("beta1*beta2+beta2", g[1][3] + m[3]),
            ("(beta1+beta1_bar)*beta2", g[1][3] + g[2][3]),
            ("beta2", m[3]),
            ("beta0*beta2", g[0][3]),
            ("(beta1+beta1_bar)^2", g[1][1] + 2.0 * g[1][2] + g[2][2]),
            ("beta0*(beta1+beta1_bar)", g[0][1] + g[0][2]),
        ]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..4 {
            d = d.max((self.mean[i] - other.mean[i]).abs());
            for j in 0..4 {
                d = d.max((self.gram[i][j] - other.gram[i][j]).abs());
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqJumps {
    pub rate: f64,
    pub marks: MarkLaw,
    #[serde(default)]
    pub beta0: JumpFn,
    #[serde(default)]
    pub beta1: JumpFn,
    #[serde(default)]
    pub beta1_bar: JumpFn,
    #[serde(default)]
    pub beta2: JumpFn,
    /// Numeric moment table used by the Riccati system instead of the closed form.
    #[serde(default)]
    pub moments: Option<NuMoments>,
}

impl LqJumps {
    pub fn betas(&self) -> [JumpFn; 4] {
        [self.beta0, self.beta1, self.beta1_bar, self.beta2]
    }

    /// `beta_i(theta)` over the basis (1, x, m, a).
    pub fn eval(&self, theta: f64) -> [f64; 4] {
        self.betas().map(|b| b.eval(theta))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqCoefficients {
    #[serde(default)]
    pub b0: f64,
    #[serde(default)]
    pub b1: f64,
    #[serde(default)]
    pub b1_bar: f64,
    #[serde(default)]
    pub b2: f64,
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default)]
    pub sigma1: f64,
    #[serde(default)]
    pub sigma1_bar: f64,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub f1: f64,
    #[serde(default)]
    pub f1_bar: f64,
    pub f2: f64,
    #[serde(default)]
    pub g1: f64,
    #[serde(default)]
    pub g1_bar: f64,
    #[serde(default)]
    pub jumps: Option<LqJumps>,
}

/// Drift and Gram coefficients with the jump moments folded in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effective {
    /// `b_i + lambda <beta_i>`
    pub c: [f64; 4],
    /// `sigma_i sigma_j + lambda <beta_i beta_j>`
    pub m: [[f64; 4]; 4],
}

fn mark_moments(law: &MarkLaw) -> Result<(f64, f64)> {
    if law.dim() != 1 {
        return Err(Error::Invalid("LQ marks must be one-dimensional".into()));
    }
    Ok(match law {
        MarkLaw::Uniform { low, high } => {
            let (a, b) = (low[0], high[0]);
            ((a + b) / 2.0, (a * a + a * b + b * b) / 3.0)
        }
        MarkLaw::Normal { mean, std } => (mean[0], mean[0] * mean[0] + std[0] * std[0]),
        MarkLaw::Constant { value } => (value[0], value[0] * value[0]),
    })
}

impl LqCoefficients {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.b0, self.b1, self.b1_bar, self.b2, self.sigma0, self.sigma1, self.sigma1_bar, self.sigma2, self.f1,
            self.f1_bar, self.f2, self.g1, self.g1_bar,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LQ coefficient".into()));
        }
        if self.f2 < 0.0 {
            return Err(Error::Invalid(format!("f2 = {} must be >= 0", self.f2)));
        }
        if let Some(j) = &self.jumps {
            j.marks.validate()?;
            if !(j.rate >= 0.0 && j.rate.is_finite()) {
                return Err(Error::Invalid("jump rate must be finite and >= 0".into()));
            }
            mark_moments(&j.marks)?;
        }
        Ok(())
    }

    pub fn drift_coefs(&self) -> [f64; 4] {
        [self.b0, self.b1, self.b1_bar, self.b2]
    }

    pub fn sigma_coefs(&self) -> [f64; 4] {
        [self.sigma0, self.sigma1, self.sigma1_bar, self.sigma2]
    }

    fn assemble(lam: f64, e1: [f64; 4], e2: [[f64; 4]; 4]) -> NuMoments {
        let mut n = NuMoments::default();
        for i in 0..4 {
            n.mean[i] = lam * e1[i];
            for j in 0..4 {
                n.gram[i][j] = lam * e2[i][j];
            }
        }
        n
    }

    /// Closed-form moments from the mark law's first two moments.
    pub fn nu_moments_closed(&self) -> Result<NuMoments> {
        let Some(j) = &self.jumps else { return Ok(NuMoments::default()) };
        let (m1, m2) = mark_moments(&j.marks)?;
        let p = j.betas().map(|b| b.parts());
        let mut e1 = [0.0; 4];
        let mut e2 = [[0.0; 4]; 4];
        for i in 0..4 {
            e1[i] = p[i].0 + p[i].1 * m1;
            for k in 0..4 {
                e2[i][k] = p[i].0 * p[k].0 + (p[i].0 * p[k].1 + p[i].1 * p[k].0) * m1 + p[i].1 * p[k].1 * m2;
            }
        }
        Ok(Self::assemble(j.rate, e1, e2))
    }

    /// Gauss-Legendre quadrature over the mark law.
    pub fn nu_moments_quadrature(&self, nodes: usize) -> Result<NuMoments> {
        let Some(j) = &self.jumps else { return Ok(NuMoments::default()) };
        mark_moments(&j.marks)?;
        let (th, w) = j.marks.quadrature_1d(nodes);
        let mut e1 = [0.0; 4];
        let mut e2 = [[0.0; 4]; 4];
        for (t, wt) in th.iter().zip(&w) {
            let b = j.eval(*t);
            for i in 0..4 {
                e1[i] += wt * b[i];
                for k in 0..4 {
                    e2[i][k] += wt * b[i] * b[k];
                }
            }
        }
        Ok(Self::assemble(j.rate, e1, e2))
    }

    /// Monte Carlo moments from `n` sampled marks: estimates and standard errors.
    pub fn nu_moments_mc(&self, n: usize, seed: u64) -> Result<(NuMoments, NuMoments)> {
        let Some(j) = &self.jumps else { return Ok((NuMoments::default(), NuMoments::default())) };
        mark_moments(&j.marks)?;
        let mut rng = stream(seed, DOMAIN_MARKS, u64::MAX);
        let mut th = [0.0];
        let samples: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                j.marks.sample(&mut rng, &mut th);
                j.eval(th[0])
            })
            .collect();
        let mut est = NuMoments::default();
        let mut se = NuMoments::default();
        for i in 0..4 {
            let (m, s) = mean_se(&samples.iter().map(|b| b[i]).collect::<Vec<_>>());
            est.mean[i] = j.rate * m;
            se.mean[i] = j.rate * s;
            for k in 0..4 {
                let (m, s) = mean_se(&samples.iter().map(|b| b[i] * b[k]).collect::<Vec<_>>());
                est.gram[i][k] = j.rate * m;
                se.gram[i][k] = j.rate * s;
            }
        }
        Ok((est, se))
    }

    /// Moments used by the Riccati system: the numeric table if given, else the closed form.
    pub fn nu_moments(&self) -> Result<NuMoments> {
        match self.jumps.as_ref().and_then(|j| j.moments) {
            Some(t) => Ok(t),
            None => self.nu_moments_closed(),
        }
    }

    pub fn effective(&self) -> Result<Effective> {
        let nu = self.nu_moments()?;
        let b = self.drift_coefs();
        let s = self.sigma_coefs();
        let mut e = Effective { c: [0.0; 4], m: [[0.0; 4]; 4] };
        for i in 0..4 {
            e.c[i] = b[i] + nu.mean[i];
            for k in 0..4 {
                e.m[i][k] = s[i] * s[k] + nu.gram[i][k];
            }
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests;
