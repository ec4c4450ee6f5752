//! Term-by-term evaluation of the Ito formula along simulated measure flows.
//!
//! Three decompositions of `Phi(mu_s) - Phi(mu_t)` are available: the pathwise one
//! ([`verify_general`]), the generator form for jump-diffusions ([`verify_jump_corollary`]) and
//! the singular-control form ([`verify_singular_corollary`]). Each is an observer, so it can run
//! on a stored [`PathBundle`] or directly on the simulator stream.

mod accumulator;
mod fokker_planck;
mod sweep;

use std::io::Write;

use serde::Serialize;

pub use accumulator::ItoAccumulator;
pub use fokker_planck::{fokker_planck_consistency, FpConfig, FpReport, SpaceGrid};
pub use sweep::{convergence_sweep, convergence_sweep_with, SweepMethod, SweepRow, SweepTable};

use crate::error::{Error, Result};
use crate::functional::CylindricalFunctional;
use crate::sim::{JumpDiffusionSpec, PathBundle, SingularSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ItoTerms {
    pub drift_diffusion_integral: f64,
    pub quadratic_variation_term: f64,
    /// `int lambda d_mu Phi . d eta`; only the singular-control form fills this.
    pub singular_control_integral: f64,
    pub law_jump_term: f64,
    pub lions_jump_compensator: f64,
    pub linear_derivative_jump_term: f64,
}

impl ItoTerms {
    pub(crate) fn from_array(a: [f64; 6]) -> Self {
        ItoTerms {
            drift_diffusion_integral: a[0],
            quadratic_variation_term: a[1],
            singular_control_integral: a[2],
            law_jump_term: a[3],
            lions_jump_compensator: a[4],
            linear_derivative_jump_term: a[5],
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.drift_diffusion_integral,
            self.quadratic_variation_term,
            self.singular_control_integral,
            self.law_jump_term,
            self.lions_jump_compensator,
            self.linear_derivative_jump_term,
        ]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn abs_total(&self) -> f64 {
        self.as_array().iter().map(|v| v.abs()).sum()
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StepContribution {
    pub step: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub terms: ItoTerms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    General,
    JumpCorollary,
    SingularCorollary,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ItoReport {
    pub method: Method,
    pub t: f64,
    pub s: f64,
    pub particles: usize,
    pub lhs: f64,
    pub lhs_se: f64,
    pub terms: ItoTerms,
    pub residual: f64,
    pub residual_se: f64,
    pub max_dt: f64,
    #[serde(skip)]
    pub steps: Vec<StepContribution>,
}

impl ItoReport {
    /// `3 (SE + c_weak dt)` plus a round-off floor relative to the magnitudes involved.
    pub fn band(&self, c_weak: f64) -> f64 {
        3.0 * (self.residual_se + c_weak * self.max_dt) + self.roundoff()
    }

    pub fn roundoff(&self) -> f64 {
        1e-12 * (1.0 + self.lhs.abs() + self.terms.abs_total())
    }

    pub fn write_steps_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "step",
            "t_start",
            "t_end",
            "drift_diffusion_integral",
            "quadratic_variation_term",
            "singular_control_integral",
            "law_jump_term",
            "lions_jump_compensator",
            "linear_derivative_jump_term",
        ])?;
        for s in &self.steps {
            let mut row = vec![s.step.to_string(), format!("{:e}", s.t_start), format!("{:e}", s.t_end)];
            row.extend(s.terms.as_array().iter().map(|v| format!("{v:e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check(phi: &CylindricalFunctional, bundle: &PathBundle, t_index: usize, s_index: usize) -> Result<()> {
    if phi.dim() != bundle.dim() {
        return Err(Error::Dimension { expected: bundle.dim(), found: phi.dim() });
    }
    if t_index >= s_index {
        return Err(Error::Invalid(format!("need t_index < s_index, got {t_index} >= {s_index}")));
    }
    if s_index >= bundle.n_nodes() {
        return Err(Error::OutOfRange { index: s_index, len: bundle.n_nodes() });
    }
    Ok(())
}

/// Pathwise decomposition with empirical marginals in place of the laws.
pub fn verify_general(phi: &CylindricalFunctional, bundle: &PathBundle, t_index: usize, s_index: usize) -> Result<ItoReport> {
    check(phi, bundle, t_index, s_index)?;
    let mut acc = ItoAccumulator::general(phi.clone(), t_index, s_index);
    bundle.replay(&mut acc)?;
    acc.report()
}

/// Generator form for jump-diffusions; the jump integral uses `mark_mc` fresh marks per
/// particle and node.
pub fn verify_jump_corollary(
    phi: &CylindricalFunctional,
    spec: &JumpDiffusionSpec,
    bundle: &PathBundle,
    t_index: usize,
    s_index: usize,
    mark_mc: usize,
) -> Result<ItoReport> {
    check(phi, bundle, t_index, s_index)?;
    let mut acc = ItoAccumulator::jump_corollary(phi.clone(), spec, t_index, s_index, mark_mc)?;
    bundle.replay(&mut acc)?;
    acc.report()
}

/// Singular-control form. The left side starts from the left limit at `t`, so a common jump
/// at node `t` is part of the identity.
pub fn verify_singular_corollary(
    phi: &CylindricalFunctional,
    spec: &SingularSpec,
    bundle: &PathBundle,
    t_index: usize,
    s_index: usize,
) -> Result<ItoReport> {
    check(phi, bundle, t_index, s_index)?;
    let mut acc = ItoAccumulator::singular_corollary(phi.clone(), spec, t_index, s_index);
    bundle.replay(&mut acc)?;
    acc.report()
}

/// Law-jump size against its first-order bound at one common-jump node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpBound {
    pub node: usize,
    pub law_jump: f64,
    pub bound: f64,
}

/// For every common-jump node: `|Phi(mu_r) - Phi(mu_r-)|` and
/// `sup |d_mu Phi| * E|Delta X|`, the sup taken over the segment between the two clouds
/// (11 interpolation points).
pub fn law_jump_bounds(phi: &CylindricalFunctional, bundle: &PathBundle) -> Result<Vec<JumpBound>> {
    if phi.dim() != bundle.dim() {
        return Err(Error::Dimension { expected: bundle.dim(), found: phi.dim() });
    }
    let d = bundle.dim();
    let mut out = Vec::new();
    for node in bundle.common_nodes() {
        let l = bundle.left(node);
        let v = bundle.values(node);
        let law_jump = (phi.freeze_cloud(v).value - phi.freeze_cloud(l).value).abs();
        let mut sup: f64 = 0.0;
        let mut g = vec![0.0; d];
        for k in 0..=10 {
            let h = k as f64 / 10.0;
            let xh: Vec<f64> = l.iter().zip(v).map(|(a, b)| a + h * (b - a)).collect();
            let fr = phi.freeze_cloud(&xh);
            for x in xh.chunks(d) {
                phi.lions_at(&fr, x, &mut g);
                sup = sup.max(g.iter().map(|c| c * c).sum::<f64>().sqrt());
            }
        }
        let norms: Vec<f64> = l
            .chunks(d)
            .zip(v.chunks(d))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>().sqrt())
            .collect();
        out.push(JumpBound { node, law_jump, bound: sup * crate::numeric::mean(&norms) });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
