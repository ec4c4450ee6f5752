//! Seeded interacting-particle simulation of jump-diffusions and singularly controlled dynamics.
//!
//! The engine streams one [`StepRecord`] per grid step to a [`StepObserver`]. A [`PathBundle`]
//! is the observer that keeps everything; the verifiers are observers that keep only running
//! sums, so large ensembles never need the full path array.

mod bundle;
mod engine;
mod grid;
mod model;
#[cfg(test)]
mod tests;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bundle::{BundleFile, JumpKind, JumpLogEntry, PathBundle, Side};
pub use engine::{run_jump_diffusion, run_singular, simulate_jump_diffusion, simulate_singular};
pub use grid::TimeGrid;
pub use model::{
    AffineJump, AffineMatrix, AffineModel, AffineVector, Dynamics, Features, InitialLaw, JumpConfig, JumpModel,
    MarkLaw,
};

use crate::error::{Error, Result};

#[derive(Clone)]
pub struct JumpDiffusionSpec {
    pub model: Arc<dyn JumpModel>,
    pub initial: InitialLaw,
}

impl JumpDiffusionSpec {
    pub fn new(model: Arc<dyn JumpModel>, initial: InitialLaw) -> Result<Self> {
        initial.validate(model.dim())?;
        let rate = model.jump_rate();
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::Invalid(format!("jump rate {rate} must be finite and >= 0")));
        }
        if rate > 0.0 && model.mark_law().is_none() {
            return Err(Error::Invalid("positive jump rate without a mark law".into()));
        }
        Ok(JumpDiffusionSpec { model, initial })
    }
}

/// Idiosyncratic singular-control jumps: every particle draws its own jump times.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IdiosyncraticEta {
    /// Jumps of `size` at the arrivals of an independent Poisson clock per particle.
    Poisson { rate: f64, size: Vec<f64> },
    /// One jump of `size` at an independent uniform time in `window`.
    UniformOnce { window: [f64; 2], size: Vec<f64> },
}

/// Projects a cloud back into an admissible region after each step.
pub trait Reflection: Send + Sync {
    /// Moves `states` (flat, N x d) in place and returns the per-particle eta increments
    /// (N x d, nonnegative) that produced the move through `lambda`.
    fn project(&self, t: f64, states: &mut [f64], dim: usize, lambda: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Clone, Default)]
pub enum EtaScenario {
    #[default]
    None,
    /// Jumps common to every particle at fixed times, plus an absolutely continuous rate.
    Deterministic { jumps: Vec<(f64, Vec<f64>)>, rate: Vec<f64> },
    Idiosyncratic(IdiosyncraticEta),
    Reflection(Arc<dyn Reflection>),
}

#[derive(Clone)]
pub struct SingularSpec {
    pub dynamics: Arc<dyn Dynamics>,
    pub lambda: Vec<f64>,
    pub eta: EtaScenario,
    pub initial: InitialLaw,
}

impl SingularSpec {
    pub fn new(dynamics: Arc<dyn Dynamics>, lambda: Vec<f64>, eta: EtaScenario, initial: InitialLaw) -> Result<Self> {
        let d = dynamics.dim();
        initial.validate(d)?;
        if lambda.len() != d {
            return Err(Error::Dimension { expected: d, found: lambda.len() });
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Invalid("lambda must be a nonnegative diagonal".into()));
        }
        let nonneg = |v: &[f64]| v.len() == d && v.iter().all(|x| *x >= 0.0 && x.is_finite());
        match &eta {
            EtaScenario::Deterministic { jumps, rate } => {
                if !nonneg(rate) || jumps.iter().any(|(_, s)| !nonneg(s)) {
                    return Err(Error::Invalid("eta increments must be nonnegative d-vectors".into()));
                }
            }
            EtaScenario::Idiosyncratic(IdiosyncraticEta::Poisson { rate, size }) => {
                if !(*rate >= 0.0) || !nonneg(size) {
                    return Err(Error::Invalid("eta increments must be nonnegative d-vectors".into()));
                }
            }
            EtaScenario::Idiosyncratic(IdiosyncraticEta::UniformOnce { window, size }) => {
                if !(window[0] < window[1]) || !nonneg(size) {
                    return Err(Error::Invalid("uniform_once needs window[0] < window[1] and size >= 0".into()));
                }
            }
            _ => {}
        }
        Ok(SingularSpec { dynamics, lambda, eta, initial })
    }

    /// Times of the common jumps (to be made grid nodes).
    pub fn common_times(&self) -> Vec<f64> {
        match &self.eta {
            EtaScenario::Deterministic { jumps, .. } => jumps.iter().map(|(t, _)| *t).collect(),
            _ => vec![],
        }
    }
}

/// One idiosyncratic jump at its exact time.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub particle: usize,
    pub time: f64,
    pub left: Vec<f64>,
    pub jump: Vec<f64>,
    /// eta increment when the jump is a singular-control jump.
    pub eta: Option<Vec<f64>>,
    /// Continuous quadratic variation accumulated since the previous event in the step.
    pub qv_before: Vec<f64>,
}

/// A jump shared by every particle at a node: the law itself jumps.
#[derive(Debug, Clone, Copy)]
pub struct CommonJump<'a> {
    pub left: &'a [f64],
    pub eta: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct RunInfo<'a> {
    pub grid: &'a TimeGrid,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub lambda: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepRecord<'a> {
    pub step: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Values at the start node (post-jump).
    pub start: &'a [f64],
    /// Values at the end node (post-jump).
    pub end: &'a [f64],
    /// Continuous quadratic variation over the step, N x d x d.
    pub qv: &'a [f64],
    /// Continuous eta increments over the step (rate part plus reflection pushes), N x d.
    pub eta_continuous: Option<&'a [f64]>,
    /// Idiosyncratic events sorted by (particle, time).
    pub events: &'a [JumpEvent],
    /// CSR offsets into `events`, length N + 1.
    pub offsets: &'a [usize],
    pub common: Option<CommonJump<'a>>,
}

impl<'a> StepRecord<'a> {
    pub fn end_left(&self) -> &'a [f64] {
        self.common.map_or(self.end, |c| c.left)
    }

    pub fn events_of(&self, i: usize) -> &'a [JumpEvent] {
        &self.events[self.offsets[i]..self.offsets[i + 1]]
    }
}

pub trait StepObserver {
    /// Called once with the initial node; `common` is set when the cloud was projected at t0.
    fn begin(&mut self, info: &RunInfo, left: &[f64], value: &[f64], common: Option<CommonJump>) -> Result<()>;
    fn step(&mut self, rec: &StepRecord) -> Result<()>;
}

/// Forwards to several observers in order.
pub struct Fanout<'a>(pub Vec<&'a mut dyn StepObserver>);

impl StepObserver for Fanout<'_> {
    fn begin(&mut self, info: &RunInfo, left: &[f64], value: &[f64], common: Option<CommonJump>) -> Result<()> {
        for o in self.0.iter_mut() {
            o.begin(info, left, value, common)?;
        }
        Ok(())
    }

    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        for o in self.0.iter_mut() {
            o.step(rec)?;
        }
        Ok(())
    }
}

/// Discards everything; useful for timing the simulator alone.
pub struct NullObserver;

impl StepObserver for NullObserver {
    fn begin(&mut self, _: &RunInfo, _: &[f64], _: &[f64], _: Option<CommonJump>) -> Result<()> {
        Ok(())
    }
    fn step(&mut self, _: &StepRecord) -> Result<()> {
        Ok(())
    }
}
