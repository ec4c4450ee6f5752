//! Scenario files, one schema per command.

use serde::{Deserialize, Serialize};

use crate::functional::CylindricalFunctional;
use crate::ito::SpaceGrid;
use crate::lq::LqCoefficients;
use crate::mv::MvParams;
use crate::sim::{AffineModel, IdiosyncraticEta, InitialLaw};

fn zero() -> f64 {
    0.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItoConfig {
    pub model: AffineModel,
    pub phi: CylindricalFunctional,
    pub initial: InitialLaw,
    pub particles: usize,
    pub steps: usize,
    #[serde(default = "zero")]
    pub t0: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Node indices `[t, s]`; the whole grid by default.
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    /// Weak-error constant in the residual band `3 (SE + c_weak dt)`.
    #[serde(default = "default_c_weak")]
    pub c_weak: f64,
    /// Exact value of the left side, checked within `3 SE + c_weak dt` when given.
    #[serde(default)]
    pub lhs_expected: Option<f64>,
    /// Fresh marks per particle and node for the generator form (verify-jump only).
    #[serde(default = "one")]
    pub mark_mc: usize,
}

fn default_c_weak() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonJumpConfig {
    pub time: f64,
    pub size: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaConfig {
    None,
    Deterministic {
        #[serde(default)]
        jumps: Vec<CommonJumpConfig>,
        rate: Vec<f64>,
    },
    Idiosyncratic(IdiosyncraticEta),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularConfig {
    pub dynamics: AffineModel,
    pub lambda: Vec<f64>,
    pub eta: EtaConfig,
    pub phi: CylindricalFunctional,
    pub initial: InitialLaw,
    pub particles: usize,
    pub steps: usize,
    #[serde(default = "zero")]
    pub t0: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default = "zero")]
    pub c_weak: f64,
    /// Absolute residual tolerance for deterministic scenarios; overrides the statistical band.
    #[serde(default)]
    pub exact_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpFileConfig {
    pub model: AffineModel,
    pub phi: CylindricalFunctional,
    pub initial: InitialLaw,
    pub space: SpaceGrid,
    pub particles: usize,
    pub steps: usize,
    #[serde(default = "zero")]
    pub t0: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub mark_mc: usize,
    #[serde(default = "one")]
    pub pde_substeps: usize,
    #[serde(default = "one")]
    pub windows: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveLqConfig {
    pub coefficients: LqCoefficients,
    pub horizon: f64,
    pub steps: usize,
    #[serde(default = "default_cf_tol")]
    pub closed_form_tol: f64,
    #[serde(default = "default_ratio")]
    pub halving_ratio: [f64; 2],
    #[serde(default = "default_hjb_tol")]
    pub hjb_tol: f64,
    /// Cloud at which the HJB residual is evaluated.
    #[serde(default = "default_cloud")]
    pub hjb_cloud: Vec<f64>,
}

fn default_cf_tol() -> f64 {
    1e-8
}

fn default_ratio() -> [f64; 2] {
    [8.0, 32.0]
}

fn default_hjb_tol() -> f64 {
    1e-6
}

fn default_cloud() -> Vec<f64> {
    vec![-1.0, -0.2, 0.3, 0.9, 2.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqOptimalityConfig {
    pub coefficients: LqCoefficients,
    pub horizon: f64,
    #[serde(default = "default_riccati_steps")]
    pub riccati_steps: usize,
    pub initial: InitialLaw,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_k")]
    pub perturbations: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_gap_ratio")]
    pub gap_ratio: [f64; 2],
    /// Allowance `c_dt dt` in the value match.
    #[serde(default = "default_c_dt")]
    pub c_dt: f64,
}

fn default_riccati_steps() -> usize {
    2000
}

fn default_k() -> usize {
    20
}

fn default_eps() -> f64 {
    0.1
}

fn default_gap_ratio() -> [f64; 2] {
    [2.8, 5.2]
}

fn default_c_dt() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvConfig {
    pub params: MvParams,
    pub initial: InitialLaw,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_region_tol")]
    pub tol: f64,
    #[serde(default)]
    pub perturbation: [f64; 3],
    #[serde(default = "default_c_dt")]
    pub c_dt: f64,
    /// Also write the full paths (`paths.bin`); simulate-mv only.
    #[serde(default)]
    pub write_paths: bool,
}

fn default_region_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepMethodConfig {
    General,
    JumpCorollary { mark_mc: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: AffineModel,
    pub phi: CylindricalFunctional,
    pub initial: InitialLaw,
    #[serde(default = "zero")]
    pub t0: f64,
    pub horizon: f64,
    pub particles: Vec<usize>,
    pub steps: Vec<usize>,
    pub seeds: Vec<u64>,
    pub method: SweepMethodConfig,
    #[serde(default)]
    pub slope_n_range: Option<[f64; 2]>,
    #[serde(default)]
    pub slope_dt_range: Option<[f64; 2]>,
}
