//! Coefficient interfaces, initial and mark laws, and the JSON-configurable affine model.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{cloud_mean_var, cloud_moment};
use crate::numeric::gauss_legendre01;
use crate::polynomial::Polynomial;

/// Measure features a coefficient may read: mean vector, trace variance, declared moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    pub mean: Vec<f64>,
    pub variance: f64,
    pub moments: Vec<f64>,
}

impl Features {
    pub fn of_cloud(points: &[f64], dim: usize, polys: &[Polynomial]) -> Self {
        let (mean, variance) = cloud_mean_var(points, dim);
        let moments = polys.iter().map(|g| cloud_moment(points, dim, g)).collect();
        Features { mean, variance, moments }
    }
}

/// Drift, diffusion and (optional) feedback control of a particle.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;

    fn control_dim(&self) -> usize {
        0
    }

    /// Extra polynomial moments the coefficients read through `Features::moments`.
    fn feature_polys(&self) -> &[Polynomial] {
        &[]
    }

    fn control(&self, _t: f64, _x: &[f64], _f: &Features, _a: &mut [f64]) {}

    fn drift(&self, t: f64, x: &[f64], a: &[f64], f: &Features, out: &mut [f64]);

    /// Row-major d x d.
    fn diffusion(&self, t: f64, x: &[f64], a: &[f64], f: &Features, out: &mut [f64]);
}

/// Dynamics plus finite-activity jumps `beta(x, a, features, theta)` at total rate `jump_rate`.
pub trait JumpModel: Dynamics {
    fn jump_rate(&self) -> f64 {
        0.0
    }

    fn mark_law(&self) -> Option<&MarkLaw> {
        None
    }

    fn jump_size(&self, _t: f64, _x: &[f64], _a: &[f64], _f: &Features, _mark: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MarkLaw {
    Uniform { low: Vec<f64>, high: Vec<f64> },
    Normal { mean: Vec<f64>, std: Vec<f64> },
    Constant { value: Vec<f64> },
}

impl MarkLaw {
    pub fn dim(&self) -> usize {
        match self {
            MarkLaw::Uniform { low, .. } => low.len(),
            MarkLaw::Normal { mean, .. } => mean.len(),
            MarkLaw::Constant { value } => value.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            MarkLaw::Uniform { low, high } => {
                low.len() == high.len() && !low.is_empty() && low.iter().zip(high).all(|(a, b)| a < b)
            }
            MarkLaw::Normal { mean, std } => {
                mean.len() == std.len() && !mean.is_empty() && std.iter().all(|s| *s > 0.0)
            }
            MarkLaw::Constant { value } => !value.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("malformed mark law {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            MarkLaw::Uniform { low, high } => {
                for (o, (a, b)) in out.iter_mut().zip(low.iter().zip(high)) {
                    *o = a + (b - a) * rng.random::<f64>();
                }
            }
            MarkLaw::Normal { mean, std } => {
                for (o, (m, s)) in out.iter_mut().zip(mean.iter().zip(std)) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            MarkLaw::Constant { value } => out.copy_from_slice(value),
        }
    }

    /// Density of a one-dimensional mark law (`None` for atoms).
    pub fn density_1d(&self, theta: f64) -> Option<f64> {
        match self {
            MarkLaw::Uniform { low, high } => {
                Some(if theta >= low[0] && theta <= high[0] { 1.0 / (high[0] - low[0]) } else { 0.0 })
            }
            MarkLaw::Normal { mean, std } => {
                let z = (theta - mean[0]) / std[0];
                Some((-0.5 * z * z).exp() / (std[0] * (2.0 * std::f64::consts::PI).sqrt()))
            }
            MarkLaw::Constant { .. } => None,
        }
    }

    /// Interval carrying all (or, for normals, all but ~1e-15) of the mass.
    pub fn support_1d(&self) -> (f64, f64) {
        match self {
            MarkLaw::Uniform { low, high } => (low[0], high[0]),
            MarkLaw::Normal { mean, std } => (mean[0] - 8.0 * std[0], mean[0] + 8.0 * std[0]),
            MarkLaw::Constant { value } => (value[0], value[0]),
        }
    }

    /// Quadrature rule for a one-dimensional mark law: nodes and probability weights.
    pub fn quadrature_1d(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            MarkLaw::Constant { value } => (vec![value[0]], vec![1.0]),
            MarkLaw::Uniform { low, high } => {
                let (x, w) = gauss_legendre01(n);
                (x.iter().map(|s| low[0] + (high[0] - low[0]) * s).collect(), w)
            }
            MarkLaw::Normal { .. } => {
                // composite Gauss-Legendre on the truncated support
                let (lo, hi) = self.support_1d();
                let panels = 16;
                let (x, w) = gauss_legendre01(n.max(4));
                let h = (hi - lo) / panels as f64;
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                for p in 0..panels {
                    for (s, ws) in x.iter().zip(&w) {
                        let t = lo + h * (p as f64 + s);
                        nodes.push(t);
                        weights.push(ws * h * self.density_1d(t).unwrap());
                    }
                }
                let tot: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|v| *v /= tot);
                (nodes, weights)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Point { at: Vec<f64> },
    Normal { mean: Vec<f64>, std: Vec<f64> },
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Particle i starts at `points[i % len]`.
    Samples { points: Vec<Vec<f64>> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point { at } => at.len(),
            InitialLaw::Normal { mean, .. } => mean.len(),
            InitialLaw::Uniform { low, .. } => low.len(),
            InitialLaw::Samples { points } => points.first().map_or(0, |p| p.len()),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let d = self.dim();
        if d != dim {
            return Err(Error::Dimension { expected: dim, found: d });
        }
        let ok = match self {
            InitialLaw::Point { at } => at.iter().all(|x| x.is_finite()),
            InitialLaw::Normal { mean, std } => mean.len() == std.len() && std.iter().all(|s| *s >= 0.0),
            InitialLaw::Uniform { low, high } => low.len() == high.len() && low.iter().zip(high).all(|(a, b)| a <= b),
            InitialLaw::Samples { points } => {
                !points.is_empty() && points.iter().all(|p| p.len() == dim && p.iter().all(|x| x.is_finite()))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("malformed initial law {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, particle: usize, out: &mut [f64]) {
        match self {
            InitialLaw::Point { at } => out.copy_from_slice(at),
            InitialLaw::Normal { mean, std } => {
                for (o, (m, s)) in out.iter_mut().zip(mean.iter().zip(std)) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            InitialLaw::Uniform { low, high } => {
                for (o, (a, b)) in out.iter_mut().zip(low.iter().zip(high)) {
                    *o = a + (b - a) * rng.random::<f64>();
                }
            }
            InitialLaw::Samples { points } => out.copy_from_slice(&points[particle % points.len()]),
        }
    }

    /// One-dimensional density, for grid-based solvers.
    pub fn density_1d(&self, x: f64) -> Option<f64> {
        match self {
            InitialLaw::Normal { mean, std } if std[0] > 0.0 => {
                let z = (x - mean[0]) / std[0];
                Some((-0.5 * z * z).exp() / (std[0] * (2.0 * std::f64::consts::PI).sqrt()))
            }
            InitialLaw::Uniform { low, high } if high[0] > low[0] => {
                Some(if x >= low[0] && x <= high[0] { 1.0 / (high[0] - low[0]) } else { 0.0 })
            }
            _ => None,
        }
    }
}

/// Affine in (constant, state, mean): `c + M_x x + M_m xbar` for vectors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AffineVector {
    pub constant: Vec<f64>,
    #[serde(default)]
    pub state: Vec<Vec<f64>>,
    #[serde(default)]
    pub mean: Vec<Vec<f64>>,
}

/// Matrix-valued affine map: `S_0 + sum_j x_j S_j + sum_j xbar_j M_j`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AffineMatrix {
    pub constant: Vec<Vec<f64>>,
    #[serde(default)]
    pub state: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub mean: Vec<Vec<Vec<f64>>>,
}

/// `c + M_x x + M_m xbar + M_theta theta`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AffineJump {
    #[serde(default)]
    pub constant: Vec<f64>,
    #[serde(default)]
    pub state: Vec<Vec<f64>>,
    #[serde(default)]
    pub mean: Vec<Vec<f64>>,
    #[serde(default)]
    pub mark: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub rate: f64,
    pub marks: MarkLaw,
    pub size: AffineJump,
}

/// Drift, diffusion and jumps affine in the state and the ensemble mean.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(try_from = "AffineRaw", into = "AffineRaw")]
pub struct AffineModel {
    dim: usize,
    drift: AffineVector,
    diffusion: AffineMatrix,
    jumps: Option<JumpConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineRaw {
    dimension: usize,
    drift: AffineVector,
    diffusion: AffineMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    jumps: Option<JumpConfig>,
}

impl TryFrom<AffineRaw> for AffineModel {
    type Error = Error;
    fn try_from(r: AffineRaw) -> Result<Self> {
        AffineModel::new(r.dimension, r.drift, r.diffusion, r.jumps)
    }
}

impl From<AffineModel> for AffineRaw {
    fn from(m: AffineModel) -> Self {
        AffineRaw { dimension: m.dim, drift: m.drift, diffusion: m.diffusion, jumps: m.jumps }
    }
}

fn check_vec(v: &[f64], d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::Invalid(format!("{what}: expected length {d}, found {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

fn check_mat(m: &[Vec<f64>], rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.is_empty() {
        return Ok(());
    }
    if m.len() != rows {
        return Err(Error::Invalid(format!("{what}: expected {rows} rows, found {}", m.len())));
    }
    for r in m {
        check_vec(r, cols, what)?;
    }
    Ok(())
}

impl AffineModel {
    pub fn new(dim: usize, drift: AffineVector, diffusion: AffineMatrix, jumps: Option<JumpConfig>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        check_vec(&drift.constant, dim, "drift.constant")?;
        check_mat(&drift.state, dim, dim, "drift.state")?;
        check_mat(&drift.mean, dim, dim, "drift.mean")?;
        check_mat(&diffusion.constant, dim, dim, "diffusion.constant")?;
        if diffusion.constant.is_empty() {
            return Err(Error::Invalid("diffusion.constant: expected a d x d matrix".into()));
        }
        for (name, list) in [("diffusion.state", &diffusion.state), ("diffusion.mean", &diffusion.mean)] {
            if !list.is_empty() && list.len() != dim {
                return Err(Error::Invalid(format!("{name}: expected {dim} matrices")));
            }
            for m in list {
                check_mat(m, dim, dim, name)?;
            }
        }
        if let Some(j) = &jumps {
            if !(j.rate >= 0.0 && j.rate.is_finite()) {
                return Err(Error::Invalid(format!("jump rate {} must be finite and >= 0", j.rate)));
            }
            j.marks.validate()?;
            let q = j.marks.dim();
            if !j.size.constant.is_empty() {
                check_vec(&j.size.constant, dim, "jumps.size.constant")?;
            }
            check_mat(&j.size.state, dim, dim, "jumps.size.state")?;
            check_mat(&j.size.mean, dim, dim, "jumps.size.mean")?;
            check_mat(&j.size.mark, dim, q, "jumps.size.mark")?;
        }
        Ok(AffineModel { dim, drift, diffusion, jumps })
    }

    /// One-dimensional model `b0 + b1 x + bm xbar`, `sigma0 + s1 x`, and optional jumps.
    pub fn scalar(b0: f64, b1: f64, bm: f64, sigma0: f64, sigma1: f64, jumps: Option<JumpConfig>) -> Result<Self> {
        Self::new(
            1,
            AffineVector { constant: vec![b0], state: vec![vec![b1]], mean: vec![vec![bm]] },
            AffineMatrix { constant: vec![vec![sigma0]], state: vec![vec![vec![sigma1]]], mean: vec![] },
            jumps,
        )
    }

    /// Jumps of size `theta` (identity in the mark) at the given rate.
    pub fn mark_jumps(rate: f64, marks: MarkLaw) -> JumpConfig {
        let q = marks.dim();
        let mark = (0..q).map(|i| (0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        JumpConfig { rate, marks, size: AffineJump { constant: vec![], state: vec![], mean: vec![], mark } }
    }

    pub fn jumps(&self) -> Option<&JumpConfig> {
        self.jumps.as_ref()
    }

    pub fn drift_coefs(&self) -> &AffineVector {
        &self.drift
    }

    pub fn diffusion_coefs(&self) -> &AffineMatrix {
        &self.diffusion
    }

    /// True when the jump size is exactly the mark (needed by the density solver).
    pub fn jump_is_mark(&self) -> bool {
        match &self.jumps {
            None => true,
            Some(j) => {
                let zero = |m: &Vec<Vec<f64>>| m.iter().flatten().all(|v| *v == 0.0);
                let q = j.marks.dim();
                j.size.constant.iter().all(|v| *v == 0.0)
                    && zero(&j.size.state)
                    && zero(&j.size.mean)
                    && q == self.dim
                    && j.size.mark.len() == self.dim
                    && (0..q).all(|i| (0..q).all(|k| j.size.mark[i][k] == if i == k { 1.0 } else { 0.0 }))
            }
        }
    }
}

fn matvec_add(m: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m) {
        for (a, b) in row.iter().zip(x) {
            *o += a * b;
        }
    }
}

impl Dynamics for AffineModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _t: f64, x: &[f64], _a: &[f64], f: &Features, out: &mut [f64]) {
        out.copy_from_slice(&self.drift.constant);
        matvec_add(&self.drift.state, x, out);
        matvec_add(&self.drift.mean, &f.mean, out);
    }

    fn diffusion(&self, _t: f64, x: &[f64], _a: &[f64], f: &Features, out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let mut v = self.diffusion.constant[i][j];
                for (k, s) in self.diffusion.state.iter().enumerate() {
                    v += x[k] * s[i][j];
                }
                for (k, s) in self.diffusion.mean.iter().enumerate() {
                    v += f.mean[k] * s[i][j];
                }
                out[i * d + j] = v;
            }
        }
    }
}

impl JumpModel for AffineModel {
    fn jump_rate(&self) -> f64 {
        self.jumps.as_ref().map_or(0.0, |j| j.rate)
    }

    fn mark_law(&self) -> Option<&MarkLaw> {
        self.jumps.as_ref().map(|j| &j.marks)
    }

    fn jump_size(&self, _t: f64, x: &[f64], _a: &[f64], f: &Features, mark: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(j) = &self.jumps {
            for (o, c) in out.iter_mut().zip(&j.size.constant) {
                *o = *c;
            }
            matvec_add(&j.size.state, x, out);
            matvec_add(&j.size.mean, &f.mean, out);
            matvec_add(&j.size.mark, mark, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_json_roundtrip_and_eval() {
        let js = r#"{"dimension":1,"drift":{"constant":[1.0],"state":[[-0.5]]},
            "diffusion":{"constant":[[0.3]],"state":[[[0.1]]]},
            "jumps":{"rate":2.0,"marks":{"uniform":{"low":[0.0],"high":[1.0]}},"size":{"mark":[[1.0]]}}}"#;
        let m: AffineModel = serde_json::from_str(js).unwrap();
        let f = Features { mean: vec![0.0], variance: 0.0, moments: vec![] };
        let mut o = [0.0];
        m.drift(0.0, &[2.0], &[], &f, &mut o);
        assert_eq!(o[0], 0.0);
        m.diffusion(0.0, &[2.0], &[], &f, &mut o);
        assert!((o[0] - 0.5).abs() < 1e-15);
        m.jump_size(0.0, &[2.0], &[], &f, &[0.25], &mut o);
        assert_eq!(o[0], 0.25);
        assert!(m.jump_is_mark());
        let back: AffineModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_diffusion_is_rejected() {
        let js = r#"{"dimension":1,"drift":{"constant":[0.0]}}"#;
        let e = serde_json::from_str::<AffineModel>(js).unwrap_err().to_string();
        assert!(e.contains("diffusion"), "{e}");
    }

    #[test]
    fn negative_rate_is_rejected() {
        let j = AffineModel::mark_jumps(-1.0, MarkLaw::Constant { value: vec![1.0] });
        assert!(AffineModel::scalar(0.0, 0.0, 0.0, 0.0, 0.0, Some(j)).is_err());
    }

    #[test]
    fn quadrature_moments() {
        let u = MarkLaw::Uniform { low: vec![0.0], high: vec![1.0] };
        let (x, w) = u.quadrature_1d(4);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m2 - 1.0 / 3.0).abs() < 1e-15);
        let n = MarkLaw::Normal { mean: vec![0.5], std: vec![2.0] };
        let (x, w) = n.quadrature_1d(8);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m2 - 4.25).abs() < 1e-10);
    }
}
