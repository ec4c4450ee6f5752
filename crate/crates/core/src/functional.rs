//! Cylindrical functionals `Phi(mu) = f(<g_1, mu>, ..., <g_n, mu>)` and their exact derivatives.
//!
//! The linear derivative is only ever exposed through differences, so its additive
//! constant never appears.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{cloud_moment, EmpiricalMeasure};
use crate::numeric::gauss_legendre01;
use crate::polynomial::Polynomial;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawFunctional {
    outer: Polynomial,
    inner: Vec<Polynomial>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawFunctional", into = "RawFunctional")]
pub struct CylindricalFunctional {
    outer: Polynomial,
    inner: Vec<Polynomial>,
    outer_grad: Vec<Polynomial>,
    inner_grad: Vec<Vec<Polynomial>>,
    inner_hess: Vec<Vec<Polynomial>>,
}

impl TryFrom<RawFunctional> for CylindricalFunctional {
    type Error = Error;
    fn try_from(r: RawFunctional) -> Result<Self> {
        CylindricalFunctional::new(r.outer, r.inner)
    }
}

impl From<CylindricalFunctional> for RawFunctional {
    fn from(c: CylindricalFunctional) -> Self {
        RawFunctional { outer: c.outer, inner: c.inner }
    }
}

/// Outer gradient frozen at the moments of one measure.
#[derive(Debug, Clone)]
pub struct Frozen {
    pub moments: Vec<f64>,
    pub value: f64,
    pub weights: Vec<f64>,
}

impl CylindricalFunctional {
    pub fn new(outer: Polynomial, inner: Vec<Polynomial>) -> Result<Self> {
        if inner.is_empty() {
            return Err(Error::Invalid("cylindrical functional needs at least one inner polynomial".into()));
        }
        if outer.arity() != inner.len() {
            return Err(Error::Dimension { expected: inner.len(), found: outer.arity() });
        }
        let d = inner[0].arity();
        if let Some(g) = inner.iter().find(|g| g.arity() != d) {
            return Err(Error::Dimension { expected: d, found: g.arity() });
        }
        let outer_grad = outer.gradient();
        let inner_grad = inner.iter().map(|g| g.gradient()).collect();
        let inner_hess = inner.iter().map(|g| g.hessian()).collect();
        Ok(CylindricalFunctional { outer, inner, outer_grad, inner_grad, inner_hess })
    }

    /// `<g, mu>`.
    pub fn linear(g: Polynomial) -> Self {
        Self::new(Polynomial::var(1, 0), vec![g]).expect("valid linear functional")
    }

    /// `<x^k, mu>` in one dimension.
    pub fn moment_1d(k: u32) -> Self {
        Self::linear(Polynomial::monomial(1, 0, k, 1.0))
    }

    /// `<g, mu>^2`.
    pub fn squared(g: Polynomial) -> Self {
        Self::new(Polynomial::monomial(1, 0, 2, 1.0), vec![g]).expect("valid square")
    }

    pub fn outer(&self) -> &Polynomial {
        &self.outer
    }

    pub fn inner(&self) -> &[Polynomial] {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.inner[0].arity()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), found: d });
        }
        Ok(())
    }

    pub fn freeze_moments(&self, moments: Vec<f64>) -> Frozen {
        let value = self.outer.eval(&moments);
        let weights = self.outer_grad.iter().map(|p| p.eval(&moments)).collect();
        Frozen { moments, value, weights }
    }

    /// Freeze at a flat cloud of dimension `self.dim()`.
    pub fn freeze_cloud(&self, points: &[f64]) -> Frozen {
        let d = self.dim();
        let m = self.inner.iter().map(|g| cloud_moment(points, d, g)).collect();
        self.freeze_moments(m)
    }

    pub fn freeze(&self, mu: &EmpiricalMeasure) -> Result<Frozen> {
        self.check_dim(mu.dim())?;
        Ok(self.freeze_cloud(mu.flat()))
    }

    /// `sum_k w_k g_k(x)`: a representative of the linear derivative (up to a constant).
    #[inline]
    pub fn flat_potential(&self, fr: &Frozen, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (w, g) in fr.weights.iter().zip(&self.inner) {
            if *w != 0.0 {
                s += w * g.eval(x);
            }
        }
        s
    }

    #[inline]
    pub fn lions_at(&self, fr: &Frozen, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (w, grads) in fr.weights.iter().zip(&self.inner_grad) {
            if *w != 0.0 {
                for (o, g) in out.iter_mut().zip(grads) {
                    *o += w * g.eval(x);
                }
            }
        }
    }

    /// Row-major d x d.
    #[inline]
    pub fn lions_x_at(&self, fr: &Frozen, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (w, hess) in fr.weights.iter().zip(&self.inner_hess) {
            if *w != 0.0 {
                for (o, h) in out.iter_mut().zip(hess) {
                    *o += w * h.eval(x);
                }
            }
        }
    }

    #[inline]
    pub fn linear_diff_at(&self, fr: &Frozen, x_new: &[f64], x_old: &[f64]) -> f64 {
        let mut s = 0.0;
        for (w, g) in fr.weights.iter().zip(&self.inner) {
            if *w != 0.0 {
                s += w * (g.eval(x_new) - g.eval(x_old));
            }
        }
        s
    }

    /// The linear derivative at frozen moments as a polynomial in x, normalized to vanish
    /// at the origin.
    pub fn linear_derivative_poly(&self, fr: &Frozen) -> Polynomial {
        let d = self.dim();
        let mut acc = Polynomial::zero(d);
        for (w, g) in fr.weights.iter().zip(&self.inner) {
            acc = &acc + &g.scale(*w);
        }
        let c0 = acc.eval(&vec![0.0; d]);
        &acc + &Polynomial::constant(d, -c0)
    }

    /// The Lions derivative at frozen moments as d polynomials in x.
    pub fn lions_poly(&self, fr: &Frozen) -> Vec<Polynomial> {
        let d = self.dim();
        (0..d)
            .map(|j| {
                let mut acc = Polynomial::zero(d);
                for (w, grads) in fr.weights.iter().zip(&self.inner_grad) {
                    acc = &acc + &grads[j].scale(*w);
                }
                acc
            })
            .collect()
    }

    /// Sum as a cylindrical functional on the concatenated inner list.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        let (f, g, inner) = self.lift_pair(other)?;
        Self::new(&f + &g, inner)
    }

    pub fn product(&self, other: &Self) -> Result<Self> {
        let (f, g, inner) = self.lift_pair(other)?;
        Self::new(&f * &g, inner)
    }

    // Re-express both outers over the joint moment vector (g_1..g_n, h_1..h_m).
    fn lift_pair(&self, other: &Self) -> Result<(Polynomial, Polynomial, Vec<Polynomial>)> {
        self.check_dim(other.dim())?;
        let n = self.inner.len();
        let m = other.inner.len();
        let vars: Vec<Polynomial> = (0..n + m).map(|j| Polynomial::var(n + m, j)).collect();
        let f = self.outer.compose(&vars[..n])?;
        let g = other.outer.compose(&vars[n..])?;
        let mut inner = self.inner.clone();
        inner.extend(other.inner.iter().cloned());
        Ok((f, g, inner))
    }
}

pub fn evaluate(phi: &CylindricalFunctional, mu: &EmpiricalMeasure) -> Result<f64> {
    Ok(phi.freeze(mu)?.value)
}

pub fn lions_derivative(phi: &CylindricalFunctional, mu: &EmpiricalMeasure, x: &[f64]) -> Result<Vec<f64>> {
    phi.check_dim(x.len())?;
    let fr = phi.freeze(mu)?;
    let mut out = vec![0.0; x.len()];
    phi.lions_at(&fr, x, &mut out);
    Ok(out)
}

pub fn lions_x_derivative(phi: &CylindricalFunctional, mu: &EmpiricalMeasure, x: &[f64]) -> Result<Vec<f64>> {
    phi.check_dim(x.len())?;
    let fr = phi.freeze(mu)?;
    let mut out = vec![0.0; x.len() * x.len()];
    phi.lions_x_at(&fr, x, &mut out);
    Ok(out)
}

pub fn linear_derivative_diff(
    phi: &CylindricalFunctional,
    mu: &EmpiricalMeasure,
    x_new: &[f64],
    x_old: &[f64],
) -> Result<f64> {
    phi.check_dim(x_new.len())?;
    phi.check_dim(x_old.len())?;
    let fr = phi.freeze(mu)?;
    Ok(phi.linear_diff_at(&fr, x_new, x_old))
}

/// Compares the difference quotient of `Phi` along `x_i -> x_i + h v_i` with the Lions
/// derivative paired against `v`. `directions` is flat, same layout as the measure.
pub fn check_lift_gradient(
    phi: &CylindricalFunctional,
    mu: &EmpiricalMeasure,
    directions: &[f64],
    h: f64,
) -> Result<f64> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Invalid(format!("step h = {h} must be positive")));
    }
    if directions.len() != mu.flat().len() {
        return Err(Error::Dimension { expected: mu.flat().len(), found: directions.len() });
    }
    let d = mu.dim();
    let fr = phi.freeze(mu)?;
    let shifted: Vec<f64> = mu.flat().iter().zip(directions).map(|(x, v)| x + h * v).collect();
    let fh = phi.freeze_cloud(&shifted).value;
    let quotient = (fh - fr.value) / h;
    let mut g = vec![0.0; d];
    let pair: Vec<f64> = mu
        .flat()
        .chunks(d)
        .zip(directions.chunks(d))
        .map(|(x, v)| {
            phi.lions_at(&fr, x, &mut g);
            g.iter().zip(v).map(|(a, b)| a * b).sum()
        })
        .collect();
    Ok((quotient - crate::numeric::mean(&pair)).abs())
}

/// `|Phi(mu) - Phi(nu) - int_0^1 int dPhi/dmu(h mu + (1-h) nu, x) (mu - nu)(dx) dh|`, with the
/// h-integral done by Gauss-Legendre.
pub fn check_linear_derivative_identity(
    phi: &CylindricalFunctional,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    quadrature_nodes: usize,
) -> Result<f64> {
    if quadrature_nodes == 0 {
        return Err(Error::Invalid("need at least one quadrature node".into()));
    }
    phi.check_dim(mu.dim())?;
    phi.check_dim(nu.dim())?;
    let mixture = MixtureCloud { a: mu.flat(), b: nu.flat(), dim: mu.dim() };
    let fm = phi.freeze(mu)?;
    let fnu = phi.freeze(nu)?;
    let (nodes, weights) = gauss_legendre01(quadrature_nodes);
    let mut rhs = 0.0;
    for (h, w) in nodes.iter().zip(&weights) {
        let moments = phi.inner().iter().map(|g| mixture.moment(*h, g)).collect();
        let fr = phi.freeze_moments(moments);
        let pairing: f64 = fr
            .weights
            .iter()
            .zip(fm.moments.iter().zip(&fnu.moments))
            .map(|(wk, (a, b))| wk * (a - b))
            .sum();
        rhs += w * pairing;
    }
    Ok((fm.value - fnu.value - rhs).abs())
}

// h * mu + (1 - h) * nu, kept as two weight groups.
struct MixtureCloud<'a> {
    a: &'a [f64],
    b: &'a [f64],
    dim: usize,
}

impl MixtureCloud<'_> {
    fn moment(&self, h: f64, g: &Polynomial) -> f64 {
        h * cloud_moment(self.a, self.dim, g) + (1.0 - h) * cloud_moment(self.b, self.dim, g)
    }
}
