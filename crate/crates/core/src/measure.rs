//! Uniformly weighted empirical measures.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{mean, pairwise_sum};
use crate::polynomial::Polynomial;

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Invalid("zero-dimensional sample".into()));
        }
        let mut points = Vec::with_capacity(samples.len() * dim);
        for s in samples {
            if s.len() != dim {
                return Err(Error::Dimension { expected: dim, found: s.len() });
            }
            points.extend_from_slice(s);
        }
        Self::from_flat(dim, points)
    }

    /// Row-major `N x dim` storage.
    pub fn from_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::Empty);
        }
        if points.len() % dim != 0 {
            return Err(Error::Dimension { expected: dim, found: points.len() % dim });
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure support".into()));
        }
        Ok(EmpiricalMeasure { dim, points })
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self::from_flat(x.len(), x.to_vec()).expect("finite point")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[f64] {
        &self.points
    }

    pub fn polynomial_moment(&self, g: &Polynomial) -> Result<f64> {
        if g.arity() != self.dim {
            return Err(Error::Dimension { expected: self.dim, found: g.arity() });
        }
        Ok(cloud_moment(&self.points, self.dim, g))
    }

    /// Mean vector and the trace of the covariance.
    pub fn mean_and_variance(&self) -> (Vec<f64>, f64) {
        cloud_mean_var(&self.points, self.dim)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        wr.write_record(&header)?;
        for i in 0..self.len() {
            wr.write_record(self.point(i).iter().map(|v| format!("{v:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Average of `g` over a flat cloud.
pub fn cloud_moment(points: &[f64], dim: usize, g: &Polynomial) -> f64 {
    let vals: Vec<f64> = points.par_chunks(dim).map(|x| g.eval(x)).collect();
    mean(&vals)
}

pub fn cloud_mean_var(points: &[f64], dim: usize) -> (Vec<f64>, f64) {
    let n = points.len() / dim;
    let mut m = vec![0.0; dim];
    let mut var = 0.0;
    let mut col = vec![0.0; n];
    for j in 0..dim {
        for i in 0..n {
            col[i] = points[i * dim + j];
        }
        let mj = mean(&col);
        for v in col.iter_mut() {
            *v = (*v - mj) * (*v - mj);
        }
        m[j] = mj;
        var += pairwise_sum(&col) / n as f64;
    }
    (m, var)
}

/// Per-coordinate means of a flat cloud.
pub fn cloud_mean(points: &[f64], dim: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let mut col = vec![0.0; n];
    (0..dim)
        .map(|j| {
            for i in 0..n {
                col[i] = points[i * dim + j];
            }
            mean(&col)
        })
        .collect()
}

/// Exact W2 between two one-dimensional clouds of equal size (sorted coupling).
pub fn wasserstein2_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim != 1 {
        return Err(Error::Dimension { expected: 1, found: mu.dim });
    }
    if nu.dim != 1 {
        return Err(Error::Dimension { expected: 1, found: nu.dim });
    }
    if mu.len() != nu.len() {
        return Err(Error::Invalid(format!("unequal particle counts {} and {}", mu.len(), nu.len())));
    }
    let mut a = mu.points.clone();
    let mut b = nu.points.clone();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok(mean(&sq).sqrt())
}
