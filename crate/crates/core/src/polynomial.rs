//! Multivariate polynomials with exact partial derivatives.
//!
//! Config literal: a list of `[coefficient, [e1, ..., ed]]` pairs. The arity is read off the
//! exponent lists, so the zero polynomial is written `[[0.0, [0, ..., 0]]]`.

use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    arity: usize,
    coefs: Vec<f64>,
    // flat, terms.len() * arity, sorted lexicographically, no duplicates
    exps: Vec<u32>,
}

impl Polynomial {
    pub fn new(arity: usize, terms: &[(f64, Vec<u32>)]) -> Result<Self> {
        if arity == 0 {
            return Err(Error::Invalid("polynomial arity must be positive".into()));
        }
        let mut map: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (c, e) in terms {
            if e.len() != arity {
                return Err(Error::Dimension { expected: arity, found: e.len() });
            }
            if !c.is_finite() {
                return Err(Error::NonFinite("polynomial coefficient".into()));
            }
            *map.entry(e.clone()).or_insert(0.0) += c;
        }
        Ok(Self::from_map(arity, map))
    }

    fn from_map(arity: usize, map: BTreeMap<Vec<u32>, f64>) -> Self {
        let mut coefs = Vec::new();
        let mut exps = Vec::new();
        for (e, c) in map {
            if c != 0.0 {
                coefs.push(c);
                exps.extend_from_slice(&e);
            }
        }
        Polynomial { arity, coefs, exps }
    }

    pub fn zero(arity: usize) -> Self {
        Polynomial { arity, coefs: vec![], exps: vec![] }
    }

    pub fn constant(arity: usize, c: f64) -> Self {
        Self::new(arity, &[(c, vec![0; arity])]).expect("valid constant")
    }

    /// The monomial `c * x_j^k`.
    pub fn monomial(arity: usize, j: usize, k: u32, c: f64) -> Self {
        let mut e = vec![0; arity];
        e[j] = k;
        Self::new(arity, &[(c, e)]).expect("valid monomial")
    }

    /// `x_j` in `arity` variables.
    pub fn var(arity: usize, j: usize) -> Self {
        Self::monomial(arity, j, 1, 1.0)
    }

    /// Univariate polynomial from ascending coefficients.
    pub fn univariate(coefs: &[f64]) -> Self {
        let terms: Vec<(f64, Vec<u32>)> =
            coefs.iter().enumerate().map(|(k, &c)| (c, vec![k as u32])).collect();
        Self::new(1, &terms).expect("valid univariate")
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_zero(&self) -> bool {
        self.coefs.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (f64, &[u32])> {
        self.coefs.iter().copied().zip(self.exps.chunks(self.arity.max(1)))
    }

    pub fn degree(&self) -> u32 {
        self.terms().map(|(_, e)| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    /// Evaluate at `x` (length must equal the arity; checked in debug builds only).
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arity);
        let mut s = 0.0;
        for (c, e) in self.terms() {
            let mut t = c;
            for (xi, &ei) in x.iter().zip(e) {
                if ei > 0 {
                    t *= xi.powi(ei as i32);
                }
            }
            s += t;
        }
        s
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arity {
            return Err(Error::Dimension { expected: self.arity, found: x.len() });
        }
        Ok(self.eval(x))
    }

    pub fn partial(&self, j: usize) -> Polynomial {
        let mut map = BTreeMap::new();
        for (c, e) in self.terms() {
            if e[j] > 0 {
                let mut ne = e.to_vec();
                ne[j] -= 1;
                *map.entry(ne).or_insert(0.0) += c * e[j] as f64;
            }
        }
        Self::from_map(self.arity, map)
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.arity).map(|j| self.partial(j)).collect()
    }

    /// Row-major arity x arity matrix of second partials.
    pub fn hessian(&self) -> Vec<Polynomial> {
        let g = self.gradient();
        let mut out = Vec::with_capacity(self.arity * self.arity);
        for gi in &g {
            for j in 0..self.arity {
                out.push(gi.partial(j));
            }
        }
        out
    }

    pub fn scale(&self, a: f64) -> Polynomial {
        let mut map = BTreeMap::new();
        for (c, e) in self.terms() {
            map.insert(e.to_vec(), a * c);
        }
        Self::from_map(self.arity, map)
    }

    /// Substitute polynomials (all of one arity) for each variable.
    pub fn compose(&self, args: &[Polynomial]) -> Result<Polynomial> {
        if args.len() != self.arity {
            return Err(Error::Dimension { expected: self.arity, found: args.len() });
        }
        let inner = args[0].arity;
        let mut acc = Polynomial::zero(inner);
        for (c, e) in self.terms() {
            let mut t = Polynomial::constant(inner, c);
            for (a, &k) in args.iter().zip(e) {
                for _ in 0..k {
                    t = &t * a;
                }
            }
            acc = &acc + &t;
        }
        Ok(acc)
    }

    fn map_of(&self) -> BTreeMap<Vec<u32>, f64> {
        self.terms().map(|(c, e)| (e.to_vec(), c)).collect()
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.arity, rhs.arity, "arity mismatch in polynomial sum");
        let mut map = self.map_of();
        for (c, e) in rhs.terms() {
            *map.entry(e.to_vec()).or_insert(0.0) += c;
        }
        Polynomial::from_map(self.arity, map)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.arity, rhs.arity, "arity mismatch in polynomial product");
        let mut map = BTreeMap::new();
        for (a, ea) in self.terms() {
            for (b, eb) in rhs.terms() {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                *map.entry(e).or_insert(0.0) += a * b;
            }
        }
        Polynomial::from_map(self.arity, map)
    }
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut terms: Vec<(f64, Vec<u32>)> = self.terms().map(|(c, e)| (c, e.to_vec())).collect();
        if terms.is_empty() {
            terms.push((0.0, vec![0; self.arity]));
        }
        terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let terms: Vec<(f64, Vec<u32>)> = Vec::deserialize(d)?;
        let arity = terms
            .first()
            .map(|t| t.1.len())
            .ok_or_else(|| D::Error::custom("polynomial literal needs at least one term"))?;
        Polynomial::new(arity, &terms).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_duplicates_and_zeros() {
        let p = Polynomial::new(1, &[(1.0, vec![2]), (-1.0, vec![2]), (3.0, vec![1]), (2.0, vec![1])])
            .unwrap();
        assert_eq!(p, Polynomial::monomial(1, 0, 1, 5.0));
    }

    #[test]
    fn derivative_of_cubic() {
        let p = Polynomial::univariate(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(p.partial(0).partial(0).eval(&[2.0]), 12.0);
    }

    #[test]
    fn mixed_partials_commute() {
        let p = Polynomial::new(2, &[(2.0, vec![2, 1]), (1.0, vec![0, 3]), (-1.0, vec![1, 1])]).unwrap();
        let h = p.hessian();
        assert_eq!(h[1], h[2]);
        assert_eq!(h[1].eval(&[1.5, -0.5]), 4.0 * 1.5 - 1.0);
    }

    #[test]
    fn literal_roundtrip() {
        let p: Polynomial = serde_json::from_str("[[2.0,[1,0]],[1.5,[0,2]]]").unwrap();
        assert_eq!(p.arity(), 2);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Polynomial>(&s).unwrap(), p);
        let z: Polynomial = serde_json::from_str("[[0.0,[0,0,0]]]").unwrap();
        assert!(z.is_zero() && z.arity() == 3);
        assert!(serde_json::from_str::<Polynomial>("[]").is_err());
        assert!(serde_json::from_str::<Polynomial>("[[1.0,[1]],[1.0,[1,1]]]").is_err());
    }

    #[test]
    fn compose_squares() {
        let f = Polynomial::monomial(1, 0, 2, 1.0);
        let g = Polynomial::univariate(&[1.0, 1.0]);
        let h = f.compose(&[g]).unwrap();
        assert_eq!(h, Polynomial::univariate(&[1.0, 2.0, 1.0]));
    }
}
