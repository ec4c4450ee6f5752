use std::io::Write;

use serde::Serialize;

use super::{Effective, LqCoefficients};
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::numeric::{hermite, rk4_step};
use crate::sim::TimeGrid;

/// Interpolated state of the Riccati system at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiPoint {
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub da: f64,
    pub db: f64,
    pub dc: f64,
    pub dd: f64,
    pub u: f64,
    pub s: f64,
    pub z: f64,
    pub y: f64,
}

impl RiccatiPoint {
    /// Optimal feedback at state `x` with mean `m`.
    pub fn feedback(&self, x: f64, m: f64) -> f64 {
        -self.s / self.u * (x - m) - self.z / self.u * m - self.y / (2.0 * self.u)
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    coeffs: LqCoefficients,
    eff: Effective,
    t: Vec<f64>,
    y: Vec<[f64; 4]>,
    dy: Vec<[f64; 4]>,
    aux: Vec<[f64; 4]>,
}

/// `(U, S, Z, Y)` from `(A, B, C)`.
fn aux(co: &LqCoefficients, e: &Effective, a: f64, b: f64, c: f64) -> [f64; 4] {
    let (cc, m) = (&e.c, &e.m);
    let u = co.f2 + a * m[3][3];
    let s = a * (cc[3] + m[1][3]);
    let z = b * cc[3] + a * (m[1][3] + m[2][3]);
    let y = c * cc[3] + 2.0 * a * m[0][3];
    [u, s, z, y]
}

/// Time derivatives `(A', B', C', D')` of the Riccati system (forward time).
fn rhs(co: &LqCoefficients, e: &Effective, y: &[f64; 4]) -> ([f64; 4], f64) {
    let [a, b, c, _] = *y;
    let [u, s, z, yy] = aux(co, e, a, b, c);
    let (cc, m) = (&e.c, &e.m);
    let c12 = cc[1] + cc[2];
    let da = -(co.f1 + (2.0 * cc[1] + m[1][1]) * a - s * s / u);
    let db = -(co.f1 + co.f1_bar + 2.0 * c12 * b + (m[1][1] + 2.0 * m[1][2] + m[2][2]) * a - z * z / u);
    let dc = -(c12 * c + 2.0 * cc[0] * b + 2.0 * (m[0][1] + m[0][2]) * a - z * yy / u);
    let dd = -(cc[0] * c + m[0][0] * a - yy * yy / (4.0 * u));
    ([da, db, dc, dd], u)
}

/// Integrates the Riccati system backward from `t_end` to 0 with fixed-step RK4.
pub fn solve_riccati(coeffs: &LqCoefficients, t_end: f64, steps: usize) -> Result<RiccatiSolution> {
    coeffs.validate()?;
    if steps < 10 {
        return Err(Error::Invalid(format!("steps = {steps} must be >= 10")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Invalid("horizon must be positive".into()));
    }
    let eff = coeffs.effective()?;
    let h = t_end / steps as f64;
    let bad: std::cell::Cell<Option<(f64, f64)>> = std::cell::Cell::new(None);
    // time to go: y' = -rhs
    let mut g = |tau: f64, y: &[f64; 4]| {
        let (d, u) = rhs(coeffs, &eff, y);
        if !(u > 0.0) && bad.get().is_none() {
            bad.set(Some((t_end - tau, u)));
        }
        d.map(|v| -v)
    };
    let mut ys = Vec::with_capacity(steps + 1);
    let mut y = [coeffs.g1, coeffs.g1 + coeffs.g1_bar, 0.0, 0.0];
    ys.push(y);
    for k in 0..steps {
        y = rk4_step(&mut g, k as f64 * h, y, h);
        if let Some((t, u)) = bad.get() {
            return Err(Error::RiccatiBlowUp { t, u });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiBlowUp { t: t_end - (k + 1) as f64 * h, u: f64::NAN });
        }
        ys.push(y);
    }
    ys.reverse();
    let t: Vec<f64> = (0..=steps).map(|k| if k == steps { t_end } else { k as f64 * h }).collect();
    let mut dy = Vec::with_capacity(ys.len());
    let mut auxs = Vec::with_capacity(ys.len());
    for (tk, y) in t.iter().zip(&ys) {
        let (d, u) = rhs(coeffs, &eff, y);
        if !(u > 0.0) {
            return Err(Error::RiccatiBlowUp { t: *tk, u });
        }
        dy.push(d);
        auxs.push(aux(coeffs, &eff, y[0], y[1], y[2]));
    }
    Ok(RiccatiSolution { coeffs: coeffs.clone(), eff, t, y: ys, dy, aux: auxs })
}

impl RiccatiSolution {
    pub fn coeffs(&self) -> &LqCoefficients {
        &self.coeffs
    }

    pub fn effective(&self) -> &Effective {
        &self.eff
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    /// `(A, B, C, D)` at grid node `k`.
    pub fn node(&self, k: usize) -> [f64; 4] {
        self.y[k]
    }

    /// `(U, S, Z, Y)` at grid node `k`.
    pub fn aux_node(&self, k: usize) -> [f64; 4] {
        self.aux[k]
    }

    /// Cubic Hermite interpolation of `A..D` from the stored derivatives; the auxiliaries are
    /// recomputed from the interpolated values.
    pub fn at(&self, t: f64) -> Result<RiccatiPoint> {
        let tn = self.t_end();
        let tol = 1e-12 * tn.max(1.0);
        if !(t >= -tol && t <= tn + tol) {
            return Err(Error::Invalid(format!("t = {t} outside [0, {tn}]")));
        }
        Ok(self.at_clamped(t))
    }

    pub(crate) fn at_clamped(&self, t: f64) -> RiccatiPoint {
        let t = t.clamp(0.0, self.t_end());
        let n = self.t.len() - 1;
        let h = self.t[1] - self.t[0];
        let k = ((t / h).floor() as usize).min(n - 1);
        let mut v = [0.0; 4];
        let mut d = [0.0; 4];
        for i in 0..4 {
            let (a, b) =
                hermite(self.t[k], self.t[k + 1], self.y[k][i], self.y[k + 1][i], self.dy[k][i], self.dy[k + 1][i], t);
            v[i] = a;
            d[i] = b;
        }
        let [u, s, z, y] = aux(&self.coeffs, &self.eff, v[0], v[1], v[2]);
        RiccatiPoint { t, a: v[0], b: v[1], c: v[2], d: v[3], da: d[0], db: d[1], dc: d[2], dd: d[3], u, s, z, y }
    }

    /// `R(t)` and `Q(t)` of the optimal mean dynamics `m' = R m + Q`.
    pub fn mean_coefficients(&self, t: f64) -> Result<(f64, f64)> {
        let p = self.at(t)?;
        let c = &self.eff.c;
        Ok((c[1] + c[2] - p.z / p.u * c[3], c[0] - p.y / (2.0 * p.u) * c[3]))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "A", "B", "C", "D", "U", "S", "Z", "Y"])?;
        for k in 0..self.t.len() {
            let mut row = vec![format!("{:e}", self.t[k])];
            row.extend(self.y[k].iter().chain(&self.aux[k]).map(|v| format!("{v:e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn optimal_feedback(sol: &RiccatiSolution, t: f64, x: f64, xbar: f64) -> Result<f64> {
    Ok(sol.at(t)?.feedback(x, xbar))
}

/// Mean of the optimally controlled state on the nodes of `grid`, by RK4.
pub fn mean_dynamics(sol: &RiccatiSolution, xbar0: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    if grid.t0() < 0.0 || grid.t_end() > sol.t_end() * (1.0 + 1e-12) {
        return Err(Error::Invalid("grid outside the Riccati horizon".into()));
    }
    let mut out = Vec::with_capacity(grid.nodes().len());
    let mut m = [xbar0];
    out.push(xbar0);
    let mut err = None;
    let mut f = |t: f64, y: &[f64; 1]| match sol.mean_coefficients(t) {
        Ok((r, q)) => [r * y[0] + q],
        Err(e) => {
            err.get_or_insert(e);
            [0.0]
        }
    };
    for k in 0..grid.n_steps() {
        m = rk4_step(&mut f, grid.nodes()[k], m, grid.dt(k));
        out.push(m[0]);
    }
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// `A Var + B m^2 + C m + D` at time `t`.
pub fn value_function(sol: &RiccatiSolution, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: mu.dim() });
    }
    let p = sol.at(t)?;
    let (m, var) = mu.mean_and_variance();
    let m = m[0];
    Ok(p.a * var + p.b * m * m + p.c * m + p.d)
}

/// `dV/dt + E[min_a H]` at `(t, mu)`. The Hamiltonian is built from the model coefficients,
/// the jump integral by quadrature over marks, and the minimum from the parabola through
/// `a = -1, 0, 1`; it is zero up to interpolation error.
pub fn hjb_residual(sol: &RiccatiSolution, t: f64, mu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::Dimension { expected: 1, found: mu.dim() });
    }
    let co = &sol.coeffs;
    let p = sol.at(t)?;
    let (m, var) = mu.mean_and_variance();
    let m = m[0];
    let dv = p.da * var + p.db * m * m + p.dc * m + p.dd;
    let (nodes, weights, rate) = match &co.jumps {
        Some(j) => {
            let (n, w) = j.marks.quadrature_1d(16);
            (n, w, j.rate)
        }
        None => (vec![], vec![], 0.0),
    };
    let lin = |x: f64| p.a * x * x + (2.0 * (p.b - p.a) * m + p.c) * x;
    let lions = |x: f64| 2.0 * p.a * (x - m) + 2.0 * p.b * m + p.c;
    let bc = co.drift_coefs();
    let sc = co.sigma_coefs();
    let ham = |x: f64, a: f64| {
        let z = [1.0, x, m, a];
        let b: f64 = bc.iter().zip(&z).map(|(c, v)| c * v).sum();
        let s: f64 = sc.iter().zip(&z).map(|(c, v)| c * v).sum();
        let mut jump = 0.0;
        if let Some(j) = &co.jumps {
            for (th, w) in nodes.iter().zip(&weights) {
                let be: f64 = j.eval(*th).iter().zip(&z).map(|(c, v)| c * v).sum();
                jump += w * (lin(x + be) - lin(x));
            }
        }
        co.f1 * x * x + co.f1_bar * m * m + co.f2 * a * a + lions(x) * b + p.a * s * s + rate * jump
    };
    let mut mins = Vec::with_capacity(mu.len());
    for i in 0..mu.len() {
        let x = mu.point(i)[0];
        let (hm, h0, hp) = (ham(x, -1.0), ham(x, 0.0), ham(x, 1.0));
        let alpha = 0.5 * (hp + hm - 2.0 * h0);
        let beta = 0.5 * (hp - hm);
        if !(alpha > 0.0) {
            return Err(Error::RiccatiBlowUp { t, u: alpha });
        }
        mins.push(h0 - beta * beta / (4.0 * alpha));
    }
    Ok(dv + crate::numeric::mean(&mins))
}

/// Sum of terms `c tau^p e^{r tau}`.
#[derive(Debug, Clone, Default)]
struct ExpPoly(Vec<(f64, u32, f64)>);

impl ExpPoly {
    fn exp(c: f64, r: f64) -> Self {
        ExpPoly(vec![(c, 0, r)])
    }

    fn eval(&self, tau: f64) -> f64 {
        self.0.iter().map(|(c, p, r)| c * tau.powi(*p as i32) * (r * tau).exp()).sum()
    }

    fn scaled(&self, k: f64) -> Self {
        ExpPoly(self.0.iter().map(|(c, p, r)| (c * k, *p, *r)).collect())
    }

    fn plus(mut self, other: &Self) -> Self {
        self.0.extend_from_slice(&other.0);
        self
    }

    /// `int_0^tau e^{h (tau - s)} P(s) ds`
    fn conv(&self, h: f64) -> Self {
        let mut out = Vec::new();
        for &(c, p, a) in &self.0 {
            let r = a - h;
            if r.abs() < 1e-13 {
                out.push((c / (p + 1) as f64, p + 1, h));
                continue;
            }
            let mut fact = 1.0; // p! / (p - j)!
            for j in 0..=p {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                out.push((c * sign * fact / r.powi(j as i32 + 1), p - j, a));
                fact *= (p - j) as f64;
            }
            let pf: f64 = (1..=p).map(|v| v as f64).product();
            let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
            out.push((-c * sign * pf / r.powi(p as i32 + 1), 0, h));
        }
        ExpPoly(out)
    }
}

/// Exact `(A, B, C, D)(t)` when the control cannot act on the value (`S = Z = Y = 0`): the
/// system is then linear with constant coefficients and is solved by variation of constants.
pub fn decoupled_closed_form(coeffs: &LqCoefficients, t_end: f64, t: f64) -> Result<[f64; 4]> {
    let e = coeffs.effective()?;
    let (c, m) = (&e.c, &e.m);
    if c[3] != 0.0 || m[0][3] != 0.0 || m[1][3] != 0.0 || m[2][3] != 0.0 {
        return Err(Error::Invalid("not a decoupled scenario: the control enters the value".into()));
    }
    let tau = t_end - t;
    let k = 2.0 * c[1] + m[1][1];
    let a = ExpPoly::exp(coeffs.g1, k).plus(&ExpPoly::exp(coeffs.f1, 0.0).conv(k));
    let l = 2.0 * (c[1] + c[2]);
    let k2 = m[1][1] + 2.0 * m[1][2] + m[2][2];
    let b = ExpPoly::exp(coeffs.g1 + coeffs.g1_bar, l)
        .plus(&ExpPoly::exp(coeffs.f1 + coeffs.f1_bar, 0.0).plus(&a.scaled(k2)).conv(l));
    let h = c[1] + c[2];
    let cc = b.scaled(2.0 * c[0]).plus(&a.scaled(2.0 * (m[0][1] + m[0][2]))).conv(h);
    let d = cc.scaled(c[0]).plus(&a.scaled(m[0][0])).conv(0.0);
    Ok([a.eval(tau), b.eval(tau), cc.eval(tau), d.eval(tau)])
}
