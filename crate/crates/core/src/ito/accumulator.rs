use std::sync::Arc;

use rayon::prelude::*;

use super::{ItoReport, ItoTerms, Method, StepContribution};
use crate::error::{Error, Result};
use crate::functional::{CylindricalFunctional, Frozen};
use crate::numeric::{mean_se, pairwise_sum};
use crate::rng::{stream, Stream, DOMAIN_MARKS};
use crate::sim::{
    CommonJump, Dynamics, Features, JumpDiffusionSpec, JumpModel, RunInfo, SingularSpec, StepObserver, StepRecord,
};

// term slots, same order as ItoTerms
const DRIFT: usize = 0;
const QV: usize = 1;
const SING: usize = 2;
const LAW: usize = 3;
const COMP: usize = 4;
const LIN: usize = 5;

enum Mode {
    General,
    Jump { model: Arc<dyn JumpModel>, mark_mc: usize, marks: Vec<Stream> },
    Singular { dynamics: Arc<dyn Dynamics>, lambda: Vec<f64> },
}

/// Generator values at one node: per particle `[d_mu Phi . b, 1/2 tr(a H), jump integral]`
/// and the Lions derivative (N x d).
struct Gen {
    vals: Vec<[f64; 3]>,
    lions: Vec<f64>,
}

/// Streaming Ito-formula accumulator over the node window `[t_index, s_index]`.
pub struct ItoAccumulator {
    phi: CylindricalFunctional,
    mode: Mode,
    t_index: usize,
    s_index: usize,
    n: usize,
    d: usize,
    acc: Vec<[f64; 6]>,
    infl_t: Vec<f64>,
    infl_s: Vec<f64>,
    phi_t: Option<f64>,
    phi_s: Option<f64>,
    t: f64,
    s: f64,
    law_total: f64,
    max_dt: f64,
    steps: Vec<StepContribution>,
    cache: Option<Gen>,
}

impl ItoAccumulator {
    fn with_mode(phi: CylindricalFunctional, mode: Mode, t_index: usize, s_index: usize) -> Self {
        ItoAccumulator {
            phi,
            mode,
            t_index,
            s_index,
            n: 0,
            d: 0,
            acc: vec![],
            infl_t: vec![],
            infl_s: vec![],
            phi_t: None,
            phi_s: None,
            t: f64::NAN,
            s: f64::NAN,
            law_total: 0.0,
            max_dt: 0.0,
            steps: vec![],
            cache: None,
        }
    }

    pub fn general(phi: CylindricalFunctional, t_index: usize, s_index: usize) -> Self {
        Self::with_mode(phi, Mode::General, t_index, s_index)
    }

    pub fn jump_corollary(
        phi: CylindricalFunctional,
        spec: &JumpDiffusionSpec,
        t_index: usize,
        s_index: usize,
        mark_mc: usize,
    ) -> Result<Self> {
        if spec.model.jump_rate() > 0.0 && mark_mc == 0 {
            return Err(Error::Invalid("mark_mc must be >= 1 when jumps are present".into()));
        }
        let mode = Mode::Jump { model: spec.model.clone(), mark_mc, marks: vec![] };
        Ok(Self::with_mode(phi, mode, t_index, s_index))
    }

    pub fn singular_corollary(phi: CylindricalFunctional, spec: &SingularSpec, t_index: usize, s_index: usize) -> Self {
        let mode = Mode::Singular { dynamics: spec.dynamics.clone(), lambda: spec.lambda.clone() };
        Self::with_mode(phi, mode, t_index, s_index)
    }

    fn method(&self) -> Method {
        match self.mode {
            Mode::General => Method::General,
            Mode::Jump { .. } => Method::JumpCorollary,
            Mode::Singular { .. } => Method::SingularCorollary,
        }
    }

    fn set_start(&mut self, t: f64, cloud: &[f64]) {
        let fr = self.phi.freeze_cloud(cloud);
        self.infl_t = cloud.par_chunks(self.d).map(|x| self.phi.flat_potential(&fr, x)).collect();
        self.phi_t = Some(fr.value);
        self.t = t;
    }

    fn set_end(&mut self, s: f64, cloud: &[f64]) {
        let fr = self.phi.freeze_cloud(cloud);
        self.infl_s = cloud.par_chunks(self.d).map(|x| self.phi.flat_potential(&fr, x)).collect();
        self.phi_s = Some(fr.value);
        self.s = s;
    }

    /// Adds the pathwise contributions of a common jump `left -> value` and returns the exact
    /// law jump `Phi(value) - Phi(left)`.
    fn common(&self, left: &[f64], value: &[f64], singular: bool, contrib: &mut [[f64; 6]]) -> f64 {
        let d = self.d;
        let phi = &self.phi;
        let fl = phi.freeze_cloud(left);
        let fv = phi.freeze_cloud(value);
        contrib
            .par_iter_mut()
            .zip(left.par_chunks(d).zip(value.par_chunks(d)))
            .with_min_len(256)
            .for_each_init(
                || vec![0.0; d],
                |g, (c, (l, v))| {
                    phi.lions_at(&fl, l, g);
                    let mut gdx = 0.0;
                    for j in 0..d {
                        gdx += g[j] * (v[j] - l[j]);
                    }
                    c[if singular { SING } else { DRIFT }] += gdx;
                    c[COMP] -= gdx;
                    c[LAW] += phi.flat_potential(&fv, v) - phi.flat_potential(&fl, l);
                },
            );
        fv.value - fl.value
    }

    fn commit(&mut self, contrib: Vec<[f64; 6]>, law: f64, step: usize, t_start: f64, t_end: f64) {
        let inv = 1.0 / self.n as f64;
        let mut totals = [0.0; 6];
        for (j, tot) in totals.iter_mut().enumerate() {
            if j == LAW {
                *tot = law;
            } else {
                let col: Vec<f64> = contrib.iter().map(|c| c[j]).collect();
                *tot = pairwise_sum(&col) * inv;
            }
        }
        for (a, c) in self.acc.iter_mut().zip(&contrib) {
            for j in 0..6 {
                a[j] += c[j];
            }
        }
        self.law_total += law;
        self.steps.push(StepContribution { step, t_start, t_end, terms: ItoTerms::from_array(totals) });
    }

    fn general_step(&self, rec: &StepRecord) -> Vec<[f64; 6]> {
        let d = self.d;
        let phi = &self.phi;
        let fr = phi.freeze_cloud(rec.start);
        let end_left = rec.end_left();
        (0..self.n)
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || (vec![0.0; d], vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d]),
                |(g, h, qv_left, cur), i| {
                    let mut c = [0.0; 6];
                    cur.copy_from_slice(&rec.start[i * d..(i + 1) * d]);
                    qv_left.copy_from_slice(&rec.qv[i * d * d..(i + 1) * d * d]);
                    for e in rec.events_of(i) {
                        // continuous piece up to the event, integrand at the piece start
                        phi.lions_at(&fr, cur, g);
                        phi.lions_x_at(&fr, cur, h);
                        for j in 0..d {
                            c[DRIFT] += g[j] * (e.left[j] - cur[j]);
                        }
                        c[QV] += 0.5 * dot(h, &e.qv_before);
                        for (u, q) in qv_left.iter_mut().zip(&e.qv_before) {
                            *u -= q;
                        }
                        phi.lions_at(&fr, &e.left, g);
                        let gj = dot(g, &e.jump);
                        c[DRIFT] += gj;
                        c[COMP] -= gj;
                        for j in 0..d {
                            cur[j] = e.left[j] + e.jump[j];
                        }
                        c[LIN] += phi.linear_diff_at(&fr, cur, &e.left);
                    }
                    phi.lions_at(&fr, cur, g);
                    phi.lions_x_at(&fr, cur, h);
                    let el = &end_left[i * d..(i + 1) * d];
                    for j in 0..d {
                        c[DRIFT] += g[j] * (el[j] - cur[j]);
                    }
                    c[QV] += 0.5 * dot(h, qv_left);
                    c
                },
            )
            .collect()
    }

    /// Generator pieces at node `t` for the cloud; draws fresh marks in jump mode.
    fn generator(&mut self, t: f64, cloud: &[f64]) -> Gen {
        let d = self.d;
        let n = self.n;
        let phi = &self.phi;
        let fr = phi.freeze_cloud(cloud);
        let mut vals = vec![[0.0; 3]; n];
        let mut lions = vec![0.0; n * d];
        match &mut self.mode {
            Mode::General => {}
            Mode::Jump { model, mark_mc, marks } => {
                let dynamics: &dyn Dynamics = &**model;
                let f = Features::of_cloud(cloud, d, dynamics.feature_polys());
                let jm: &dyn JumpModel = &**model;
                let mc = *mark_mc;
                let rate = jm.jump_rate();
                let q = jm.mark_law().map_or(0, |m| m.dim());
                cloud
                    .par_chunks(d)
                    .zip(lions.par_chunks_mut(d))
                    .zip(vals.par_iter_mut())
                    .zip(marks.par_iter_mut())
                    .with_min_len(256)
                    .for_each_init(
                        || Scratch::new(d, dynamics.control_dim(), q),
                        |s, (((x, g), v), rng)| {
                            *v = point_generator(phi, &fr, dynamics, &f, t, x, g, s);
                            if rate > 0.0 {
                                let law = jm.mark_law().expect("mark law");
                                let mut acc = 0.0;
                                for _ in 0..mc {
                                    law.sample(rng, &mut s.mark);
                                    jm.jump_size(t, x, &s.a, &f, &s.mark, &mut s.beta);
                                    for j in 0..d {
                                        s.xn[j] = x[j] + s.beta[j];
                                    }
                                    acc += phi.linear_diff_at(&fr, &s.xn, x);
                                }
                                v[2] = rate * acc / mc as f64;
                            }
                        },
                    );
            }
            Mode::Singular { dynamics, .. } => {
                let dynamics: &dyn Dynamics = &**dynamics;
                let f = Features::of_cloud(cloud, d, dynamics.feature_polys());
                cloud
                    .par_chunks(d)
                    .zip(lions.par_chunks_mut(d))
                    .zip(vals.par_iter_mut())
                    .with_min_len(256)
                    .for_each_init(
                        || Scratch::new(d, dynamics.control_dim(), 0),
                        |s, ((x, g), v)| {
                            *v = point_generator(phi, &fr, dynamics, &f, t, x, g, s);
                        },
                    );
            }
        }
        Gen { vals, lions }
    }

    fn corollary_step(&mut self, rec: &StepRecord) -> Vec<[f64; 6]> {
        let d = self.d;
        let dt = rec.t_end - rec.t_start;
        let g0 = match self.cache.take() {
            Some(g) => g,
            None => self.generator(rec.t_start, rec.start),
        };
        let g1 = self.generator(rec.t_end, rec.end_left());
        let phi = &self.phi;
        let fr = phi.freeze_cloud(rec.start);
        let lambda: Option<&[f64]> = match &self.mode {
            Mode::Singular { lambda, .. } => Some(lambda),
            _ => None,
        };
        let contrib: Vec<[f64; 6]> = (0..self.n)
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || (vec![0.0; d], vec![0.0; d]),
                |(g, xn), i| {
                    let mut c = [0.0; 6];
                    let (a, b) = (&g0.vals[i], &g1.vals[i]);
                    c[DRIFT] = 0.5 * dt * (a[0] + b[0]);
                    c[QV] = 0.5 * dt * (a[1] + b[1]);
                    let Some(lam) = lambda else {
                        c[LIN] = 0.5 * dt * (a[2] + b[2]);
                        return c;
                    };
                    if let Some(ec) = rec.eta_continuous {
                        let (la, lb) = (&g0.lions[i * d..(i + 1) * d], &g1.lions[i * d..(i + 1) * d]);
                        for j in 0..d {
                            c[SING] += 0.5 * (la[j] + lb[j]) * lam[j] * ec[i * d + j];
                        }
                    }
                    for e in rec.events_of(i) {
                        phi.lions_at(&fr, &e.left, g);
                        let gj = dot(g, &e.jump);
                        c[SING] += gj;
                        c[COMP] -= gj;
                        for j in 0..d {
                            xn[j] = e.left[j] + e.jump[j];
                        }
                        c[LIN] += phi.linear_diff_at(&fr, xn, &e.left);
                    }
                    c
                },
            )
            .collect();
        if rec.common.is_none() {
            self.cache = Some(g1);
        }
        contrib
    }

    fn finish_step(&mut self, rec: &StepRecord, mut contrib: Vec<[f64; 6]>) {
        let singular = matches!(self.mode, Mode::Singular { .. });
        let law = match rec.common {
            Some(c) => self.common(c.left, rec.end, singular, &mut contrib),
            None => 0.0,
        };
        self.commit(contrib, law, rec.step, rec.t_start, rec.t_end);
    }

    /// Builds the report once the window end has been reached.
    pub fn report(&self) -> Result<ItoReport> {
        let (Some(phi_t), Some(phi_s)) = (self.phi_t, self.phi_s) else {
            return Err(Error::Invalid("the observed run did not cover the verification window".into()));
        };
        let inv = 1.0 / self.n as f64;
        let mut totals = [0.0; 6];
        for (j, tot) in totals.iter_mut().enumerate() {
            if j == LAW {
                *tot = self.law_total;
            } else {
                let col: Vec<f64> = self.acc.iter().map(|c| c[j]).collect();
                *tot = pairwise_sum(&col) * inv;
            }
        }
        let terms = ItoTerms::from_array(totals);
        let lhs = phi_s - phi_t;
        let dl: Vec<f64> = self.infl_s.iter().zip(&self.infl_t).map(|(a, b)| a - b).collect();
        let res: Vec<f64> = dl.iter().zip(&self.acc).map(|(l, c)| l - c.iter().sum::<f64>()).collect();
        Ok(ItoReport {
            method: self.method(),
            t: self.t,
            s: self.s,
            particles: self.n,
            lhs,
            lhs_se: mean_se(&dl).1,
            terms,
            residual: lhs - terms.total(),
            residual_se: mean_se(&res).1,
            max_dt: self.max_dt,
            steps: self.steps.clone(),
        })
    }
}

impl StepObserver for ItoAccumulator {
    fn begin(&mut self, info: &RunInfo, left: &[f64], value: &[f64], common: Option<CommonJump>) -> Result<()> {
        if info.dim != self.phi.dim() {
            return Err(Error::Dimension { expected: info.dim, found: self.phi.dim() });
        }
        if self.t_index >= self.s_index || self.s_index > info.grid.n_steps() {
            return Err(Error::Invalid(format!(
                "window [{}, {}] does not fit a grid with {} steps",
                self.t_index,
                self.s_index,
                info.grid.n_steps()
            )));
        }
        self.n = info.n;
        self.d = info.dim;
        self.acc = vec![[0.0; 6]; info.n];
        self.law_total = 0.0;
        self.steps.clear();
        self.cache = None;
        self.phi_t = None;
        self.phi_s = None;
        self.max_dt = 0.0;
        match &mut self.mode {
            Mode::Jump { marks, .. } => {
                *marks = (0..info.n as u64).map(|i| stream(info.seed, DOMAIN_MARKS, i)).collect();
            }
            Mode::Singular { lambda, .. } => {
                if info.lambda.is_some_and(|l| l != lambda.as_slice()) {
                    return Err(Error::Invalid("run lambda differs from the verifier's".into()));
                }
            }
            Mode::General => {}
        }
        if self.t_index == 0 {
            let t0 = info.grid.t0();
            if matches!(self.mode, Mode::Singular { .. }) {
                self.set_start(t0, left);
                if let Some(c) = common {
                    let mut contrib = vec![[0.0; 6]; self.n];
                    let law = self.common(c.left, value, true, &mut contrib);
                    self.commit(contrib, law, 0, t0, t0);
                }
            } else {
                self.set_start(t0, value);
            }
        }
        Ok(())
    }

    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        let k = rec.step;
        let singular = matches!(self.mode, Mode::Singular { .. });
        if singular && self.t_index > 0 && k + 1 == self.t_index {
            self.set_start(rec.t_end, rec.end_left());
            if let Some(c) = rec.common {
                let mut contrib = vec![[0.0; 6]; self.n];
                let law = self.common(c.left, rec.end, true, &mut contrib);
                self.commit(contrib, law, k, rec.t_end, rec.t_end);
            }
            return Ok(());
        }
        if !singular && self.t_index > 0 && k == self.t_index {
            self.set_start(rec.t_start, rec.start);
        }
        if k < self.t_index || k >= self.s_index {
            return Ok(());
        }
        self.max_dt = self.max_dt.max(rec.t_end - rec.t_start);
        let contrib = match self.mode {
            Mode::General => self.general_step(rec),
            _ => self.corollary_step(rec),
        };
        self.finish_step(rec, contrib);
        if k + 1 == self.s_index {
            self.set_end(rec.t_end, rec.end);
        }
        Ok(())
    }
}

struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    sig: Vec<f64>,
    h: Vec<f64>,
    mark: Vec<f64>,
    beta: Vec<f64>,
    xn: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, ad: usize, q: usize) -> Self {
        Scratch {
            a: vec![0.0; ad],
            b: vec![0.0; d],
            sig: vec![0.0; d * d],
            h: vec![0.0; d * d],
            mark: vec![0.0; q],
            beta: vec![0.0; d],
            xn: vec![0.0; d],
        }
    }
}

/// `[d_mu Phi . b, 1/2 tr(sigma sigma^T d_x d_mu Phi), 0]` at one particle; leaves the control
/// in `s.a` and the Lions derivative in `g`.
#[allow(clippy::too_many_arguments)]
fn point_generator(
    phi: &CylindricalFunctional,
    fr: &Frozen,
    dynamics: &dyn Dynamics,
    f: &Features,
    t: f64,
    x: &[f64],
    g: &mut [f64],
    s: &mut Scratch,
) -> [f64; 3] {
    let d = x.len();
    dynamics.control(t, x, f, &mut s.a);
    dynamics.drift(t, x, &s.a, f, &mut s.b);
    dynamics.diffusion(t, x, &s.a, f, &mut s.sig);
    phi.lions_at(fr, x, g);
    phi.lions_x_at(fr, x, &mut s.h);
    let mut qv = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut a = 0.0;
            for k in 0..d {
                a += s.sig[i * d + k] * s.sig[j * d + k];
            }
            qv += a * s.h[i * d + j];
        }
    }
    [dot(g, &s.b), 0.5 * qv, 0.0]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
