use std::collections::BTreeMap;

use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use super::bundle::PathBundle;
use super::{
    CommonJump, Dynamics, EtaScenario, Features, IdiosyncraticEta, InitialLaw, JumpDiffusionSpec, JumpEvent,
    JumpModel, Reflection, RunInfo, SingularSpec, StepObserver, StepRecord, TimeGrid,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream, DOMAIN_PATH};

struct Particle {
    rng: Stream,
    next_jump: f64,
    next_eta: f64,
}

struct Ctx<'a> {
    dynamics: &'a dyn Dynamics,
    jumps: Option<&'a dyn JumpModel>,
    rate: f64,
    lambda: Option<&'a [f64]>,
    eta_rate: Option<&'a [f64]>,
    idio: Option<&'a IdiosyncraticEta>,
    common: BTreeMap<usize, Vec<f64>>,
    reflection: Option<&'a dyn Reflection>,
}

struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    sig: Vec<f64>,
    inc: Vec<f64>,
    mark: Vec<f64>,
    jump: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, ad: usize, q: usize) -> Self {
        Scratch {
            a: vec![0.0; ad],
            b: vec![0.0; d],
            sig: vec![0.0; d * d],
            inc: vec![0.0; d],
            mark: vec![0.0; q],
            jump: vec![0.0; d],
        }
    }
}

impl Ctx<'_> {
    fn singular(&self) -> bool {
        self.lambda.is_some()
    }

    #[allow(clippy::too_many_arguments)]
    fn euler(
        &self,
        f: &Features,
        t: f64,
        h: f64,
        y: &mut [f64],
        qv: &mut [f64],
        eta_c: &mut [f64],
        rng: &mut Stream,
        s: &mut Scratch,
    ) {
        let d = y.len();
        self.dynamics.control(t, y, f, &mut s.a);
        self.dynamics.drift(t, y, &s.a, f, &mut s.b);
        self.dynamics.diffusion(t, y, &s.a, f, &mut s.sig);
        let sq = h.sqrt();
        for i in 0..d {
            s.inc[i] = s.b[i] * h;
        }
        for j in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            for i in 0..d {
                s.inc[i] += s.sig[i * d + j] * sq * z;
            }
        }
        if let (Some(lam), Some(r)) = (self.lambda, self.eta_rate) {
            for i in 0..d {
                s.inc[i] += lam[i] * r[i] * h;
                eta_c[i] += r[i] * h;
            }
        }
        for i in 0..d {
            y[i] += s.inc[i];
            for j in 0..d {
                let mut v = 0.0;
                for k in 0..d {
                    v += s.sig[i * d + k] * s.sig[j * d + k];
                }
                qv[i * d + j] += v * h;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        i: usize,
        f: &Features,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        qv: &mut [f64],
        eta_c: &mut [f64],
        p: &mut Particle,
        s: &mut Scratch,
    ) -> Vec<JumpEvent> {
        let d = y.len();
        let mut events = Vec::new();
        let mut t = t0;
        loop {
            let next = p.next_jump.min(p.next_eta);
            if next > t1 {
                break;
            }
            let mut piece = vec![0.0; d * d];
            self.euler(f, t, next - t, y, &mut piece, eta_c, &mut p.rng, s);
            for (a, b) in qv.iter_mut().zip(&piece) {
                *a += b;
            }
            let left = y.to_vec();
            let (jump, eta) = if p.next_jump <= p.next_eta {
                let jm = self.jumps.expect("jump clock without jump model");
                self.dynamics.control(next, y, f, &mut s.a);
                jm.mark_law().expect("mark law").sample(&mut p.rng, &mut s.mark);
                jm.jump_size(next, y, &s.a, f, &s.mark, &mut s.jump);
                let e: f64 = Exp1.sample(&mut p.rng);
                p.next_jump += e / self.rate;
                (s.jump.clone(), None)
            } else {
                let lam = self.lambda.expect("eta jump without lambda");
                let size = match self.idio.expect("eta clock without scenario") {
                    IdiosyncraticEta::Poisson { rate, size } => {
                        let e: f64 = Exp1.sample(&mut p.rng);
                        p.next_eta += e / rate;
                        size
                    }
                    IdiosyncraticEta::UniformOnce { size, .. } => {
                        p.next_eta = f64::INFINITY;
                        size
                    }
                };
                (size.iter().zip(lam).map(|(s, l)| s * l).collect::<Vec<f64>>(), Some(size.clone()))
            };
            for (yi, ji) in y.iter_mut().zip(&jump) {
                *yi += ji;
            }
            events.push(JumpEvent { particle: i, time: next, left, jump, eta, qv_before: piece });
            t = next;
        }
        self.euler(f, t, t1 - t, y, qv, eta_c, &mut p.rng, s);
        events
    }

    fn run(
        &self,
        initial: &InitialLaw,
        n: usize,
        grid: &TimeGrid,
        seed: u64,
        obs: &mut dyn StepObserver,
    ) -> Result<()> {
        if n == 0 {
            return Err(Error::Invalid("need at least one particle".into()));
        }
        let d = self.dynamics.dim();
        let ad = self.dynamics.control_dim();
        let q = self.jumps.and_then(|j| j.mark_law()).map_or(0, |m| m.dim());
        let t0 = grid.t0();
        let init: Vec<(Particle, Vec<f64>)> = (0..n)
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| {
                let mut rng = stream(seed, DOMAIN_PATH, i as u64);
                let mut x = vec![0.0; d];
                initial.sample(&mut rng, i, &mut x);
                let next_jump = if self.rate > 0.0 {
                    let e: f64 = Exp1.sample(&mut rng);
                    t0 + e / self.rate
                } else {
                    f64::INFINITY
                };
                let next_eta = match self.idio {
                    Some(IdiosyncraticEta::Poisson { rate, .. }) if *rate > 0.0 => {
                        let e: f64 = Exp1.sample(&mut rng);
                        t0 + e / rate
                    }
                    Some(IdiosyncraticEta::UniformOnce { window, .. }) => {
                        let u: f64 = rand::Rng::random(&mut rng);
                        window[0] + (window[1] - window[0]) * u
                    }
                    _ => f64::INFINITY,
                };
                (Particle { rng, next_jump, next_eta }, x)
            })
            .collect();
        let mut particles = Vec::with_capacity(n);
        let mut cur = Vec::with_capacity(n * d);
        for (p, x) in init {
            particles.push(p);
            cur.extend_from_slice(&x);
        }
        if let Some(i) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: 0, particle: i / d });
        }
        let info = RunInfo { grid, n, dim: d, seed, lambda: self.lambda };
        match (self.reflection, self.lambda) {
            (Some(r), Some(lam)) => {
                let left = cur.clone();
                let push = r.project(t0, &mut cur, d, lam)?;
                check_pushes(&push, 0, d)?;
                if push.iter().any(|v| *v > 0.0) {
                    obs.begin(&info, &left, &cur, Some(CommonJump { left: &left, eta: &push }))?;
                } else {
                    obs.begin(&info, &cur, &cur, None)?;
                }
            }
            _ => obs.begin(&info, &cur, &cur, None)?,
        }

        let polys = self.dynamics.feature_polys();
        let mut next = vec![0.0; n * d];
        let mut qv = vec![0.0; n * d * d];
        let mut etac = vec![0.0; n * d];
        let mut ev: Vec<Vec<JumpEvent>> = (0..n).map(|_| Vec::new()).collect();
        for k in 0..grid.n_steps() {
            let (ta, tb) = (grid.nodes()[k], grid.nodes()[k + 1]);
            let feats = Features::of_cloud(&cur, d, polys);
            next.copy_from_slice(&cur);
            qv.iter_mut().for_each(|v| *v = 0.0);
            etac.iter_mut().for_each(|v| *v = 0.0);
            next.par_chunks_mut(d)
                .zip(qv.par_chunks_mut(d * d))
                .zip(etac.par_chunks_mut(d))
                .zip(particles.par_iter_mut())
                .zip(ev.par_iter_mut())
                .enumerate()
                .with_min_len(256)
                .for_each_init(
                    || Scratch::new(d, ad, q),
                    |s, (i, ((((y, qvi), eci), p), e))| {
                        *e = self.advance(i, &feats, ta, tb, y, qvi, eci, p, s);
                    },
                );
            if let Some(i) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState { step: k, particle: i / d });
            }
            if let (Some(r), Some(lam)) = (self.reflection, self.lambda) {
                let push = r.project(tb, &mut next, d, lam)?;
                check_pushes(&push, k + 1, d)?;
                for (a, b) in etac.iter_mut().zip(&push) {
                    *a += b;
                }
            }
            let mut offsets = Vec::with_capacity(n + 1);
            offsets.push(0);
            let mut events = Vec::new();
            for e in ev.iter_mut() {
                events.append(e);
                offsets.push(events.len());
            }
            let common_data = self.common.get(&(k + 1)).map(|size| {
                let lam = self.lambda.expect("common jump without lambda");
                let left = next.clone();
                for x in next.chunks_mut(d) {
                    for j in 0..d {
                        x[j] += lam[j] * size[j];
                    }
                }
                let eta: Vec<f64> = (0..n).flat_map(|_| size.iter().copied()).collect();
                (left, eta)
            });
            let rec = StepRecord {
                step: k,
                t_start: ta,
                t_end: tb,
                start: &cur,
                end: &next,
                qv: &qv,
                eta_continuous: self.singular().then_some(&etac[..]),
                events: &events,
                offsets: &offsets,
                common: common_data.as_ref().map(|(l, e)| CommonJump { left: l, eta: e }),
            };
            obs.step(&rec)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(())
    }
}

fn check_pushes(push: &[f64], step: usize, d: usize) -> Result<()> {
    if let Some(i) = push.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::DecreasingEta { step, particle: i / d });
    }
    Ok(())
}

/// Streams a McKean-Vlasov jump-diffusion through `obs`.
pub fn run_jump_diffusion(
    spec: &JumpDiffusionSpec,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
    obs: &mut dyn StepObserver,
) -> Result<()> {
    let rate = spec.model.jump_rate();
    if !(rate >= 0.0) {
        return Err(Error::Invalid(format!("negative jump rate {rate}")));
    }
    let dynamics: &dyn Dynamics = spec.model.as_ref();
    let ctx = Ctx {
        dynamics,
        jumps: (rate > 0.0).then_some(spec.model.as_ref()),
        rate,
        lambda: None,
        eta_rate: None,
        idio: None,
        common: BTreeMap::new(),
        reflection: None,
    };
    ctx.run(&spec.initial, n, grid, seed, obs)
}

pub fn simulate_jump_diffusion(spec: &JumpDiffusionSpec, n: usize, grid: &TimeGrid, seed: u64) -> Result<PathBundle> {
    let mut b = PathBundle::recorder();
    run_jump_diffusion(spec, n, grid, seed, &mut b)?;
    Ok(b)
}

/// Streams singularly controlled dynamics through `obs`. Common jump times must be grid nodes
/// (build the grid with [`TimeGrid::with_mandatory`] and [`SingularSpec::common_times`]).
pub fn run_singular(spec: &SingularSpec, n: usize, grid: &TimeGrid, seed: u64, obs: &mut dyn StepObserver) -> Result<()> {
    let mut common = BTreeMap::new();
    let mut eta_rate = None;
    let mut idio = None;
    let mut reflection = None;
    match &spec.eta {
        EtaScenario::None => {}
        EtaScenario::Deterministic { jumps, rate } => {
            for (t, size) in jumps {
                let k = grid
                    .node_index(*t)
                    .filter(|k| *k > 0)
                    .ok_or_else(|| Error::Invalid(format!("common jump time {t} is not an interior grid node")))?;
                let e: &mut Vec<f64> = common.entry(k).or_insert_with(|| vec![0.0; size.len()]);
                for (a, b) in e.iter_mut().zip(size) {
                    *a += b;
                }
            }
            if rate.iter().any(|r| *r != 0.0) {
                eta_rate = Some(&rate[..]);
            }
        }
        EtaScenario::Idiosyncratic(s) => idio = Some(s),
        EtaScenario::Reflection(r) => reflection = Some(r.as_ref()),
    }
    let ctx = Ctx {
        dynamics: spec.dynamics.as_ref(),
        jumps: None,
        rate: 0.0,
        lambda: Some(&spec.lambda),
        eta_rate,
        idio,
        common,
        reflection,
    };
    ctx.run(&spec.initial, n, grid, seed, obs)
}

pub fn simulate_singular(spec: &SingularSpec, n: usize, grid: &TimeGrid, seed: u64) -> Result<PathBundle> {
    let mut b = PathBundle::recorder();
    run_singular(spec, n, grid, seed, &mut b)?;
    Ok(b)
}
