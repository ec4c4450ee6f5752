use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use super::{CommonJump, JumpEvent, RunInfo, StepObserver, StepRecord, TimeGrid};
use crate::error::{Error, Result};
use crate::measure::{cloud_mean_var, EmpiricalMeasure};

const MAGIC: &[u8; 8] = b"MFPATH01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpKind {
    Idiosyncratic,
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One jump-log row. Idiosyncratic jumps are attached to the node closing their step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpLogEntry {
    pub node: usize,
    pub time: f64,
    pub particle: usize,
    pub jump: Vec<f64>,
    pub kind: JumpKind,
}

/// Full record of a simulation: node values, left limits at common-jump nodes, continuous
/// quadratic variation per step, eta increments and every idiosyncratic jump.
#[derive(Debug, Clone, Default)]
pub struct PathBundle {
    grid: Option<TimeGrid>,
    n: usize,
    dim: usize,
    seed: u64,
    lambda: Option<Vec<f64>>,
    states: Vec<f64>,
    common: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
    qv: Vec<f64>,
    eta: Option<Vec<f64>>,
    events: Vec<Vec<JumpEvent>>,
    offsets: Vec<Vec<usize>>,
}

impl PathBundle {
    pub(crate) fn recorder() -> Self {
        PathBundle::default()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.grid.as_ref().expect("bundle not recorded")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lambda(&self) -> Option<&[f64]> {
        self.lambda.as_deref()
    }

    pub fn n_nodes(&self) -> usize {
        self.grid().nodes().len()
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.n_nodes() {
            return Err(Error::OutOfRange { index: node, len: self.n_nodes() });
        }
        Ok(())
    }

    /// Post-jump values at a node (flat N x d).
    pub fn values(&self, node: usize) -> &[f64] {
        let w = self.n * self.dim;
        &self.states[node * w..(node + 1) * w]
    }

    /// Left limits at a node; equal to the values unless the node carries a common jump.
    pub fn left(&self, node: usize) -> &[f64] {
        self.common.get(&node).map_or_else(|| self.values(node), |(l, _)| &l[..])
    }

    pub fn is_common(&self, node: usize) -> bool {
        self.common.contains_key(&node)
    }

    pub fn common_nodes(&self) -> Vec<usize> {
        self.common.keys().copied().collect()
    }

    pub fn marginal(&self, node: usize, side: Side) -> Result<EmpiricalMeasure> {
        self.check_node(node)?;
        let pts = match side {
            Side::Left => self.left(node),
            Side::Right => self.values(node),
        };
        EmpiricalMeasure::from_flat(self.dim, pts.to_vec())
    }

    pub fn qv(&self, step: usize) -> &[f64] {
        let w = self.n * self.dim * self.dim;
        &self.qv[step * w..(step + 1) * w]
    }

    pub fn eta_continuous(&self, step: usize) -> Option<&[f64]> {
        let w = self.n * self.dim;
        self.eta.as_ref().map(|e| &e[step * w..(step + 1) * w])
    }

    pub fn events(&self, step: usize) -> &[JumpEvent] {
        &self.events[step]
    }

    /// Total eta per particle at the final node (flat N x d).
    pub fn eta_totals(&self) -> Vec<f64> {
        let w = self.n * self.dim;
        let mut tot = vec![0.0; w];
        if let Some(e) = &self.eta {
            for s in e.chunks(w) {
                for (a, b) in tot.iter_mut().zip(s) {
                    *a += b;
                }
            }
        }
        for (_, eta) in self.common.values() {
            for (a, b) in tot.iter_mut().zip(eta) {
                *a += b;
            }
        }
        for evs in &self.events {
            for e in evs {
                if let Some(x) = &e.eta {
                    for (j, v) in x.iter().enumerate() {
                        tot[e.particle * self.dim + j] += v;
                    }
                }
            }
        }
        tot
    }

    pub fn jump_log(&self) -> Vec<JumpLogEntry> {
        let mut log = Vec::new();
        let nodes = self.grid().nodes();
        for node in 0..nodes.len() {
            if node > 0 {
                for e in &self.events[node - 1] {
                    log.push(JumpLogEntry {
                        node,
                        time: e.time,
                        particle: e.particle,
                        jump: e.jump.clone(),
                        kind: JumpKind::Idiosyncratic,
                    });
                }
            }
            if let Some((left, _)) = self.common.get(&node) {
                let val = self.values(node);
                for i in 0..self.n {
                    let r = i * self.dim..(i + 1) * self.dim;
                    let jump = val[r.clone()].iter().zip(&left[r]).map(|(a, b)| a - b).collect();
                    log.push(JumpLogEntry { node, time: nodes[node], particle: i, jump, kind: JumpKind::Common });
                }
            }
        }
        log
    }

    /// Feeds the stored paths to an observer exactly as the simulator did.
    pub fn replay(&self, obs: &mut dyn StepObserver) -> Result<()> {
        let grid = self.grid();
        let info = RunInfo { grid, n: self.n, dim: self.dim, seed: self.seed, lambda: self.lambda.as_deref() };
        let c0 = self.common.get(&0).map(|(l, e)| CommonJump { left: l, eta: e });
        obs.begin(&info, self.left(0), self.values(0), c0)?;
        for k in 0..grid.n_steps() {
            let rec = StepRecord {
                step: k,
                t_start: grid.nodes()[k],
                t_end: grid.nodes()[k + 1],
                start: self.values(k),
                end: self.values(k + 1),
                qv: self.qv(k),
                eta_continuous: self.eta_continuous(k),
                events: &self.events[k],
                offsets: &self.offsets[k],
                common: self.common.get(&(k + 1)).map(|(l, e)| CommonJump { left: l, eta: e }),
            };
            obs.step(&rec)?;
        }
        Ok(())
    }

    /// Binary columnar export (little endian):
    /// `MFPATH01`, u64 n, u64 dim, u64 nodes, u64 seed, f64[nodes] times,
    /// f64[nodes * n * dim] values (node-major), u64 common count, then per common node
    /// u64 node and f64[n * dim] left limits, u64 log length, then per entry
    /// u64 node, u64 particle, u8 kind (0 idiosyncratic, 1 common), f64 time, f64[dim] jump.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.n as u64, self.dim as u64, self.n_nodes() as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in self.grid().nodes() {
            w.write_all(&t.to_le_bytes())?;
        }
        for v in &self.states {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.common.len() as u64).to_le_bytes())?;
        for (node, (left, _)) in &self.common {
            w.write_all(&(*node as u64).to_le_bytes())?;
            for v in left {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let log = self.jump_log();
        w.write_all(&(log.len() as u64).to_le_bytes())?;
        for e in &log {
            w.write_all(&(e.node as u64).to_le_bytes())?;
            w.write_all(&(e.particle as u64).to_le_bytes())?;
            w.write_all(&[u8::from(e.kind == JumpKind::Common)])?;
            w.write_all(&e.time.to_le_bytes())?;
            for v in &e.jump {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Per-node ensemble mean and trace variance plus jump counts.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["node".to_string(), "t".to_string()];
        header.extend((1..=self.dim).map(|j| format!("mean_x{j}")));
        header.extend(["variance", "idiosyncratic_jumps", "common_jump"].map(String::from));
        wr.write_record(&header)?;
        for node in 0..self.n_nodes() {
            let (m, v) = cloud_mean_var(self.values(node), self.dim);
            let jumps = if node > 0 { self.events[node - 1].len() } else { 0 };
            let mut row = vec![node.to_string(), format!("{:e}", self.grid().nodes()[node])];
            row.extend(m.iter().map(|x| format!("{x:e}")));
            row.push(format!("{v:e}"));
            row.push(jumps.to_string());
            row.push(u8::from(self.is_common(node)).to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Contents of a binary bundle export.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleFile {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub common_left: Vec<(usize, Vec<f64>)>,
    pub log: Vec<JumpLogEntry>,
}

impl BundleFile {
    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Invalid("not a path bundle file".into()));
        }
        let u = |r: &mut R| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let f = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let n = u(&mut r)? as usize;
        let dim = u(&mut r)? as usize;
        let nodes = u(&mut r)? as usize;
        let seed = u(&mut r)?;
        let times = (0..nodes).map(|_| f(&mut r)).collect::<Result<Vec<_>>>()?;
        let values = (0..nodes * n * dim).map(|_| f(&mut r)).collect::<Result<Vec<_>>>()?;
        let nc = u(&mut r)? as usize;
        let mut common_left = Vec::with_capacity(nc);
        for _ in 0..nc {
            let node = u(&mut r)? as usize;
            let left = (0..n * dim).map(|_| f(&mut r)).collect::<Result<Vec<_>>>()?;
            common_left.push((node, left));
        }
        let nl = u(&mut r)? as usize;
        let mut log = Vec::with_capacity(nl);
        for _ in 0..nl {
            let node = u(&mut r)? as usize;
            let particle = u(&mut r)? as usize;
            let mut k = [0u8; 1];
            r.read_exact(&mut k)?;
            let time = f(&mut r)?;
            let jump = (0..dim).map(|_| f(&mut r)).collect::<Result<Vec<_>>>()?;
            let kind = if k[0] == 1 { JumpKind::Common } else { JumpKind::Idiosyncratic };
            log.push(JumpLogEntry { node, time, particle, jump, kind });
        }
        Ok(BundleFile { n, dim, seed, times, values, common_left, log })
    }
}

impl StepObserver for PathBundle {
    fn begin(&mut self, info: &RunInfo, _left: &[f64], value: &[f64], common: Option<CommonJump>) -> Result<()> {
        let steps = info.grid.n_steps();
        self.grid = Some(info.grid.clone());
        self.n = info.n;
        self.dim = info.dim;
        self.seed = info.seed;
        self.lambda = info.lambda.map(|l| l.to_vec());
        self.states = Vec::with_capacity((steps + 1) * info.n * info.dim);
        self.states.extend_from_slice(value);
        self.common.clear();
        if let Some(c) = common {
            self.common.insert(0, (c.left.to_vec(), c.eta.to_vec()));
        }
        self.qv = Vec::with_capacity(steps * info.n * info.dim * info.dim);
        self.eta = info.lambda.map(|_| Vec::with_capacity(steps * info.n * info.dim));
        self.events = Vec::with_capacity(steps);
        self.offsets = Vec::with_capacity(steps);
        Ok(())
    }

    fn step(&mut self, rec: &StepRecord) -> Result<()> {
        self.states.extend_from_slice(rec.end);
        self.qv.extend_from_slice(rec.qv);
        if let (Some(e), Some(src)) = (self.eta.as_mut(), rec.eta_continuous) {
            e.extend_from_slice(src);
        }
        self.events.push(rec.events.to_vec());
        self.offsets.push(rec.offsets.to_vec());
        if let Some(c) = rec.common {
            self.common.insert(rec.step + 1, (c.left.to_vec(), c.eta.to_vec()));
        }
        Ok(())
    }
}
