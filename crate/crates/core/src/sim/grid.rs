use crate::error::{Error, Result};

/// Uniform grid on `[t0, t_end]`, refined so that every mandatory time is a node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
    mandatory: Vec<f64>,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        Self::with_mandatory(t0, t_end, steps, &[])
    }

    pub fn with_mandatory(t0: f64, t_end: f64, steps: usize, mandatory: &[f64]) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t0 < t_end) {
            return Err(Error::Invalid(format!("grid needs t0 < T, got [{t0}, {t_end}]")));
        }
        if steps == 0 {
            return Err(Error::Invalid("grid needs at least one step".into()));
        }
        let mut m: Vec<f64> = mandatory.to_vec();
        m.sort_by(f64::total_cmp);
        m.dedup();
        if let Some(bad) = m.iter().find(|&&t| !(t > t0 && t <= t_end)) {
            return Err(Error::Invalid(format!("mandatory time {bad} outside (t0, T]")));
        }
        let dt = (t_end - t0) / steps as f64;
        let mut nodes: Vec<f64> =
            (0..=steps).map(|k| if k == steps { t_end } else { t0 + (t_end - t0) * (k as f64 / steps as f64) }).collect();
        let tol = 1e-9 * dt;
        for &t in &m {
            let pos = nodes.partition_point(|&x| x < t);
            if pos < nodes.len() && (nodes[pos] - t).abs() <= tol {
                nodes[pos] = t;
            } else if pos > 0 && (nodes[pos - 1] - t).abs() <= tol {
                nodes[pos - 1] = t;
            } else {
                nodes.insert(pos, t);
            }
        }
        Ok(TimeGrid { t0, t_end, steps, mandatory: m, nodes })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn base_steps(&self) -> usize {
        self.steps
    }

    pub fn base_dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    pub fn mandatory(&self) -> &[f64] {
        &self.mandatory
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Index of the node equal to `t` (exactly, or within 1e-9 of a base step).
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.base_dt();
        let pos = self.nodes.partition_point(|&x| x < t - tol);
        (pos < self.nodes.len() && (self.nodes[pos] - t).abs() <= tol).then_some(pos)
    }
}
