//! Time axes and space-time boundary traces.

use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};

/// Uniform time axis `t_k = k dt`, `k = 0..=nt`; the observation window is `tau = nt dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    dt: f64,
    nt: usize,
}

impl TimeAxis {
    pub fn new(dt: f64, nt: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if nt == 0 {
            return Err(Error::Config("need at least one time step".into()));
        }
        Ok(Self { dt, nt })
    }

    /// Smallest number of steps with `dt <= dt_max` covering `tau` exactly.
    pub fn covering(tau: f64, dt_max: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("observation time must be positive, got {tau}")));
        }
        if !(dt_max > 0.0) {
            return Err(Error::Config(format!("maximal time step must be positive, got {dt_max}")));
        }
        let nt = (tau / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(tau / nt as f64, nt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn tau(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    pub fn levels(&self) -> usize {
        self.nt + 1
    }

    /// Trapezoidal weight of level `k` (without the `dt` factor).
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.nt {
            0.5
        } else {
            1.0
        }
    }

    /// Axis with the same window and `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("refinement factor must be >= 1".into()));
        }
        Self::new(self.dt / factor as f64, self.nt * factor)
    }
}

/// Samples of a function on `[0, tau] x ∂Ω`, stored time-outer:
/// `values[k * n_nodes + b]` is the value at level `k` and boundary node `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    n_nodes: usize,
    times: TimeAxis,
    values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn zeros(n_nodes: usize, times: TimeAxis) -> Self {
        Self { n_nodes, times, values: vec![0.0; n_nodes * times.levels()] }
    }

    pub fn from_values(n_nodes: usize, times: TimeAxis, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_nodes * times.levels() {
            return Err(Error::Dimension(format!(
                "trace needs {} x {} values, got {}",
                times.levels(),
                n_nodes,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite trace value at position {k}")));
        }
        Ok(Self { n_nodes, times, values })
    }

    /// Samples `f(k, b)` for every level and node.
    pub fn from_fn(n_nodes: usize, times: TimeAxis, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_nodes * times.levels());
        for k in 0..times.levels() {
            for b in 0..n_nodes {
                values.push(f(k, b));
            }
        }
        Self { n_nodes, times, values }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn times(&self) -> &TimeAxis {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n_nodes..(k + 1) * self.n_nodes]
    }

    pub fn get(&self, k: usize, b: usize) -> f64 {
        self.values[k * self.n_nodes + b]
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Root-mean-square of all samples.
    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Checks that the trace lives on `bnd` and, when `gamma_supported`, vanishes off Γ.
    pub fn check_against(&self, bnd: &BoundarySpec, gamma_supported: bool) -> Result<()> {
        if self.n_nodes != bnd.len() {
            return Err(Error::Dimension(format!(
                "trace has {} boundary nodes, boundary has {}",
                self.n_nodes,
                bnd.len()
            )));
        }
        if gamma_supported {
            for k in 0..self.times.levels() {
                for (b, &g) in bnd.gamma().iter().enumerate() {
                    if !g && self.get(k, b) != 0.0 {
                        return Err(Error::Contract(format!(
                            "trace is nonzero at unobserved boundary node {b} (level {k})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy with every unobserved node set to zero.
    pub fn restricted_to(&self, gamma: &[bool]) -> Self {
        let mut out = self.clone();
        for k in 0..self.times.levels() {
            for (v, &g) in out.level_mut(k).iter_mut().zip(gamma) {
                if !g {
                    *v = 0.0;
                }
            }
        }
        out
    }

    pub(crate) fn ensure_compatible(&self, other: &BoundaryTrace, what: &str) -> Result<()> {
        if self.n_nodes != other.n_nodes || self.times != other.times {
            return Err(Error::Dimension(format!("{what}: traces live on different boundaries or time axes")));
        }
        Ok(())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &BoundaryTrace) -> Result<Self> {
        self.ensure_compatible(other, "axpy")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Ok(Self { n_nodes: self.n_nodes, times: self.times, values })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { n_nodes: self.n_nodes, times: self.times, values: self.values.iter().map(|v| s * v).collect() }
    }
}
