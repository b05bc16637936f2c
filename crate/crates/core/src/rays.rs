//! Broken geodesics of the metric `c⁻² dx²` with specular reflection off the
//! unobserved boundary, used to estimate an observation time τ̂.
//!
//! Rays follow the Hamiltonian flow of `H(x, p) = ½ (c(x)² |p|² − 1)`:
//! `ẋ = c² p`, `ṗ = −c ∇c |p|²`, integrated by classical RK4 in time.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::medium::SpeedModel;

/// Contacts closer than this to the tangent direction are grazing.
pub const GRAZING_ANGLE_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayState {
    pub x: [f64; 2],
    pub p: [f64; 2],
}

impl RayState {
    /// Ray through `x` heading along `dir`, with `p` scaled so that `c |p| = 1`.
    pub fn new(x: [f64; 2], dir: [f64; 2], model: &dyn SpeedModel) -> Self {
        let n = dir[0].hypot(dir[1]);
        let s = 1.0 / (model.speed(x) * n);
        Self { x, p: [dir[0] * s, dir[1] * s] }
    }

    pub fn hamiltonian(&self, model: &dyn SpeedModel) -> f64 {
        let c = model.speed(self.x);
        0.5 * (c * c * (self.p[0] * self.p[0] + self.p[1] * self.p[1]) - 1.0)
    }
}

fn rhs(s: &RayState, model: &dyn SpeedModel) -> ([f64; 2], [f64; 2]) {
    let c = model.speed(s.x);
    let g = model.gradient(s.x);
    let p2 = s.p[0] * s.p[0] + s.p[1] * s.p[1];
    ([c * c * s.p[0], c * c * s.p[1]], [-c * g[0] * p2, -c * g[1] * p2])
}

fn rk4(s: &RayState, h: f64, model: &dyn SpeedModel) -> RayState {
    let shift = |s: &RayState, k: &([f64; 2], [f64; 2]), a: f64| RayState {
        x: [s.x[0] + a * k.0[0], s.x[1] + a * k.0[1]],
        p: [s.p[0] + a * k.1[0], s.p[1] + a * k.1[1]],
    };
    let k1 = rhs(s, model);
    let k2 = rhs(&shift(s, &k1, 0.5 * h), model);
    let k3 = rhs(&shift(s, &k2, 0.5 * h), model);
    let k4 = rhs(&shift(s, &k3, h), model);
    let mut out = *s;
    for d in 0..2 {
        out.x[d] += h / 6.0 * (k1.0[d] + 2.0 * k2.0[d] + 2.0 * k3.0[d] + k4.0[d]);
        out.p[d] += h / 6.0 * (k1.1[d] + 2.0 * k2.1[d] + 2.0 * k3.1[d] + k4.1[d]);
    }
    out
}

/// Largest distance by which `x` lies outside the rectangle (≤ 0 inside).
fn excess(x: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    (lo[0] - x[0]).max(x[0] - hi[0]).max(lo[1] - x[1]).max(x[1] - hi[1])
}

/// Result of tracing one ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayRecord {
    pub start_x: f64,
    pub start_y: f64,
    pub dir_x: f64,
    pub dir_y: f64,
    /// Time of the first contact with Γ, if reached before `t_max`.
    pub hit_time: Option<f64>,
    pub reflections: usize,
    /// Some boundary contact was within the grazing angle.
    pub grazing: bool,
    /// The contact with Γ itself was grazing.
    pub grazing_hit: bool,
    /// Largest |H| seen along the ray.
    pub max_hamiltonian: f64,
}

/// Traces one broken ray until it meets Γ or `t_max` elapses.
pub fn trace_ray(
    start: RayState,
    model: &dyn SpeedModel,
    bnd: &BoundarySpec,
    t_max: f64,
    ds: f64,
) -> Result<RayRecord> {
    if !(ds > 0.0) || !(t_max > 0.0) {
        return Err(Error::Config(format!("ray step and horizon must be positive (ds = {ds}, t_max = {t_max})")));
    }
    let grid = bnd.grid();
    let lo = grid.origin();
    let hi = grid.upper();
    if excess(start.x, lo, hi) >= 0.0 {
        return Err(Error::Contract(format!("ray start {:?} is not inside the domain", start.x)));
    }
    let h0 = start.hamiltonian(model);
    if h0.abs() > 1e-10 {
        return Err(Error::Contract(format!("ray start is not normalised (H = {h0:e})")));
    }
    let pn = start.p[0].hypot(start.p[1]);
    let mut rec = RayRecord {
        start_x: start.x[0],
        start_y: start.x[1],
        dir_x: start.p[0] / pn,
        dir_y: start.p[1] / pn,
        hit_time: None,
        reflections: 0,
        grazing: false,
        grazing_hit: false,
        max_hamiltonian: h0.abs(),
    };
    let mut s = start;
    let mut t = 0.0;
    let sin_graze = GRAZING_ANGLE_DEG.to_radians().sin();
    while t < t_max {
        let h = ds.min(t_max - t);
        let next = rk4(&s, h, model);
        if excess(next.x, lo, hi) <= 0.0 {
            s = next;
            t += h;
            rec.max_hamiltonian = rec.max_hamiltonian.max(s.hamiltonian(model).abs());
            continue;
        }
        // bisection on the step length for the boundary contact
        let (mut a, mut b) = (0.0, h);
        while b - a > 1e-10 * ds {
            let m = 0.5 * (a + b);
            if excess(rk4(&s, m, model).x, lo, hi) <= 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let contact = rk4(&s, a, model);
        t += a;
        if t > t_max {
            break;
        }
        let beyond = rk4(&s, b, model).x;
        let on = [beyond[0] < lo[0], beyond[0] > hi[0], beyond[1] < lo[1], beyond[1] > hi[1]];
        let mut normal: [f64; 2] = [0.0, 0.0];
        if on[0] {
            normal[0] -= 1.0;
        }
        if on[1] {
            normal[0] += 1.0;
        }
        if on[2] {
            normal[1] -= 1.0;
        }
        if on[3] {
            normal[1] += 1.0;
        }
        let nn = normal[0].hypot(normal[1]);
        let normal = [normal[0] / nn, normal[1] / nn];
        let pnorm = contact.p[0].hypot(contact.p[1]);
        let sin_inc = ((contact.p[0] * normal[0] + contact.p[1] * normal[1]) / pnorm).abs();
        let grazing = sin_inc < sin_graze;
        rec.grazing |= grazing;
        rec.max_hamiltonian = rec.max_hamiltonian.max(contact.hamiltonian(model).abs());
        if gamma_at(grid, bnd, contact.x) {
            rec.hit_time = Some(t);
            rec.grazing_hit = grazing;
            return Ok(rec);
        }
        s = RayState { x: contact.x, p: reflect(contact.p, on) };
        rec.reflections += 1;
    }
    Ok(rec)
}

/// Specular reflection: flips the momentum components normal to the faces hit.
pub fn reflect(p: [f64; 2], on: [bool; 4]) -> [f64; 2] {
    let mut q = p;
    if (on[0] && q[0] < 0.0) || (on[1] && q[0] > 0.0) {
        q[0] = -q[0];
    }
    if (on[2] && q[1] < 0.0) || (on[3] && q[1] > 0.0) {
        q[1] = -q[1];
    }
    q
}

/// Whether the boundary node nearest to `x` is observed.
fn gamma_at(grid: &Grid2D, bnd: &BoundarySpec, x: [f64; 2]) -> bool {
    let (i, j) = grid.nearest_node(x);
    let lo = grid.origin();
    let hi = grid.upper();
    // snap to the nearest face so that the node is a boundary node
    let d = [x[0] - lo[0], hi[0] - x[0], x[1] - lo[1], hi[1] - x[1]];
    let face = (0..4).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap_or(0);
    let (i, j) = match face {
        0 => (0, j),
        1 => (grid.nx() - 1, j),
        2 => (i, 0),
        _ => (i, grid.ny() - 1),
    };
    bnd.slot_of(grid.index(i, j)).is_some_and(|b| bnd.gamma()[b])
}

/// A set of initial directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionFan {
    /// Central angle (radians).
    pub center: f64,
    /// Half opening angle; `≥ π` means the full circle.
    pub half_width: f64,
    pub count: usize,
    /// Also include every direction rotated by π.
    pub bidirectional: bool,
}

impl DirectionFan {
    pub fn full(count: usize) -> Self {
        Self { center: 0.0, half_width: std::f64::consts::PI, count, bidirectional: false }
    }

    /// Directions within `half_width` of the ±x axis.
    pub fn horizontal(half_width: f64, count: usize) -> Self {
        Self { center: 0.0, half_width, count, bidirectional: true }
    }

    pub fn angles(&self) -> Vec<f64> {
        use std::f64::consts::PI;
        let mut out = Vec::new();
        if self.count == 0 {
            return out;
        }
        if self.half_width >= PI {
            out.extend((0..self.count).map(|k| self.center + 2.0 * PI * k as f64 / self.count as f64));
        } else if self.count == 1 {
            out.push(self.center);
        } else {
            let step = 2.0 * self.half_width / (self.count - 1) as f64;
            out.extend((0..self.count).map(|k| self.center - self.half_width + step * k as f64));
        }
        if self.bidirectional && self.half_width < PI {
            let back: Vec<f64> = out.iter().map(|a| a + PI).collect();
            out.extend(back);
        }
        out
    }
}

/// Ray census over a start lattice and a direction fan.
#[derive(Debug, Clone)]
pub struct RayReport {
    pub records: Vec<RayRecord>,
    pub fraction_reached: f64,
    /// Largest non-grazing hit time; `None` when no ray reached Γ.
    pub tau_hat: Option<f64>,
    pub grazing_count: usize,
}

impl RayReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `key=value` lines: fraction_reached, tau_hat, grazing_count.
    pub fn summary(&self) -> String {
        let tau = self.tau_hat.map_or_else(|| "none".to_string(), |t| format!("{t:.6}"));
        format!(
            "fraction_reached={:.6}\ntau_hat={tau}\ngrazing_count={}\nrays={}\n",
            self.fraction_reached,
            self.grazing_count,
            self.records.len()
        )
    }
}

/// Cell-centred `n × n` lattice of interior start points.
pub fn start_lattice(grid: &Grid2D, n: usize) -> Vec<[f64; 2]> {
    let o = grid.origin();
    let e = grid.extent();
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            pts.push([
                o[0] + e[0] * (i as f64 + 0.5) / n as f64,
                o[1] + e[1] * (j as f64 + 0.5) / n as f64,
            ]);
        }
    }
    pts
}

/// Traces every (lattice point, fan direction) pair; `n_points` is the lattice
/// size per axis.
pub fn estimate_tau(
    model: &dyn SpeedModel,
    bnd: &BoundarySpec,
    n_points: usize,
    fan: &DirectionFan,
    t_max: f64,
    ds: f64,
) -> Result<RayReport> {
    let starts = start_lattice(bnd.grid(), n_points);
    let angles = fan.angles();
    if starts.is_empty() || angles.is_empty() {
        return Err(Error::Config("ray census needs at least one start point and one direction".into()));
    }
    let jobs: Vec<([f64; 2], f64)> = starts.iter().flat_map(|&x| angles.iter().map(move |&a| (x, a))).collect();
    let records: Vec<RayRecord> = jobs
        .par_iter()
        .map(|&(x, a)| trace_ray(RayState::new(x, [a.cos(), a.sin()], model), model, bnd, t_max, ds))
        .collect::<Result<_>>()?;
    let reached = records.iter().filter(|r| r.hit_time.is_some()).count();
    let tau_hat = records
        .iter()
        .filter(|r| !r.grazing_hit)
        .filter_map(|r| r.hit_time)
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let grazing_count = records.iter().filter(|r| r.grazing).count();
    Ok(RayReport { fraction_reached: reached as f64 / records.len() as f64, tau_hat, grazing_count, records })
}
