//! Explicit leapfrog solver for every wave system used by the reconstruction.
//!
//! All systems share one kernel. With `A = c²Δ_h − q` (5-point Laplacian,
//! ghost nodes eliminated on the faces) a step reads
//!
//! ```text
//! (1 + σd) u⁺ = 2u − (1 − σd) u⁻ + dt² A u + dt² c² B g + f
//! ```
//!
//! where `B` is the ghost-node injection factor of a boundary node, `d =
//! c² B λ dt / 2` the damping produced by the centred `λ ∂_t u` term, `σ` the
//! sign of the impedance term, `g` an optional boundary source and `f` an
//! optional volume forcing (only used by the exact adjoint sweep).

use rayon::prelude::*;

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::medium::MediumParams;
use crate::norms::{compatibility_functional, energy, CauchyPair};
use crate::trace::{BoundaryTrace, TimeAxis};

/// Grids with at least this many nodes are stepped row-parallel.
const PARALLEL_THRESHOLD: usize = 1 << 14;

/// How `solution_op_adjoint` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointMode {
    /// Time-reversed Robin system (the continuous adjoint, accurate to `O(h²)`).
    PdeFaithful,
    /// Transpose of the discrete recurrence; exact to rounding.
    #[default]
    ExactDiscrete,
}

impl std::str::FromStr for AdjointMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "exact_discrete" | "exact-discrete" => Ok(AdjointMode::ExactDiscrete),
            "pde" | "pde_faithful" | "pde-faithful" => Ok(AdjointMode::PdeFaithful),
            _ => Err(Error::Config(format!("unknown adjoint mode '{s}' (expected exact or pde)"))),
        }
    }
}

impl std::fmt::Display for AdjointMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AdjointMode::PdeFaithful => "pde_faithful",
            AdjointMode::ExactDiscrete => "exact_discrete",
        })
    }
}

/// Boundary condition applied by one solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BCVariant {
    /// `∂_ν u + λ ∂_t u = 0`.
    RobinPlus,
    /// `∂_ν w − λ ∂_t w = 0`.
    RobinMinus,
    /// `∂_ν ξ + λ ∂_t ξ = ζ` on Γ.
    NeumannSource,
    /// `∂_ν v = g` on Γ.
    BackprojectionSource,
    /// `∂_ν w = 0`.
    PureNeumann,
}

impl BCVariant {
    fn damping_sign(self) -> f64 {
        match self {
            BCVariant::RobinPlus | BCVariant::NeumannSource => 1.0,
            BCVariant::RobinMinus => -1.0,
            BCVariant::BackprojectionSource | BCVariant::PureNeumann => 0.0,
        }
    }

    pub fn has_source(self) -> bool {
        matches!(self, BCVariant::NeumannSource | BCVariant::BackprojectionSource)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Everything a solve needs: medium, boundary, time axis and scheme options.
#[derive(Debug, Clone)]
pub struct WaveRunConfig {
    med: MediumParams,
    bnd: BoundarySpec,
    times: TimeAxis,
    cfl_factor: f64,
    adjoint_mode: AdjointMode,
    /// `c²` per node.
    c2: Vec<f64>,
    /// `c² B λ dt / 2` per boundary node.
    damp: Vec<f64>,
    /// `c² dt² B` per boundary node.
    inj: Vec<f64>,
}

impl WaveRunConfig {
    pub const DEFAULT_CFL: f64 = 0.5;

    pub fn new(med: MediumParams, bnd: BoundarySpec, times: TimeAxis) -> Result<Self> {
        Self::with_options(med, bnd, times, Self::DEFAULT_CFL, AdjointMode::default())
    }

    pub fn with_options(
        med: MediumParams,
        bnd: BoundarySpec,
        times: TimeAxis,
        cfl_factor: f64,
        adjoint_mode: AdjointMode,
    ) -> Result<Self> {
        med.grid().ensure_same(bnd.grid(), "run config")?;
        if !(cfl_factor > 0.0 && cfl_factor <= 1.0) {
            return Err(Error::Config(format!("CFL factor must lie in (0, 1], got {cfl_factor}")));
        }
        let grid = *med.grid();
        let dt = times.dt();
        let h = grid.hx().min(grid.hy());
        let cmax = med.c_max();
        let limit = cfl_factor * h / cmax;
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "time step {dt} violates the CFL bound {limit} (factor {cfl_factor})"
            )));
        }
        let spectral = dt * dt
            * (cmax * cmax * (4.0 / (grid.hx() * grid.hx()) + 4.0 / (grid.hy() * grid.hy())) + med.q().max());
        if spectral > 4.0 {
            return Err(Error::Config(format!(
                "time step {dt} is unstable for this grid (dt²ρ(A) = {spectral:.3} > 4)"
            )));
        }
        let c2: Vec<f64> = med.c().values().iter().map(|c| c * c).collect();
        let mut damp = Vec::with_capacity(bnd.len());
        let mut inj = Vec::with_capacity(bnd.len());
        for ((node, &l), &b) in bnd.nodes().iter().zip(bnd.lambda()).zip(bnd.injection()) {
            let ck = c2[node.index];
            damp.push(0.5 * ck * b * l * dt);
            inj.push(ck * dt * dt * b);
        }
        Ok(Self { med, bnd, times, cfl_factor, adjoint_mode, c2, damp, inj })
    }

    /// Chooses the largest stable step covering `tau` for the given CFL factor.
    pub fn for_window(med: MediumParams, bnd: BoundarySpec, tau: f64, cfl_factor: f64) -> Result<Self> {
        let grid = *med.grid();
        let h = grid.hx().min(grid.hy());
        let mut dt_max = cfl_factor * h / med.c_max();
        let rho = med.c_max().powi(2) * (4.0 / grid.hx().powi(2) + 4.0 / grid.hy().powi(2)) + med.q().max();
        dt_max = dt_max.min(2.0 / rho.sqrt() * (1.0 - 1e-9));
        let times = TimeAxis::covering(tau, dt_max)?;
        Self::with_options(med, bnd, times, cfl_factor, AdjointMode::default())
    }

    pub fn with_adjoint_mode(mut self, mode: AdjointMode) -> Self {
        self.adjoint_mode = mode;
        self
    }

    pub fn with_boundary(&self, bnd: BoundarySpec) -> Result<Self> {
        Self::with_options(self.med.clone(), bnd, self.times, self.cfl_factor, self.adjoint_mode)
    }

    pub fn with_times(&self, times: TimeAxis) -> Result<Self> {
        Self::with_options(self.med.clone(), self.bnd.clone(), times, self.cfl_factor, self.adjoint_mode)
    }

    pub fn grid(&self) -> &Grid2D {
        self.med.grid()
    }

    pub fn med(&self) -> &MediumParams {
        &self.med
    }

    pub fn bnd(&self) -> &BoundarySpec {
        &self.bnd
    }

    pub fn times(&self) -> &TimeAxis {
        &self.times
    }

    pub fn cfl_factor(&self) -> f64 {
        self.cfl_factor
    }

    pub fn adjoint_mode(&self) -> AdjointMode {
        self.adjoint_mode
    }

    /// Unweighted half of the step: `out = 2u − u⁻ + dt² A u + f` at every node.
    fn volume_pass(&self, prev: &[f64], now: &[f64], out: &mut [f64], forcing: Option<&[f64]>) {
        let parallel = self.grid().len() >= PARALLEL_THRESHOLD;
        self.volume_pass_mode(prev, now, out, forcing, parallel);
    }

    fn volume_pass_mode(&self, prev: &[f64], now: &[f64], out: &mut [f64], forcing: Option<&[f64]>, parallel: bool) {
        let grid = self.grid();
        let nx = grid.nx();
        let ny = grid.ny();
        let dt2 = self.times.dt().powi(2);
        let ihx2 = 1.0 / (grid.hx() * grid.hx());
        let ihy2 = 1.0 / (grid.hy() * grid.hy());
        let q = self.med.q().values();
        let c2 = &self.c2;
        let row = |j: usize, out_row: &mut [f64]| {
            let base = j * nx;
            for (i, o) in out_row.iter_mut().enumerate() {
                let k = base + i;
                let u = now[k];
                let lx = if i == 0 {
                    2.0 * (now[k + 1] - u)
                } else if i == nx - 1 {
                    2.0 * (now[k - 1] - u)
                } else {
                    now[k + 1] - 2.0 * u + now[k - 1]
                };
                let ly = if j == 0 {
                    2.0 * (now[k + nx] - u)
                } else if j == ny - 1 {
                    2.0 * (now[k - nx] - u)
                } else {
                    now[k + nx] - 2.0 * u + now[k - nx]
                };
                let a = c2[k] * (lx * ihx2 + ly * ihy2) - q[k] * u;
                let mut v = 2.0 * u - prev[k] + dt2 * a;
                if let Some(f) = forcing {
                    v += f[k];
                }
                *o = v;
            }
        };
        if parallel {
            out.par_chunks_mut(nx).enumerate().for_each(|(j, r)| row(j, r));
        } else {
            out.chunks_mut(nx).enumerate().for_each(|(j, r)| row(j, r));
        }
    }

    /// Boundary half of the step: impedance term and source injection.
    /// With `normalize = false` the division by `1 + σd` is skipped.
    fn boundary_pass(&self, prev: &[f64], out: &mut [f64], sign: f64, source: Option<&[f64]>, normalize: bool) {
        for (b, node) in self.bnd.nodes().iter().enumerate() {
            let k = node.index;
            let d = sign * self.damp[b];
            let mut v = out[k] + d * prev[k];
            if let Some(g) = source {
                v += self.inj[b] * g[b];
            }
            out[k] = if normalize { v / (1.0 + d) } else { v };
        }
    }

    fn step_into(
        &self,
        prev: &[f64],
        now: &[f64],
        out: &mut [f64],
        sign: f64,
        source: Option<&[f64]>,
        forcing: Option<&[f64]>,
    ) {
        self.volume_pass(prev, now, out, forcing);
        self.boundary_pass(prev, out, sign, source, true);
    }

    /// `dt² A u` at every node (no boundary terms), used for two-level starts.
    fn apply_dt2_a(&self, u: &[f64]) -> Vec<f64> {
        let zeros = vec![0.0; u.len()];
        let mut out = vec![0.0; u.len()];
        // 2u − 0 + dt²Au, then remove 2u
        self.volume_pass(&zeros, u, &mut out, None);
        for (o, v) in out.iter_mut().zip(u) {
            *o -= 2.0 * v;
        }
        out
    }

    fn check_source(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.bnd.len() {
            return Err(Error::Dimension(format!(
                "source slice has {} values, boundary has {} nodes",
                g.len(),
                self.bnd.len()
            )));
        }
        for (b, (&v, &in_gamma)) in g.iter().zip(self.bnd.gamma()).enumerate() {
            if v != 0.0 && !in_gamma {
                return Err(Error::Contract(format!("source is nonzero at unobserved boundary node {b}")));
            }
        }
        Ok(())
    }
}

/// Rolling three-level state of one solve.
struct Leapfrog<'a> {
    cfg: &'a WaveRunConfig,
    sign: f64,
    prev: Vec<f64>,
    now: Vec<f64>,
    next: Vec<f64>,
}

impl<'a> Leapfrog<'a> {
    fn new(cfg: &'a WaveRunConfig, sign: f64, prev: Vec<f64>, now: Vec<f64>) -> Self {
        let n = now.len();
        Self { cfg, sign, prev, now, next: vec![0.0; n] }
    }

    fn advance(&mut self, source: Option<&[f64]>, forcing: Option<&[f64]>) {
        self.cfg.step_into(&self.prev, &self.now, &mut self.next, self.sign, source, forcing);
        std::mem::swap(&mut self.prev, &mut self.now);
        std::mem::swap(&mut self.now, &mut self.next);
    }
}

/// One leapfrog step from `(state_prev, state_now)` under `bc`.
///
/// `source` holds one value per boundary node and is required exactly when the
/// variant carries a source.
pub fn step_scheme(
    state_prev: &ScalarField,
    state_now: &ScalarField,
    cfg: &WaveRunConfig,
    bc: BCVariant,
    source: Option<&[f64]>,
) -> Result<ScalarField> {
    state_prev.grid().ensure_same(cfg.grid(), "step")?;
    state_now.grid().ensure_same(cfg.grid(), "step")?;
    match (bc.has_source(), source) {
        (true, None) => return Err(Error::Contract(format!("{bc:?} needs a boundary source"))),
        (false, Some(_)) => return Err(Error::Contract(format!("{bc:?} takes no boundary source"))),
        (_, Some(g)) => cfg.check_source(g)?,
        _ => {}
    }
    let mut out = vec![0.0; cfg.grid().len()];
    cfg.step_into(state_prev.values(), state_now.values(), &mut out, bc.damping_sign(), source, None);
    Ok(ScalarField::from_vec_unchecked(*cfg.grid(), out))
}

/// Result of a forward solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Every time level, when requested.
    pub snapshots: Option<Vec<ScalarField>>,
    /// Solution at all boundary nodes and levels.
    pub trace: BoundaryTrace,
    /// `(u, ∂_t u)` at `t = τ`.
    pub final_state: CauchyPair,
}

fn gather_boundary(bnd: &BoundarySpec, u: &[f64], out: &mut [f64]) {
    for (o, node) in out.iter_mut().zip(bnd.nodes()) {
        *o = u[node.index];
    }
}

/// Two consecutive levels `(u^{-1}, u^0)` reproducing the Cauchy data under
/// the scheme with damping sign `sign`.
fn two_level_start(cfg: &WaveRunConfig, state: &CauchyPair, sign: f64) -> (Vec<f64>, Vec<f64>) {
    let dt = cfg.times.dt();
    let u = state.u.values();
    let ut = state.ut.values();
    let dt2a = cfg.apply_dt2_a(u);
    let mut prev: Vec<f64> = u.iter().zip(&dt2a).zip(ut).map(|((u, a), v)| u + 0.5 * a - dt * v).collect();
    if sign != 0.0 {
        for (b, node) in cfg.bnd.nodes().iter().enumerate() {
            prev[node.index] -= sign * cfg.damp[b] * dt * ut[node.index];
        }
    }
    (prev, u.to_vec())
}

/// Runs `steps` steps from a Cauchy pair, calling `visit(level, u)` at every level
/// (including level 0), and returns the terminal Cauchy pair.
fn run_cauchy(
    cfg: &WaveRunConfig,
    state: &CauchyPair,
    steps: usize,
    sign: f64,
    mut visit: impl FnMut(usize, &[f64]),
) -> CauchyPair {
    let (prev, now) = two_level_start(cfg, state, sign);
    let mut lf = Leapfrog::new(cfg, sign, prev, now);
    visit(0, &lf.now);
    for n in 1..=steps {
        lf.advance(None, None);
        visit(n, &lf.now);
    }
    let before = lf.prev.clone();
    let u_end = lf.now.clone();
    lf.advance(None, None);
    let inv = 0.5 / cfg.times.dt();
    let ut: Vec<f64> = lf.now.iter().zip(&before).map(|(a, b)| (a - b) * inv).collect();
    let grid = *cfg.grid();
    CauchyPair {
        u: ScalarField::from_vec_unchecked(grid, u_end),
        ut: ScalarField::from_vec_unchecked(grid, ut),
    }
}

fn check_finite(state: &CauchyPair, what: &str) -> Result<()> {
    if state.u.is_finite() && state.ut.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} produced non-finite values")))
    }
}

/// Solves `u_tt = A u`, `∂_ν u + λ u_t = 0`, `u(0) = u0`, `u_t(0) = 0` on `[0, τ]`.
pub fn forward_solve(u0: &ScalarField, cfg: &WaveRunConfig) -> Result<Trajectory> {
    forward_solve_with(u0, cfg, false)
}

/// [`forward_solve`], optionally keeping every time level.
pub fn forward_solve_with(u0: &ScalarField, cfg: &WaveRunConfig, keep_snapshots: bool) -> Result<Trajectory> {
    u0.grid().ensure_same(cfg.grid(), "forward solve")?;
    let grid = *cfg.grid();
    let times = cfg.times;
    let nb = cfg.bnd.len();
    let mut trace = BoundaryTrace::zeros(nb, times);
    let mut snaps = keep_snapshots.then(|| Vec::with_capacity(times.levels()));
    let start = CauchyPair::at_rest(u0.clone());
    let final_state = run_cauchy(cfg, &start, times.nt(), 1.0, |n, u| {
        gather_boundary(&cfg.bnd, u, trace.level_mut(n));
        if let Some(s) = snaps.as_mut() {
            s.push(ScalarField::from_vec_unchecked(grid, u.to_vec()));
        }
    });
    check_finite(&final_state, "forward solve")?;
    Ok(Trajectory { snapshots: snaps, trace, final_state })
}

/// The measurement map Λ: forward trace restricted to Γ.
pub fn measure(u0: &ScalarField, cfg: &WaveRunConfig) -> Result<BoundaryTrace> {
    Ok(forward_solve(u0, cfg)?.trace.restricted_to(cfg.bnd.gamma()))
}

/// The solution operator S: boundary source ζ on Γ ↦ `∂_t ξ(τ)` for the
/// impedance system started from rest.
pub fn solution_op(zeta: &BoundaryTrace, cfg: &WaveRunConfig) -> Result<ScalarField> {
    zeta.check_against(&cfg.bnd, true)?;
    if zeta.times() != cfg.times() {
        return Err(Error::Dimension("control and run use different time axes".into()));
    }
    let nt = cfg.times.nt();
    if nt < 2 {
        return Err(Error::Config("the solution operator needs at least two time steps".into()));
    }
    let n = cfg.grid().len();
    let mut first = vec![0.0; n];
    for (b, node) in cfg.bnd.nodes().iter().enumerate() {
        first[node.index] = 0.5 * cfg.inj[b] * zeta.get(0, b);
    }
    let mut lf = Leapfrog::new(cfg, 1.0, vec![0.0; n], first);
    let mut xi_nt2 = vec![0.0; n];
    for k in 1..nt {
        if k + 1 == nt {
            xi_nt2.copy_from_slice(&lf.prev);
        }
        lf.advance(Some(zeta.level(k)), None);
    }
    let inv = 0.5 / cfg.times.dt();
    let out: Vec<f64> = (0..n).map(|k| (3.0 * lf.now[k] - 4.0 * lf.prev[k] + xi_nt2[k]) * inv).collect();
    let out = ScalarField::from_vec_unchecked(*cfg.grid(), out);
    if !out.is_finite() {
        return Err(Error::Divergence("solution operator produced non-finite values".into()));
    }
    Ok(out)
}

/// Adjoint of [`solution_op`] in the mode selected by the config.
pub fn solution_op_adjoint(z: &ScalarField, cfg: &WaveRunConfig) -> Result<BoundaryTrace> {
    match cfg.adjoint_mode {
        AdjointMode::ExactDiscrete => adjoint_exact(z, cfg),
        AdjointMode::PdeFaithful => adjoint_pde(z, cfg),
    }
}

/// `w|_Γ` where `w` solves the time-reversed system with `w(τ) = z`, `w_t(τ) = 0`
/// and `∂_ν w − λ w_t = 0`; in reversed time this is a forward impedance solve.
pub fn adjoint_pde(z: &ScalarField, cfg: &WaveRunConfig) -> Result<BoundaryTrace> {
    z.grid().ensure_same(cfg.grid(), "adjoint")?;
    let d = measure(z, cfg)?;
    Ok(crate::ops::time_reverse(&d))
}

/// Transpose of the source recurrence with respect to the `H⁰` and trace
/// inner products, obtained by sweeping the step backwards in time.
pub fn adjoint_exact(phi: &ScalarField, cfg: &WaveRunConfig) -> Result<BoundaryTrace> {
    phi.grid().ensure_same(cfg.grid(), "adjoint")?;
    let times = cfg.times;
    let nt = times.nt();
    if nt < 2 {
        return Err(Error::Config("the solution operator needs at least two time steps".into()));
    }
    let dt = times.dt();
    let n = cfg.grid().len();
    let nb = cfg.bnd.len();
    let seed = |m: usize| -> Option<Vec<f64>> {
        let coef = if m == nt {
            3.0
        } else if m + 1 == nt {
            -4.0
        } else if m + 2 == nt {
            1.0
        } else {
            return None;
        };
        let s = coef * 0.5 / dt;
        Some(phi.values().iter().map(|v| s * v).collect())
    };
    let mut trace = BoundaryTrace::zeros(nb, times);
    // b^{m+2}, b^{m+1} start at zero
    let mut lf = Leapfrog::new(cfg, 1.0, vec![0.0; n], vec![0.0; n]);
    for m in (2..=nt).rev() {
        let f = seed(m);
        lf.advance(None, f.as_deref());
        let level = trace.level_mut(m - 1);
        for (b, node) in cfg.bnd.nodes().iter().enumerate() {
            level[b] = dt * lf.now[node.index];
        }
    }
    // a¹ = s¹ + G b² − F b³ (the step without the final division)
    let mut a1 = vec![0.0; n];
    let f1 = seed(1);
    cfg.volume_pass(&lf.prev, &lf.now, &mut a1, f1.as_deref());
    cfg.boundary_pass(&lf.prev, &mut a1, 1.0, None, false);
    let level0 = trace.level_mut(0);
    for (b, node) in cfg.bnd.nodes().iter().enumerate() {
        level0[b] = dt * a1[node.index];
    }
    let out = trace.restricted_to(cfg.bnd.gamma());
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("adjoint sweep produced non-finite values".into()));
    }
    Ok(out)
}

/// Time derivative of a trace: centred inside, second-order one-sided at the ends.
pub fn trace_time_derivative(d: &BoundaryTrace) -> BoundaryTrace {
    let t = *d.times();
    let nt = t.nt();
    let dt = t.dt();
    let nb = d.n_nodes();
    BoundaryTrace::from_fn(nb, t, |k, b| {
        if nt == 1 {
            return (d.get(1, b) - d.get(0, b)) / dt;
        }
        if k == 0 {
            (-3.0 * d.get(0, b) + 4.0 * d.get(1, b) - d.get(2, b)) / (2.0 * dt)
        } else if k == nt {
            (3.0 * d.get(nt, b) - 4.0 * d.get(nt - 1, b) + d.get(nt - 2, b)) / (2.0 * dt)
        } else {
            (d.get(k + 1, b) - d.get(k - 1, b)) / (2.0 * dt)
        }
    })
}

/// Back-projection A: `v(0)` for the Neumann system solved backwards from rest
/// at `t = τ` with `∂_ν v = −λ ∂_t d` on Γ.
pub fn backproject(d: &BoundaryTrace, cfg: &WaveRunConfig) -> Result<ScalarField> {
    d.check_against(&cfg.bnd, true)?;
    if d.times() != cfg.times() {
        return Err(Error::Dimension("data and run use different time axes".into()));
    }
    let nt = cfg.times.nt();
    let n = cfg.grid().len();
    let dd = trace_time_derivative(d);
    let lambda = cfg.bnd.lambda();
    // source in reversed time s = τ − t
    let source = |m: usize| -> Vec<f64> { dd.level(nt - m).iter().zip(lambda).map(|(v, l)| -l * v).collect() };
    let g0 = source(0);
    let mut first = vec![0.0; n];
    for (b, node) in cfg.bnd.nodes().iter().enumerate() {
        first[node.index] = 0.5 * cfg.inj[b] * g0[b];
    }
    let mut lf = Leapfrog::new(cfg, 0.0, vec![0.0; n], first);
    for m in 1..nt {
        let g = source(m);
        lf.advance(Some(&g), None);
    }
    let out = ScalarField::from_vec_unchecked(*cfg.grid(), lf.now);
    if !out.is_finite() {
        return Err(Error::Divergence("back-projection produced non-finite values".into()));
    }
    Ok(out)
}

/// Evolves a Cauchy pair by `t_steps` steps under `S_R` (impedance) or `S_N`
/// (Neumann). Backward evolution is only defined for the Neumann group.
pub fn evolve_cauchy(
    state: &CauchyPair,
    t_steps: usize,
    bc: BCVariant,
    direction: Direction,
    cfg: &WaveRunConfig,
) -> Result<CauchyPair> {
    state.u.grid().ensure_same(cfg.grid(), "evolve")?;
    state.ut.grid().ensure_same(cfg.grid(), "evolve")?;
    let sign = match bc {
        BCVariant::RobinPlus => 1.0,
        BCVariant::PureNeumann => 0.0,
        other => return Err(Error::Contract(format!("evolve_cauchy supports RobinPlus and PureNeumann, not {other:?}"))),
    };
    if direction == Direction::Backward && sign != 0.0 && !cfg.bnd.lambda_vanishes() {
        return Err(Error::Contract(
            "the impedance semigroup is not invertible; backward evolution needs λ ≡ 0".into(),
        ));
    }
    if t_steps == 0 {
        return Ok(state.clone());
    }
    let out = match direction {
        Direction::Forward => run_cauchy(cfg, state, t_steps, sign, |_, _| {}),
        Direction::Backward => {
            let flipped = CauchyPair { u: state.u.clone(), ut: state.ut.scaled(-1.0) };
            let end = run_cauchy(cfg, &flipped, t_steps, 0.0, |_, _| {});
            CauchyPair { u: end.u, ut: end.ut.scaled(-1.0) }
        }
    };
    check_finite(&out, "evolution")?;
    Ok(out)
}

/// Energy bookkeeping at one time level of a forward solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergySample {
    pub level: usize,
    pub t: f64,
    /// Continuous energy of `(uⁿ, centred u_t)`.
    pub energy: f64,
    /// Discrete energy between levels `n` and `n + 1`; exactly non-increasing.
    pub staggered: f64,
    /// `∫ c⁻² u_t + ∫ λ u dS` between levels `n` and `n + 1`; exactly conserved when `q ≡ 0`.
    pub conservation: f64,
}

/// Runs the forward problem and records energies at every level.
pub fn energy_history(u0: &ScalarField, cfg: &WaveRunConfig) -> Result<Vec<EnergySample>> {
    u0.grid().ensure_same(cfg.grid(), "energy history")?;
    let grid = *cfg.grid();
    let dt = cfg.times.dt();
    let nt = cfg.times.nt();
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(nt + 2);
    let start = CauchyPair::at_rest(u0.clone());
    let end = run_cauchy(cfg, &start, nt, 1.0, |_, u| levels.push(u.to_vec()));
    check_finite(&end, "forward solve")?;
    // level nt + 1 from the centred final velocity
    let extra: Vec<f64> = levels[nt - 1].iter().zip(end.ut.values()).map(|(a, v)| a + 2.0 * dt * v).collect();
    levels.push(extra);
    let med = &cfg.med;
    let mass = med.mass_weights();
    let mut out = Vec::with_capacity(nt + 1);
    for n in 0..=nt {
        let u = ScalarField::from_vec_unchecked(grid, levels[n].clone());
        let ut: Vec<f64> = if n == 0 {
            vec![0.0; grid.len()]
        } else {
            levels[n + 1].iter().zip(&levels[n - 1]).map(|(a, b)| (a - b) / (2.0 * dt)).collect()
        };
        let pair = CauchyPair { u, ut: ScalarField::from_vec_unchecked(grid, ut) };
        let e = energy(&pair, med)?;
        let (a, b) = (&levels[n], &levels[n + 1]);
        let au = cfg.apply_dt2_a(a);
        let mut kin = 0.0;
        let mut pot = 0.0;
        let mut vol = 0.0;
        for k in 0..grid.len() {
            let diff = (b[k] - a[k]) / dt;
            kin += mass[k] * diff * diff;
            pot -= mass[k] * b[k] * au[k] / (dt * dt);
            vol += mass[k] * diff;
        }
        let mut surf = 0.0;
        for ((node, l), w) in cfg.bnd.nodes().iter().zip(cfg.bnd.lambda()).zip(cfg.bnd.ds()) {
            surf += l * w * 0.5 * (a[node.index] + b[node.index]);
        }
        out.push(EnergySample {
            level: n,
            t: n as f64 * dt,
            energy: e,
            staggered: 0.5 * (kin + pot),
            conservation: vol + surf,
        });
    }
    Ok(out)
}

/// `∫ c⁻² u_t + ∫ λ u dS` of a Cauchy pair under the config's boundary.
pub fn conservation_value(state: &CauchyPair, cfg: &WaveRunConfig) -> Result<f64> {
    compatibility_functional(state, &cfg.bnd, &cfg.med)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundarySpec;
    use crate::norms::inner_omega;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize, lambda: f64, nt: usize) -> WaveRunConfig {
        let g = Grid2D::unit_square(n).unwrap();
        let med = MediumParams::constant(g, 1.0, 0.0).unwrap();
        let bnd = BoundarySpec::uniform(g, lambda).unwrap();
        let dt = 0.5 / (n - 1) as f64;
        WaveRunConfig::new(med, bnd, TimeAxis::new(dt, nt).unwrap()).unwrap()
    }

    fn bump(g: Grid2D) -> ScalarField {
        ScalarField::from_fn(g, |x, y| (-((x - 0.45).powi(2) + (y - 0.55).powi(2)) / 0.02).exp())
    }

    #[test]
    fn rejects_cfl_violations() {
        let g = Grid2D::unit_square(11).unwrap();
        let med = MediumParams::constant(g, 1.0, 0.0).unwrap();
        let bnd = BoundarySpec::uniform(g, 1.0).unwrap();
        assert!(WaveRunConfig::new(med.clone(), bnd.clone(), TimeAxis::new(0.06, 10).unwrap()).is_err());
        // inside the cfl factor 1 bound but unstable in two dimensions
        let r = WaveRunConfig::with_options(med, bnd, TimeAxis::new(0.09, 10).unwrap(), 1.0, AdjointMode::ExactDiscrete);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn step_keeps_zero_and_constants() {
        let cfg = config(9, 0.7, 4);
        let g = *cfg.grid();
        let z = ScalarField::zeros(g);
        assert!(step_scheme(&z, &z, &cfg, BCVariant::RobinPlus, None).unwrap().is_all_zero());
        let one = ScalarField::constant(g, 1.0);
        for bc in [BCVariant::RobinPlus, BCVariant::RobinMinus, BCVariant::PureNeumann] {
            let out = step_scheme(&one, &one, &cfg, bc, None).unwrap();
            assert!(out.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn single_impulse_spreads_to_neighbours() {
        let cfg = config(9, 1.0, 4);
        let g = *cfg.grid();
        let mut u = ScalarField::zeros(g);
        u[(4, 4)] = 1.0;
        let out = step_scheme(&u, &u, &cfg, BCVariant::RobinPlus, None).unwrap();
        let r = (cfg.times().dt() / g.hx()).powi(2);
        assert!((out.at(5, 4) - r).abs() < 1e-15);
        assert!((out.at(4, 3) - r).abs() < 1e-15);
        assert!((out.at(4, 4) - (1.0 - 4.0 * r)).abs() < 1e-15);
        assert_eq!(out.at(6, 4), 0.0);
    }

    #[test]
    fn source_rules_are_enforced() {
        let g = Grid2D::unit_square(7).unwrap();
        let med = MediumParams::constant(g, 1.0, 0.0).unwrap();
        let bnd = BoundarySpec::new(
            g,
            vec![0.0; 24],
            (0..24).map(|b| b < 6).collect(),
        )
        .unwrap();
        let cfg = WaveRunConfig::new(med, bnd, TimeAxis::new(0.05, 4).unwrap()).unwrap();
        let z = ScalarField::zeros(g);
        assert!(step_scheme(&z, &z, &cfg, BCVariant::NeumannSource, None).is_err());
        let mut src = vec![0.0; 24];
        src[10] = 1.0;
        let err = step_scheme(&z, &z, &cfg, BCVariant::NeumannSource, Some(&src)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        src[10] = 0.0;
        src[2] = 1.0;
        assert!(step_scheme(&z, &z, &cfg, BCVariant::NeumannSource, Some(&src)).is_ok());
    }

    #[test]
    fn forward_solve_trivial_cases() {
        let cfg = config(11, 1.0, 30);
        let g = *cfg.grid();
        let t = forward_solve(&ScalarField::zeros(g), &cfg).unwrap();
        assert!(t.trace.is_all_zero() && t.final_state.u.is_all_zero());
        let t = forward_solve(&ScalarField::constant(g, 1.0), &cfg).unwrap();
        assert!(t.trace.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
    }

    #[test]
    fn snapshots_agree_with_trace() {
        let cfg = config(9, 0.5, 12);
        let g = *cfg.grid();
        let t = forward_solve_with(&bump(g), &cfg, true).unwrap();
        let snaps = t.snapshots.unwrap();
        assert_eq!(snaps.len(), 13);
        for (k, s) in snaps.iter().enumerate() {
            for (b, node) in cfg.bnd().nodes().iter().enumerate() {
                assert_eq!(t.trace.get(k, b), s.values()[node.index]);
            }
        }
    }

    #[test]
    fn exact_adjoint_pairing_small() {
        let cfg = config(7, 0.8, 9);
        let g = *cfg.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zeta = BoundaryTrace::from_fn(cfg.bnd().len(), *cfg.times(), |_, _| rng.random_range(-1.0..1.0));
        let phi = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        let lhs = inner_omega(&solution_op(&zeta, &cfg).unwrap(), &phi, cfg.med()).unwrap();
        let rhs = crate::norms::inner_trace(&zeta, &adjoint_exact(&phi, &cfg).unwrap(), cfg.bnd()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn exact_adjoint_handles_two_steps() {
        let cfg = config(5, 1.0, 2);
        let g = *cfg.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zeta = BoundaryTrace::from_fn(cfg.bnd().len(), *cfg.times(), |_, _| rng.random_range(-1.0..1.0));
        let phi = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        let lhs = inner_omega(&solution_op(&zeta, &cfg).unwrap(), &phi, cfg.med()).unwrap();
        let rhs = crate::norms::inner_trace(&zeta, &adjoint_exact(&phi, &cfg).unwrap(), cfg.bnd()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn neumann_round_trip() {
        let cfg = config(17, 0.0, 40);
        let g = *cfg.grid();
        let s = CauchyPair::new(bump(g), bump(g).scaled(0.3)).unwrap();
        let fwd = evolve_cauchy(&s, 40, BCVariant::PureNeumann, Direction::Forward, &cfg).unwrap();
        let back = evolve_cauchy(&fwd, 40, BCVariant::PureNeumann, Direction::Backward, &cfg).unwrap();
        assert!(back.u.max_abs_diff(&s.u) < 1e-10);
        assert!(back.ut.max_abs_diff(&s.ut) < 1e-10);
        assert_eq!(evolve_cauchy(&s, 0, BCVariant::RobinPlus, Direction::Forward, &cfg).unwrap(), s);
    }

    #[test]
    fn backward_impedance_is_rejected() {
        let cfg = config(9, 1.0, 4);
        let s = CauchyPair::zeros(*cfg.grid());
        let err = evolve_cauchy(&s, 3, BCVariant::RobinPlus, Direction::Backward, &cfg).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn evolve_matches_forward_solve() {
        let cfg = config(13, 1.0, 25);
        let g = *cfg.grid();
        let u0 = bump(g);
        let t = forward_solve(&u0, &cfg).unwrap();
        let e = evolve_cauchy(&CauchyPair::at_rest(u0), 25, BCVariant::RobinPlus, Direction::Forward, &cfg).unwrap();
        assert_eq!(t.final_state, e);
    }

    #[test]
    fn staggered_energy_is_monotone_and_conservation_exact() {
        let cfg = config(17, 1.0, 60);
        let h = energy_history(&bump(*cfg.grid()), &cfg).unwrap();
        for w in h.windows(2) {
            assert!(w[1].staggered <= w[0].staggered + 1e-14 * w[0].staggered);
        }
        let p0 = h[0].conservation;
        for s in &h {
            assert!((s.conservation - p0).abs() < 1e-12 * p0.abs().max(1.0));
        }
    }

    #[test]
    fn backproject_annihilates_static_data() {
        let cfg = config(9, 1.0, 10);
        let d = BoundaryTrace::from_fn(cfg.bnd().len(), *cfg.times(), |_, b| b as f64);
        assert!(backproject(&d, &cfg).unwrap().values().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn parallel_and_serial_kernels_agree_bitwise() {
        let cfg = config(129, 1.0, 3);
        let g = *cfg.grid();
        let u = bump(g);
        let p = u.scaled(0.9);
        let f = u.scaled(1e-3);
        let mut serial = vec![0.0; g.len()];
        let mut par = vec![0.0; g.len()];
        cfg.volume_pass_mode(p.values(), u.values(), &mut serial, Some(f.values()), false);
        cfg.volume_pass_mode(p.values(), u.values(), &mut par, Some(f.values()), true);
        assert_eq!(serial, par);
    }
}
