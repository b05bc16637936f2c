//! Operators built from the solver: U, Λ, S, S*, SS*, A, K and a pairing check.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::norms::{inner_omega, inner_trace, norm_omega, norm_trace, CauchyPair};
use crate::solver::{
    adjoint_exact, adjoint_pde, backproject, evolve_cauchy, measure, solution_op, solution_op_adjoint, AdjointMode,
    BCVariant, Direction, WaveRunConfig,
};
use crate::trace::{BoundaryTrace, TimeAxis};

/// `(U v)(t) = v(τ − t)`.
pub fn time_reverse(tr: &BoundaryTrace) -> BoundaryTrace {
    let t = *tr.times();
    let nt = t.nt();
    let nb = tr.n_nodes();
    let mut values = Vec::with_capacity(tr.values().len());
    for k in 0..t.levels() {
        values.extend_from_slice(tr.level(nt - k));
    }
    BoundaryTrace::from_values(nb, t, values).expect("reversal keeps the shape")
}

/// `SS* φ`.
pub fn normal_op(phi: &ScalarField, cfg: &WaveRunConfig) -> Result<ScalarField> {
    solution_op(&solution_op_adjoint(phi, cfg)?, cfg)
}

/// `K u₀ = u₀ − A Λ u₀`.
pub fn error_op(u0: &ScalarField, cfg: &WaveRunConfig) -> Result<ScalarField> {
    let a = backproject(&measure(u0, cfg)?, cfg)?;
    u0.sub(&a)
}

/// `K u₀ = π₁ S_N(−τ) S_R(τ) π₁* u₀`, evaluated through Cauchy evolutions.
pub fn error_op_factored(u0: &ScalarField, cfg: &WaveRunConfig) -> Result<ScalarField> {
    let nt = cfg.times().nt();
    let at_tau = evolve_cauchy(&CauchyPair::at_rest(u0.clone()), nt, BCVariant::RobinPlus, Direction::Forward, cfg)?;
    let back = evolve_cauchy(&at_tau, nt, BCVariant::PureNeumann, Direction::Backward, cfg)?;
    Ok(back.u)
}

/// Right-hand side `S U d` of the normal equations.
pub fn rhs_method1(d: &BoundaryTrace, cfg: &WaveRunConfig) -> Result<ScalarField> {
    solution_op(&time_reverse(d), cfg)
}

/// Where an operator's inputs or outputs live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Space {
    Field(Grid2D),
    Trace { nodes: usize, times: TimeAxis },
}

type Apply<I, O> = Arc<dyn Fn(&I) -> Result<O> + Send + Sync>;

/// A linear operator held as a closure over an immutable run config.
#[derive(Clone)]
pub struct LinearMap<I, O> {
    pub domain: Space,
    pub codomain: Space,
    apply: Apply<I, O>,
    adjoint: Option<Apply<O, I>>,
}

impl<I, O> LinearMap<I, O> {
    pub fn new(domain: Space, codomain: Space, apply: impl Fn(&I) -> Result<O> + Send + Sync + 'static) -> Self {
        Self { domain, codomain, apply: Arc::new(apply), adjoint: None }
    }

    pub fn with_adjoint(mut self, adjoint: impl Fn(&O) -> Result<I> + Send + Sync + 'static) -> Self {
        self.adjoint = Some(Arc::new(adjoint));
        self
    }

    pub fn apply(&self, x: &I) -> Result<O> {
        (self.apply)(x)
    }

    pub fn apply_adjoint(&self, y: &O) -> Result<I> {
        match &self.adjoint {
            Some(f) => f(y),
            None => Err(Error::Contract("operator has no adjoint".into())),
        }
    }

    pub fn has_adjoint(&self) -> bool {
        self.adjoint.is_some()
    }
}

impl<I, O> std::fmt::Debug for LinearMap<I, O> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearMap")
            .field("domain", &self.domain)
            .field("codomain", &self.codomain)
            .field("adjoint", &self.adjoint.is_some())
            .finish()
    }
}

fn field_space(cfg: &WaveRunConfig) -> Space {
    Space::Field(*cfg.grid())
}

fn trace_space(cfg: &WaveRunConfig) -> Space {
    Space::Trace { nodes: cfg.bnd().len(), times: *cfg.times() }
}

/// Λ as a [`LinearMap`].
pub fn measurement_map(cfg: &WaveRunConfig) -> LinearMap<ScalarField, BoundaryTrace> {
    let c = cfg.clone();
    LinearMap::new(field_space(cfg), trace_space(cfg), move |u| measure(u, &c))
}

/// S with its adjoint (in the config's adjoint mode).
pub fn solution_map(cfg: &WaveRunConfig) -> LinearMap<BoundaryTrace, ScalarField> {
    let c = cfg.clone();
    let c2 = cfg.clone();
    LinearMap::new(trace_space(cfg), field_space(cfg), move |z| solution_op(z, &c))
        .with_adjoint(move |phi| solution_op_adjoint(phi, &c2))
}

/// U (self-adjoint).
pub fn reversal_map(cfg: &WaveRunConfig) -> LinearMap<BoundaryTrace, BoundaryTrace> {
    LinearMap::new(trace_space(cfg), trace_space(cfg), |t| Ok(time_reverse(t))).with_adjoint(|t| Ok(time_reverse(t)))
}

/// SS* (self-adjoint in the exact mode).
pub fn normal_map(cfg: &WaveRunConfig) -> LinearMap<ScalarField, ScalarField> {
    let c = cfg.clone();
    let c2 = cfg.clone();
    LinearMap::new(field_space(cfg), field_space(cfg), move |x| normal_op(x, &c)).with_adjoint(move |x| normal_op(x, &c2))
}

/// A.
pub fn backprojection_map(cfg: &WaveRunConfig) -> LinearMap<BoundaryTrace, ScalarField> {
    let c = cfg.clone();
    LinearMap::new(trace_space(cfg), field_space(cfg), move |d| backproject(d, &c))
}

/// K = Id − AΛ.
pub fn error_map(cfg: &WaveRunConfig) -> LinearMap<ScalarField, ScalarField> {
    let c = cfg.clone();
    LinearMap::new(field_space(cfg), field_space(cfg), move |u| error_op(u, &c))
}

/// Trace quadrature weight `θ_k dt dS_b` of every sample, in storage order.
pub fn trace_weights(cfg: &WaveRunConfig) -> Vec<f64> {
    let t = cfg.times();
    let ds = cfg.bnd().ds();
    let mut w = Vec::with_capacity(t.levels() * ds.len());
    for k in 0..t.levels() {
        let wt = t.weight(k) * t.dt();
        w.extend(ds.iter().map(|s| wt * s));
    }
    w
}

/// Dense matrix of a linear map on `R^n`, one column per unit vector (column-major).
pub fn assemble_columns(n: usize, mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let mut cols = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        cols.push(apply(&e)?);
        e[j] = 0.0;
    }
    Ok(cols)
}

/// Dense matrix of SS* (columns `SS* e_j`).
pub fn assemble_normal_op(cfg: &WaveRunConfig) -> Result<Vec<Vec<f64>>> {
    let grid = *cfg.grid();
    assemble_columns(grid.len(), |e| {
        let f = ScalarField::from_values(grid, e.to_vec())?;
        Ok(normal_op(&f, cfg)?.into_values())
    })
}

/// One row of the adjoint report.
#[derive(Debug, Clone, Serialize)]
pub struct AdjointTrial {
    pub trial: usize,
    pub mode: String,
    pub defect: f64,
}

#[derive(Debug, Clone)]
pub struct AdjointReport {
    pub trials: Vec<AdjointTrial>,
    pub max_exact: f64,
    pub max_pde: f64,
}

impl AdjointReport {
    pub fn max_defect(&self, mode: AdjointMode) -> f64 {
        match mode {
            AdjointMode::ExactDiscrete => self.max_exact,
            AdjointMode::PdeFaithful => self.max_pde,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for t in &self.trials {
            out.serialize(t)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Smooth random test pair for pairing checks: `ζ` vanishes at both ends of the
/// window and `φ` vanishes near ∂Ω.
pub fn random_smooth_pair(cfg: &WaveRunConfig, rng: &mut impl Rng) -> (BoundaryTrace, ScalarField) {
    let grid = *cfg.grid();
    let [lx, ly] = grid.extent();
    let o = grid.origin();
    let bumps: Vec<([f64; 2], f64)> = (0..3)
        .map(|_| {
            let cx = o[0] + lx * rng.random_range(0.35..0.65);
            let cy = o[1] + ly * rng.random_range(0.35..0.65);
            ([cx, cy], rng.random_range(-1.0..1.0))
        })
        .collect();
    let s2 = (0.08 * lx.min(ly)).powi(2);
    let phi = ScalarField::from_fn(grid, |x, y| {
        bumps
            .iter()
            .map(|(c, a)| a * (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / s2).exp())
            .sum()
    });
    let modes: Vec<(f64, f64, f64)> =
        (1..=3).map(|m| (m as f64, rng.random_range(-1.0..1.0), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    let per = grid.perimeter();
    let mut arc = Vec::with_capacity(cfg.bnd().len());
    let mut s = 0.0;
    for w in cfg.bnd().ds() {
        arc.push(s);
        s += w;
    }
    let tau = cfg.times().tau();
    let dt = cfg.times().dt();
    let zeta = BoundaryTrace::from_fn(cfg.bnd().len(), *cfg.times(), |k, b| {
        if !cfg.bnd().gamma()[b] {
            return 0.0;
        }
        let t = k as f64 * dt / tau;
        let window = (std::f64::consts::PI * t).sin().powi(2);
        let theta = std::f64::consts::TAU * arc[b] / per;
        window * modes.iter().map(|(m, a, p)| a * (m * theta + p).cos()).sum::<f64>()
    });
    (zeta, phi)
}

/// Relative pairing defect `|⟨Sζ, φ⟩ − ⟨ζ, S*φ⟩| / (‖ζ‖ ‖φ‖)` for one mode.
pub fn pairing_defect(zeta: &BoundaryTrace, phi: &ScalarField, cfg: &WaveRunConfig, mode: AdjointMode) -> Result<f64> {
    let s_zeta = solution_op(zeta, cfg)?;
    let s_star = match mode {
        AdjointMode::ExactDiscrete => adjoint_exact(phi, cfg)?,
        AdjointMode::PdeFaithful => adjoint_pde(phi, cfg)?,
    };
    let lhs = inner_omega(&s_zeta, phi, cfg.med())?;
    let rhs = inner_trace(zeta, &s_star, cfg.bnd())?;
    let scale = norm_trace(zeta, cfg.bnd())? * norm_omega(phi, cfg.med())?;
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((lhs - rhs).abs() / scale)
}

/// Seeded pairing check of both adjoint modes.
pub fn adjoint_check(cfg: &WaveRunConfig, n_trials: usize, seed: u64) -> Result<AdjointReport> {
    if n_trials == 0 {
        return Err(Error::Config("adjoint check needs at least one trial".into()));
    }
    let per_trial: Vec<Result<(f64, f64)>> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
            let (zeta, phi) = random_smooth_pair(cfg, &mut rng);
            let exact = pairing_defect(&zeta, &phi, cfg, AdjointMode::ExactDiscrete)?;
            let pde = pairing_defect(&zeta, &phi, cfg, AdjointMode::PdeFaithful)?;
            Ok((exact, pde))
        })
        .collect();
    let mut trials = Vec::with_capacity(2 * n_trials);
    let mut max_exact: f64 = 0.0;
    let mut max_pde: f64 = 0.0;
    for (trial, r) in per_trial.into_iter().enumerate() {
        let (e, p) = r?;
        max_exact = max_exact.max(e);
        max_pde = max_pde.max(p);
        trials.push(AdjointTrial { trial, mode: AdjointMode::ExactDiscrete.to_string(), defect: e });
        trials.push(AdjointTrial { trial, mode: AdjointMode::PdeFaithful.to_string(), defect: p });
    }
    Ok(AdjointReport { trials, max_exact, max_pde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundarySpec;
    use crate::medium::MediumParams;
    use crate::norms::hr_norm;

    fn config(n: usize, lambda: f64, tau: f64) -> WaveRunConfig {
        let g = Grid2D::unit_square(n).unwrap();
        let med = MediumParams::constant(g, 1.0, 0.0).unwrap();
        WaveRunConfig::for_window(med, BoundarySpec::uniform(g, lambda).unwrap(), tau, 0.5).unwrap()
    }

    #[test]
    fn time_reversal_is_an_involution() {
        let cfg = config(6, 1.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = BoundaryTrace::from_fn(cfg.bnd().len(), *cfg.times(), |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(time_reverse(&time_reverse(&a)), a);
        let z = BoundaryTrace::zeros(cfg.bnd().len(), *cfg.times());
        assert!(time_reverse(&z).is_all_zero());
    }

    #[test]
    fn zero_inputs_map_to_zero() {
        let cfg = config(9, 1.0, 0.6);
        let z = ScalarField::zeros(*cfg.grid());
        assert!(normal_op(&z, &cfg).unwrap().is_all_zero());
        assert!(error_op(&z, &cfg).unwrap().is_all_zero());
        assert!(error_op_factored(&z, &cfg).unwrap().is_all_zero());
        let d = BoundaryTrace::zeros(cfg.bnd().len(), *cfg.times());
        assert!(rhs_method1(&d, &cfg).unwrap().is_all_zero());
    }

    #[test]
    fn hard_walls_make_k_the_identity() {
        let cfg = config(13, 0.0, 1.0);
        let g = *cfg.grid();
        let u = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        assert_eq!(error_op(&u, &cfg).unwrap(), u);
        assert!(error_op_factored(&u, &cfg).unwrap().max_abs_diff(&u) < 1e-10);
    }

    #[test]
    fn k_fixes_constants() {
        let cfg = config(11, 1.0, 1.0);
        let one = ScalarField::constant(*cfg.grid(), 1.0);
        assert!(error_op(&one, &cfg).unwrap().max_abs_diff(&one) < 1e-12);
        assert!(hr_norm(&error_op(&one, &cfg).unwrap(), cfg.med()).unwrap() < 1e-10);
    }

    #[test]
    fn linear_map_wrappers() {
        let cfg = config(7, 1.0, 0.4);
        let s = solution_map(&cfg);
        assert!(s.has_adjoint());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (zeta, phi) = random_smooth_pair(&cfg, &mut rng);
        let lhs = inner_omega(&s.apply(&zeta).unwrap(), &phi, cfg.med()).unwrap();
        let rhs = inner_trace(&zeta, &s.apply_adjoint(&phi).unwrap(), cfg.bnd()).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1e-3));
        assert!(measurement_map(&cfg).apply_adjoint(&zeta).is_err());
    }

    #[test]
    fn adjoint_check_rejects_zero_trials_and_is_deterministic() {
        let cfg = config(9, 1.0, 0.5);
        assert!(adjoint_check(&cfg, 0, 1).is_err());
        let a = adjoint_check(&cfg, 3, 42).unwrap();
        let b = adjoint_check(&cfg, 3, 42).unwrap();
        assert_eq!(a.max_exact.to_bits(), b.max_exact.to_bits());
        assert!(a.max_exact < 1e-12);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("trial,mode,defect"));
        assert_eq!(text.lines().count(), 7);
    }
}
