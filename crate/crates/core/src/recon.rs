//! Reconstruction drivers: conjugate gradients on the normal equations, the
//! Neumann series, and the control operator `C = S*(SS*)⁻¹`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::ScalarField;
use crate::medium::MediumParams;
use crate::norms::{boundary_lambda_integral, hr_norm, inner_omega};
use crate::ops::{error_op, normal_op, rhs_method1};
use crate::solver::{backproject, solution_op_adjoint, AdjointMode, WaveRunConfig};
use crate::trace::BoundaryTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub max_iters: usize,
    /// Stop when `‖r‖ ≤ rel_tol ‖b‖` (`H⁰` norm).
    pub rel_tol: f64,
    pub history: bool,
    /// Start from `A d` instead of zero.
    pub warm_start: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { max_iters: 200, rel_tol: 1e-8, history: true, warm_start: false }
    }
}

impl CgOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("CG needs max_iters >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("CG tolerance must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannOptions {
    pub max_terms: usize,
    /// Stop when `‖update‖_{H_R} ≤ rel_tol ‖x‖_{H_R}`.
    pub rel_tol: f64,
    pub history: bool,
}

impl Default for NeumannOptions {
    fn default() -> Self {
        Self { max_terms: 100, rel_tol: 1e-8, history: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    ConjugateGradient,
    NeumannSeries,
}

/// Outcome of a reconstruction.
#[derive(Debug, Clone)]
pub struct ReconReport {
    pub method: Method,
    pub estimate: ScalarField,
    /// CG iterations or Neumann terms beyond the first.
    pub iterations: usize,
    /// Relative residuals (CG) or relative update norms (Neumann); entry 0 is the start.
    pub history: Vec<f64>,
    /// Consecutive ratios of residuals (CG) or of update norms `‖Kⁿ⁺¹a‖/‖Kⁿa‖` (Neumann).
    pub ratios: Vec<f64>,
    pub converged: bool,
    /// Final residual reduction (CG) or measured contraction ratio (Neumann).
    pub rate: f64,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct HistoryRow {
    iter: usize,
    residual_or_update: f64,
    ratio: Option<f64>,
}

impl ReconReport {
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (k, &v) in self.history.iter().enumerate() {
            let ratio = if k == 0 { None } else { self.ratios.get(k - 1).copied() };
            out.serialize(HistoryRow { iter: k, residual_or_update: v, ratio })?;
        }
        out.flush()?;
        Ok(())
    }
}

fn ratios_of(history: &[f64]) -> Vec<f64> {
    history
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect()
}

/// Result of [`conjugate_gradient`].
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: ScalarField,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradients for an operator self-adjoint in the `H⁰` inner product.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&ScalarField) -> Result<ScalarField>,
    b: &ScalarField,
    x0: Option<ScalarField>,
    med: &MediumParams,
    opts: &CgOptions,
) -> Result<CgOutcome> {
    opts.validate()?;
    let b_norm = inner_omega(b, b, med)?.sqrt();
    let grid = *b.grid();
    if b_norm == 0.0 {
        return Ok(CgOutcome { x: ScalarField::zeros(grid), iterations: 0, history: vec![0.0], converged: true });
    }
    let (mut x, mut r) = match x0 {
        Some(x0) => {
            let ax = apply(&x0)?;
            let r = b.sub(&ax)?;
            (x0, r)
        }
        None => (ScalarField::zeros(grid), b.clone()),
    };
    let mut p = r.clone();
    let mut rr = inner_omega(&r, &r, med)?;
    let mut history = vec![rr.sqrt() / b_norm];
    let mut iterations = 0;
    let mut converged = history[0] <= opts.rel_tol;
    while !converged && iterations < opts.max_iters {
        let ap = apply(&p)?;
        let pap = inner_omega(&p, &ap, med)?;
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Divergence(format!(
                "CG curvature ⟨p, Ap⟩ = {pap:e} at iteration {iterations}: operator is not positive definite"
            )));
        }
        let alpha = rr / pap;
        x.add_scaled(alpha, &p);
        r.add_scaled(-alpha, &ap);
        let rr_new = inner_omega(&r, &r, med)?;
        if !rr_new.is_finite() {
            return Err(Error::Divergence(format!("non-finite CG residual at iteration {iterations}")));
        }
        iterations += 1;
        history.push(rr_new.sqrt() / b_norm);
        converged = rr_new.sqrt() <= opts.rel_tol * b_norm;
        let beta = rr_new / rr;
        rr = rr_new;
        for (pk, rk) in p.values_mut().iter_mut().zip(r.values()) {
            *pk = rk + beta * *pk;
        }
    }
    Ok(CgOutcome { x, iterations, history, converged })
}

fn require_exact(cfg: &WaveRunConfig) -> Result<()> {
    if cfg.adjoint_mode() != AdjointMode::ExactDiscrete {
        return Err(Error::Config(
            "CG on the normal equations needs the exact discrete adjoint (adjoint_mode = exact_discrete)".into(),
        ));
    }
    Ok(())
}

/// Solves `SS* x = S U d` by CG from a zero start.
pub fn reconstruct_cg(d: &BoundaryTrace, cfg: &WaveRunConfig, opts: &CgOptions) -> Result<ReconReport> {
    require_exact(cfg)?;
    d.check_against(cfg.bnd(), true)?;
    let b = rhs_method1(d, cfg)?;
    let x0 = if opts.warm_start { Some(backproject(d, cfg)?) } else { None };
    let out = conjugate_gradient(|x| normal_op(x, cfg), &b, x0, cfg.med(), opts)?;
    let rate = *out.history.last().unwrap_or(&0.0);
    let ratios = ratios_of(&out.history);
    let history = if opts.history { out.history } else { vec![rate] };
    Ok(ReconReport {
        method: Method::ConjugateGradient,
        estimate: out.x,
        iterations: out.iterations,
        history,
        ratios,
        converged: out.converged,
        rate,
        warnings: Vec::new(),
    })
}

/// Removes the constant that `K` cannot see when `q ≡ 0`: the result satisfies
/// `∫ λ u dS = 0`. Identity when `q ≢ 0` or `∫ λ dS = 0`.
pub fn normalize_estimate(u: &ScalarField, cfg: &WaveRunConfig) -> Result<ScalarField> {
    let lam = cfg.bnd().lambda_integral();
    if !cfg.med().q_is_zero() || lam <= 0.0 {
        return Ok(u.clone());
    }
    let shift = boundary_lambda_integral(u, cfg.bnd()) / lam;
    Ok(u.map(|v| v - shift))
}

/// Partial sums of `Σ Kⁿ A d`.
///
/// With `q ≡ 0` every term is normalised by [`normalize_estimate`] (constants
/// are fixed points of `K`), so the estimate is defined up to that constant.
pub fn reconstruct_neumann(d: &BoundaryTrace, cfg: &WaveRunConfig, opts: &NeumannOptions) -> Result<ReconReport> {
    if opts.max_terms == 0 {
        return Err(Error::Config("Neumann series needs max_terms >= 1".into()));
    }
    d.check_against(cfg.bnd(), true)?;
    let bnd = cfg.bnd();
    let med = cfg.med();
    let mut warnings = Vec::new();
    if !bnd.gamma_is_positive_lambda() {
        warnings.push("observed set differs from {λ > 0}; K need not be a contraction".to_string());
    }
    let observed_lambda_zero = bnd.lambda().iter().zip(bnd.gamma()).all(|(&l, &g)| !g || l == 0.0);
    if observed_lambda_zero {
        warnings.push("λ vanishes on the observed set: A = 0 and K = Id, the series cannot converge".to_string());
        return Ok(ReconReport {
            method: Method::NeumannSeries,
            estimate: ScalarField::zeros(*cfg.grid()),
            iterations: 0,
            history: vec![1.0],
            ratios: vec![1.0],
            converged: false,
            rate: 1.0,
            warnings,
        });
    }
    let mut update = normalize_estimate(&backproject(d, cfg)?, cfg)?;
    let mut x = update.clone();
    let x_norm0 = hr_norm(&x, med)?;
    if x_norm0 == 0.0 {
        return Ok(ReconReport {
            method: Method::NeumannSeries,
            estimate: x,
            iterations: 0,
            history: vec![0.0],
            ratios: Vec::new(),
            converged: true,
            rate: 0.0,
            warnings,
        });
    }
    let mut history = vec![1.0];
    let mut update_norms = vec![x_norm0];
    let mut converged = false;
    let mut iterations = 0;
    while iterations + 1 < opts.max_terms {
        update = normalize_estimate(&error_op(&update, cfg)?, cfg)?;
        if !update.is_finite() {
            return Err(Error::Divergence(format!("non-finite Neumann update at term {}", iterations + 1)));
        }
        x.add_scaled(1.0, &update);
        iterations += 1;
        let un = hr_norm(&update, med)?;
        let xn = hr_norm(&x, med)?;
        history.push(un / xn);
        update_norms.push(un);
        if un <= opts.rel_tol * xn {
            converged = true;
            break;
        }
    }
    let ratios = ratios_of(&update_norms);
    let rate = ratios.last().copied().unwrap_or(0.0);
    let sustained = ratios.iter().rev().take(3).all(|&r| r < 1.0);
    Ok(ReconReport {
        method: Method::NeumannSeries,
        estimate: x,
        iterations,
        history: if opts.history { history } else { Vec::new() },
        ratios,
        converged: converged && sustained,
        rate,
        warnings,
    })
}

/// `C φ = S* (SS*)⁻¹ φ`: the minimum-norm source steering rest to `(0, φ)` at `τ`.
pub fn control_apply(phi: &ScalarField, cfg: &WaveRunConfig, opts: &CgOptions) -> Result<BoundaryTrace> {
    Ok(control_apply_report(phi, cfg, opts)?.0)
}

/// [`control_apply`] together with the CG outcome of the inner solve.
pub fn control_apply_report(
    phi: &ScalarField,
    cfg: &WaveRunConfig,
    opts: &CgOptions,
) -> Result<(BoundaryTrace, CgOutcome)> {
    require_exact(cfg)?;
    phi.grid().ensure_same(cfg.grid(), "control")?;
    let out = conjugate_gradient(|x| normal_op(x, cfg), phi, None, cfg.med(), opts)?;
    let zeta = solution_op_adjoint(&out.x, cfg)?;
    Ok((zeta, out))
}
