//! Weighted inner products, energies and the compatibility normalisation.
//!
//! * `H⁰(Ω)`: `Σ f g c⁻² w_node hx hy` (tensor trapezoidal rule).
//! * traces: `Σ_k Σ_b a b θ_k dt dS_b` (trapezoid in time, arc length on ∂Ω).
//! * energy: `½ ∫ |∇u|² + c⁻² q u² + c⁻² u_t²` with the gradient
//!   term taken over grid edges.

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::medium::MediumParams;
use crate::trace::BoundaryTrace;

/// A (displacement, velocity) pair on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyPair {
    pub u: ScalarField,
    pub ut: ScalarField,
}

impl CauchyPair {
    pub fn new(u: ScalarField, ut: ScalarField) -> Result<Self> {
        u.grid().ensure_same(ut.grid(), "cauchy pair")?;
        Ok(Self { u, ut })
    }

    /// `(u0, 0)`.
    pub fn at_rest(u0: ScalarField) -> Self {
        let ut = ScalarField::zeros(*u0.grid());
        Self { u: u0, ut }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self { u: ScalarField::zeros(grid), ut: ScalarField::zeros(grid) }
    }

    pub fn grid(&self) -> &Grid2D {
        self.u.grid()
    }
}

/// `⟨f, g⟩` in `H⁰(Ω)`.
pub fn inner_omega(f: &ScalarField, g: &ScalarField, med: &MediumParams) -> Result<f64> {
    f.grid().ensure_same(g.grid(), "inner_omega")?;
    f.grid().ensure_same(med.grid(), "inner_omega (medium)")?;
    Ok(inner_omega_unchecked(f.values(), g.values(), med))
}

pub(crate) fn inner_omega_unchecked(f: &[f64], g: &[f64], med: &MediumParams) -> f64 {
    let grid = med.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let inv_c2 = med.inv_c2();
    let mut total = 0.0;
    for j in 0..ny {
        let wy = grid.weight_y(j);
        let mut row = 0.0;
        for i in 0..nx {
            let k = j * nx + i;
            row += f[k] * g[k] * inv_c2[k] * grid.weight_x(i);
        }
        total += wy * row;
    }
    total * grid.hx() * grid.hy()
}

pub fn norm_omega(f: &ScalarField, med: &MediumParams) -> Result<f64> {
    Ok(inner_omega(f, f, med)?.max(0.0).sqrt())
}

/// `⟨a, b⟩` on `(0, τ) × ∂Ω`.
pub fn inner_trace(a: &BoundaryTrace, b: &BoundaryTrace, bnd: &BoundarySpec) -> Result<f64> {
    a.ensure_compatible(b, "inner_trace")?;
    if a.n_nodes() != bnd.len() {
        return Err(Error::Dimension("inner_trace: trace does not match boundary".into()));
    }
    let t = a.times();
    let ds = bnd.ds();
    let mut total = 0.0;
    for k in 0..t.levels() {
        let s: f64 = a.level(k).iter().zip(b.level(k)).zip(ds).map(|((x, y), w)| x * y * w).sum();
        total += t.weight(k) * s;
    }
    Ok(total * t.dt())
}

pub fn norm_trace(a: &BoundaryTrace, bnd: &BoundarySpec) -> Result<f64> {
    Ok(inner_trace(a, a, bnd)?.max(0.0).sqrt())
}

/// `½ ∫ |∇u|² + c⁻² q u²` (the squared Dirichlet norm).
///
/// Differences live on grid edges, weighted by the trapezoid weight of the
/// transverse direction. This is the quadratic form of the solver's Neumann
/// stencil (summation by parts), so it has no spurious null space and the
/// scheme conserves it up to the time discretisation.
fn potential_energy(u: &ScalarField, med: &MediumParams) -> f64 {
    let grid = med.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let (hx, hy) = (grid.hx(), grid.hy());
    let v = u.values();
    let q = med.q().values();
    let ic = med.inv_c2();
    let mut dirichlet = 0.0;
    for j in 0..ny {
        let wy = grid.weight_y(j) * hy;
        for i in 0..nx - 1 {
            let d = v[j * nx + i + 1] - v[j * nx + i];
            dirichlet += wy * d * d / hx;
        }
    }
    for j in 0..ny - 1 {
        for i in 0..nx {
            let d = v[(j + 1) * nx + i] - v[j * nx + i];
            dirichlet += grid.weight_x(i) * hx * d * d / hy;
        }
    }
    let mut potential = 0.0;
    if !med.q_is_zero() {
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                potential += grid.weight_x(i) * grid.weight_y(j) * ic[k] * q[k] * v[k] * v[k];
            }
        }
        potential *= hx * hy;
    }
    0.5 * (dirichlet + potential)
}

/// Energy `E = ½ ∫ |∇u|² + c⁻² q u² + c⁻² u_t²`.
pub fn energy(state: &CauchyPair, med: &MediumParams) -> Result<f64> {
    state.u.grid().ensure_same(state.ut.grid(), "energy")?;
    state.u.grid().ensure_same(med.grid(), "energy (medium)")?;
    let kinetic = 0.5 * inner_omega_unchecked(state.ut.values(), state.ut.values(), med);
    Ok(potential_energy(&state.u, med) + kinetic)
}

/// Dirichlet norm `(½ ∫ |∇u₀|² + c⁻² q u₀²)^{1/2}`; a seminorm when `q ≡ 0`.
pub fn hr_norm(u0: &ScalarField, med: &MediumParams) -> Result<f64> {
    u0.grid().ensure_same(med.grid(), "hr_norm")?;
    Ok(potential_energy(u0, med).max(0.0).sqrt())
}

/// `∫_Ω c⁻² u_t + ∫_{∂Ω} λ u dS`, conserved in time when `q ≡ 0`.
///
/// The volume term carries the `H⁰` weight `c⁻²`; for `c ≡ 1` it is the plain
/// integral of `u_t`.
pub fn compatibility_functional(state: &CauchyPair, bnd: &BoundarySpec, med: &MediumParams) -> Result<f64> {
    state.u.grid().ensure_same(state.ut.grid(), "compatibility")?;
    state.u.grid().ensure_same(med.grid(), "compatibility (medium)")?;
    state.u.grid().ensure_same(bnd.grid(), "compatibility (boundary)")?;
    let ones = vec![1.0; state.ut.values().len()];
    let volume = inner_omega_unchecked(state.ut.values(), &ones, med);
    Ok(volume + boundary_lambda_integral(&state.u, bnd))
}

/// `∫_{∂Ω} λ u dS`.
pub fn boundary_lambda_integral(u: &ScalarField, bnd: &BoundarySpec) -> f64 {
    let v = u.values();
    bnd.nodes()
        .iter()
        .zip(bnd.lambda())
        .zip(bnd.ds())
        .map(|((n, l), w)| l * w * v[n.index])
        .sum()
}

/// Shifts `u` by a constant so that the state satisfies the compatibility
/// condition `∫ c⁻² u_t + ∫ λ u dS = 0`; `u_t` is unchanged.
pub fn compatibility_shift(state: &CauchyPair, bnd: &BoundarySpec, med: &MediumParams) -> Result<CauchyPair> {
    if !med.q_is_zero() {
        return Err(Error::Contract("compatibility shift only applies when q ≡ 0".into()));
    }
    let lam = bnd.lambda_integral();
    if lam <= 0.0 {
        return Err(Error::Degenerate("∫ λ dS = 0: the compatibility shift is undefined".into()));
    }
    let shift = compatibility_functional(state, bnd, med)? / lam;
    Ok(CauchyPair { u: state.u.map(|v| v - shift), ut: state.ut.clone() })
}

/// Applies [`compatibility_shift`] to a displacement at rest, i.e. removes the
/// constant that makes `∫ λ u₀ dS` vanish.
pub fn normalize_at_rest(u0: &ScalarField, bnd: &BoundarySpec, med: &MediumParams) -> Result<ScalarField> {
    Ok(compatibility_shift(&CauchyPair::at_rest(u0.clone()), bnd, med)?.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TimeAxis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> (Grid2D, MediumParams, BoundarySpec) {
        let g = Grid2D::unit_square(n).unwrap();
        (g, MediumParams::constant(g, 1.0, 0.0).unwrap(), BoundarySpec::uniform(g, 1.0).unwrap())
    }

    #[test]
    fn inner_omega_of_ones_is_area() {
        let (g, med, _) = unit(3);
        let one = ScalarField::constant(g, 1.0);
        assert!((inner_omega(&one, &one, &med).unwrap() - 1.0).abs() < 1e-15);
        let zero = ScalarField::zeros(g);
        assert_eq!(inner_omega(&zero, &zero, &med).unwrap(), 0.0);
    }

    #[test]
    fn inner_omega_matches_explicit_quadrature() {
        let g = Grid2D::rectangle(5, 5, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = ScalarField::from_fn(g, |_, _| rng.random_range(0.5..2.0));
        let med = MediumParams::new(c.clone(), ScalarField::zeros(g)).unwrap();
        let f = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        let h = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        // independent loop: weights from node position tests
        let mut oracle = 0.0;
        for j in 0..5 {
            for i in 0..5 {
                let edge_i = i == 0 || i == 4;
                let edge_j = j == 0 || j == 4;
                let w = match (edge_i, edge_j) {
                    (true, true) => 0.25,
                    (true, false) | (false, true) => 0.5,
                    _ => 1.0,
                };
                oracle += f.at(i, j) * h.at(i, j) / (c.at(i, j) * c.at(i, j)) * w * 0.25 * 0.25;
            }
        }
        let got = inner_omega(&f, &h, &med).unwrap();
        assert!((got - oracle).abs() < 1e-14, "{got} vs {oracle}");
    }

    #[test]
    fn inner_omega_rejects_mismatched_grids() {
        let (g, med, _) = unit(4);
        let other = ScalarField::zeros(Grid2D::unit_square(5).unwrap());
        assert!(inner_omega(&ScalarField::zeros(g), &other, &med).is_err());
    }

    #[test]
    fn inner_trace_of_ones_is_perimeter_times_tau() {
        // unit perimeter: square of side 1/4
        let g = Grid2D::rectangle(6, 6, 0.25, 0.25).unwrap();
        let bnd = BoundarySpec::uniform(g, 0.0).unwrap();
        let t = TimeAxis::new(0.1, 10).unwrap();
        let one = BoundaryTrace::from_fn(bnd.len(), t, |_, _| 1.0);
        assert!((inner_trace(&one, &one, &bnd).unwrap() - 1.0).abs() < 1e-14);
        let z = BoundaryTrace::zeros(bnd.len(), t);
        assert_eq!(inner_trace(&z, &z, &bnd).unwrap(), 0.0);
    }

    #[test]
    fn inner_trace_matches_double_loop() {
        let (_, _, bnd) = unit(5);
        let t = TimeAxis::new(0.05, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = BoundaryTrace::from_fn(bnd.len(), t, |_, _| rng.random_range(-1.0..1.0));
        let b = BoundaryTrace::from_fn(bnd.len(), t, |_, _| rng.random_range(-1.0..1.0));
        let mut oracle = 0.0;
        for k in 0..=7 {
            let wt = if k == 0 || k == 7 { 0.5 } else { 1.0 };
            for bi in 0..bnd.len() {
                // Corners get two half edges, so every node carries h.
                let ds = 0.25;
                oracle += a.get(k, bi) * b.get(k, bi) * ds * wt * 0.05;
            }
        }
        assert!((inner_trace(&a, &b, &bnd).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn energy_closed_forms() {
        let (g, _, _) = unit(9);
        let med2 = MediumParams::constant(g, 2.0, 0.0).unwrap();
        let rest = CauchyPair::zeros(g);
        assert_eq!(energy(&rest, &med2).unwrap(), 0.0);
        let constant = CauchyPair::at_rest(ScalarField::constant(g, 1.0));
        assert!(energy(&constant, &med2).unwrap().abs() < 1e-14);
        let moving = CauchyPair { u: ScalarField::zeros(g), ut: ScalarField::constant(g, 1.0) };
        assert!((energy(&moving, &med2).unwrap() - 0.125).abs() < 1e-14);
    }

    #[test]
    fn energy_splits_into_dirichlet_and_kinetic_parts() {
        let (g, _, _) = unit(11);
        let med = MediumParams::constant(g, 1.3, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        let ut = ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0));
        let e = energy(&CauchyPair::new(u.clone(), ut.clone()).unwrap(), &med).unwrap();
        let split = hr_norm(&u, &med).unwrap().powi(2) + 0.5 * inner_omega(&ut, &ut, &med).unwrap();
        assert!((e - split).abs() < 1e-14 * e.max(1.0));
        assert_eq!(hr_norm(&ScalarField::zeros(g), &med).unwrap(), 0.0);
    }

    #[test]
    fn hr_norm_vanishes_on_constants_without_potential() {
        let (g, med, _) = unit(6);
        assert!(hr_norm(&ScalarField::constant(g, 3.0), &med).unwrap() < 1e-13);
    }

    #[test]
    fn compatibility_shift_examples() {
        let (g, med, bnd) = unit(9);
        let ones = CauchyPair::at_rest(ScalarField::constant(g, 1.0));
        let shifted = compatibility_shift(&ones, &bnd, &med).unwrap();
        assert!(shifted.u.values().iter().all(|v| v.abs() < 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = CauchyPair {
            u: ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0)),
            ut: ScalarField::from_fn(g, |_, _| rng.random_range(-1.0..1.0)),
        };
        let once = compatibility_shift(&s, &bnd, &med).unwrap();
        assert!(compatibility_functional(&once, &bnd, &med).unwrap().abs() < 1e-12);
        let twice = compatibility_shift(&once, &bnd, &med).unwrap();
        assert!(twice.u.max_abs_diff(&once.u) < 1e-13);
        assert_eq!(once.ut, s.ut);
    }

    #[test]
    fn compatibility_shift_needs_impedance() {
        let (g, med, _) = unit(5);
        let hard = BoundarySpec::uniform(g, 0.0).unwrap();
        let err = compatibility_shift(&CauchyPair::zeros(g), &hard, &med).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }
}
