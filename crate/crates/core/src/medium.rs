//! Acoustic medium: wave speed `c > 0` and potential `q >= 0` on the grid,
//! plus continuous speed models used by the ray tracer.
//!
//! The metric is the Euclidean identity, so the `H⁰` volume weight is `c⁻²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct MediumParams {
    c: ScalarField,
    q: ScalarField,
    inv_c2: Vec<f64>,
}

impl MediumParams {
    pub fn new(c: ScalarField, q: ScalarField) -> Result<Self> {
        c.grid().ensure_same(q.grid(), "medium")?;
        if !c.is_finite() || !q.is_finite() {
            return Err(Error::Config("medium coefficients must be finite".into()));
        }
        if c.min() <= 0.0 {
            return Err(Error::Config(format!("wave speed must be positive, min is {}", c.min())));
        }
        if q.min() < 0.0 {
            return Err(Error::Config(format!("potential must be non-negative, min is {}", q.min())));
        }
        let inv_c2 = c.values().iter().map(|v| 1.0 / (v * v)).collect();
        Ok(Self { c, q, inv_c2 })
    }

    pub fn constant(grid: Grid2D, c: f64, q: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, c), ScalarField::constant(grid, q))
    }

    /// Samples a continuous speed model on the grid, with constant potential `q`.
    pub fn from_model(grid: Grid2D, model: &dyn SpeedModel, q: f64) -> Result<Self> {
        let c = ScalarField::from_fn(grid, |x, y| model.speed([x, y]));
        Self::new(c, ScalarField::constant(grid, q))
    }

    pub fn grid(&self) -> &Grid2D {
        self.c.grid()
    }

    pub fn c(&self) -> &ScalarField {
        &self.c
    }

    pub fn q(&self) -> &ScalarField {
        &self.q
    }

    /// `c⁻²` per node.
    pub fn inv_c2(&self) -> &[f64] {
        &self.inv_c2
    }

    pub fn c_max(&self) -> f64 {
        self.c.max()
    }

    pub fn c_min(&self) -> f64 {
        self.c.min()
    }

    pub fn q_is_zero(&self) -> bool {
        self.q.is_all_zero()
    }

    /// `H⁰` quadrature weights `c⁻² w hx hy` per node.
    pub fn mass_weights(&self) -> Vec<f64> {
        let g = self.grid();
        let mut w = g.volume_weights();
        for (wk, ic) in w.iter_mut().zip(&self.inv_c2) {
            *wk *= ic;
        }
        w
    }
}

/// A smooth wave-speed model on the plane.
pub trait SpeedModel: Send + Sync {
    fn speed(&self, x: [f64; 2]) -> f64;
    fn gradient(&self, x: [f64; 2]) -> [f64; 2];
}

/// Gaussian perturbation `amplitude * exp(-|x - center|² / sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lens {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub sigma: f64,
}

/// Analytic speed profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum SpeedProfile {
    Constant(f64),
    /// `c0 + slope · (x - origin)`.
    Linear { c0: f64, origin: [f64; 2], slope: [f64; 2] },
    /// Background speed plus Gaussian lenses.
    Lenses { background: f64, lenses: Vec<Lens> },
}

impl SpeedModel for SpeedProfile {
    fn speed(&self, x: [f64; 2]) -> f64 {
        match self {
            SpeedProfile::Constant(c) => *c,
            SpeedProfile::Linear { c0, origin, slope } => {
                c0 + slope[0] * (x[0] - origin[0]) + slope[1] * (x[1] - origin[1])
            }
            SpeedProfile::Lenses { background, lenses } => {
                background
                    + lenses
                        .iter()
                        .map(|l| {
                            let r2 = (x[0] - l.center[0]).powi(2) + (x[1] - l.center[1]).powi(2);
                            l.amplitude * (-r2 / (l.sigma * l.sigma)).exp()
                        })
                        .sum::<f64>()
            }
        }
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            SpeedProfile::Constant(_) => [0.0, 0.0],
            SpeedProfile::Linear { slope, .. } => *slope,
            SpeedProfile::Lenses { lenses, .. } => {
                let mut g = [0.0, 0.0];
                for l in lenses {
                    let dx = x[0] - l.center[0];
                    let dy = x[1] - l.center[1];
                    let s2 = l.sigma * l.sigma;
                    let e = l.amplitude * (-(dx * dx + dy * dy) / s2).exp();
                    g[0] += -2.0 * dx / s2 * e;
                    g[1] += -2.0 * dy / s2 * e;
                }
                g
            }
        }
    }
}

/// Piecewise-bicubic (Catmull-Rom) interpolation of a sampled speed field.
/// C¹ across cells, which is what the ray integrator needs.
#[derive(Debug, Clone)]
pub struct GridSpeed {
    field: ScalarField,
}

impl GridSpeed {
    pub fn new(field: ScalarField) -> Result<Self> {
        if field.min() <= 0.0 {
            return Err(Error::Config("sampled speed must be positive".into()));
        }
        Ok(Self { field })
    }

    fn sample(&self, i: isize, j: isize) -> f64 {
        let g = self.field.grid();
        let i = i.clamp(0, g.nx() as isize - 1) as usize;
        let j = j.clamp(0, g.ny() as isize - 1) as usize;
        self.field.at(i, j)
    }

    fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let g = self.field.grid();
        let fx = ((x[0] - g.origin()[0]) / g.hx()).clamp(0.0, (g.nx() - 1) as f64);
        let fy = ((x[1] - g.origin()[1]) / g.hy()).clamp(0.0, (g.ny() - 1) as f64);
        let i0 = (fx.floor() as isize).min(g.nx() as isize - 2);
        let j0 = (fy.floor() as isize).min(g.ny() as isize - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let (wx, dwx) = catmull_rom(tx);
        let (wy, dwy) = catmull_rom(ty);
        let mut v = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (b, (&wyb, &dwyb)) in wy.iter().zip(&dwy).enumerate() {
            for (a, (&wxa, &dwxa)) in wx.iter().zip(&dwx).enumerate() {
                let s = self.sample(i0 + a as isize - 1, j0 + b as isize - 1);
                v += wxa * wyb * s;
                gx += dwxa * wyb * s;
                gy += wxa * dwyb * s;
            }
        }
        (v, [gx / g.hx(), gy / g.hy()])
    }
}

/// Catmull-Rom weights and their derivatives at parameter `t` in [0, 1].
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let d = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, d)
}

impl SpeedModel for GridSpeed {
    fn speed(&self, x: [f64; 2]) -> f64 {
        self.eval(x).0
    }

    fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        self.eval(x).1
    }
}

/// Bicubic resampling of `field` onto `target` (both grids must cover the same rectangle).
pub fn resample(field: &ScalarField, target: Grid2D) -> ScalarField {
    let interp = GridSpeed { field: field.clone() };
    ScalarField::from_fn(target, |x, y| interp.eval([x, y]).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_speed_and_negative_potential() {
        let g = Grid2D::unit_square(4).unwrap();
        assert!(MediumParams::constant(g, 0.0, 0.0).is_err());
        assert!(MediumParams::constant(g, 1.0, -0.1).is_err());
        assert!(MediumParams::constant(g, 1.0, 0.0).unwrap().q_is_zero());
    }

    #[test]
    fn lens_gradient_matches_finite_differences() {
        let p = SpeedProfile::Lenses {
            background: 1.0,
            lenses: vec![Lens { center: [0.4, 0.6], amplitude: 0.3, sigma: 0.2 }],
        };
        let x = [0.55, 0.47];
        let h = 1e-6;
        let g = p.gradient(x);
        let fdx = (p.speed([x[0] + h, x[1]]) - p.speed([x[0] - h, x[1]])) / (2.0 * h);
        let fdy = (p.speed([x[0], x[1] + h]) - p.speed([x[0], x[1] - h])) / (2.0 * h);
        assert!((g[0] - fdx).abs() < 1e-8);
        assert!((g[1] - fdy).abs() < 1e-8);
    }

    #[test]
    fn catmull_rom_reproduces_linear_fields() {
        let g = Grid2D::unit_square(9).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + 0.5 * x - 0.25 * y);
        let s = GridSpeed::new(f).unwrap();
        let x = [0.33, 0.71];
        assert!((s.speed(x) - (1.0 + 0.5 * 0.33 - 0.25 * 0.71)).abs() < 1e-12);
        let gr = s.gradient(x);
        assert!((gr[0] - 0.5).abs() < 1e-12 && (gr[1] + 0.25).abs() < 1e-12);
    }
}
