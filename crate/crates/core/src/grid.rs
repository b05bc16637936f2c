//! Uniform node-centred grids on a rectangle and scalar fields sampled on them.
//!
//! Nodes are stored row-major with `y` as the outer index, so node `(i, j)`
//! lives at `j * nx + i`. Boundary nodes are the nodes with an index on a face
//! of the rectangle; quadrature uses the tensor trapezoidal rule (weight 1 in
//! the interior, 1/2 on faces, 1/4 at corners, times the cell area).

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
    hx: f64,
    hy: f64,
    origin: [f64; 2],
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, hx: f64, hy: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        if !(hx > 0.0 && hy > 0.0 && hx.is_finite() && hy.is_finite()) {
            return Err(Error::Config(format!("grid spacings must be positive, got ({hx}, {hy})")));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(Self { nx, ny, hx, hy, origin })
    }

    /// Grid covering `[0, lx] x [0, ly]` with `nx x ny` nodes.
    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!("grid needs at least 3 nodes per axis, got {nx}x{ny}")));
        }
        Self::new(nx, ny, lx / (nx - 1) as f64, ly / (ny - 1) as f64, [0.0, 0.0])
    }

    /// `n x n` grid on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::rectangle(n, n, 1.0, 1.0)
    }

    /// The same rectangle sampled with `factor` times finer spacing.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("refinement factor must be >= 1".into()));
        }
        Self::new(
            factor * (self.nx - 1) + 1,
            factor * (self.ny - 1) + 1,
            self.hx / factor as f64,
            self.hy / factor as f64,
            self.origin,
        )
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + i as f64 * self.hx, self.origin[1] + j as f64 * self.hy]
    }

    /// Side lengths of the rectangle.
    pub fn extent(&self) -> [f64; 2] {
        [(self.nx - 1) as f64 * self.hx, (self.ny - 1) as f64 * self.hy]
    }

    pub fn upper(&self) -> [f64; 2] {
        let e = self.extent();
        [self.origin[0] + e[0], self.origin[1] + e[1]]
    }

    pub fn diameter(&self) -> f64 {
        let e = self.extent();
        e[0].hypot(e[1])
    }

    pub fn area(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1]
    }

    pub fn perimeter(&self) -> f64 {
        let e = self.extent();
        2.0 * (e[0] + e[1])
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Trapezoidal weight along x for column `i` (1 or 1/2).
    #[inline]
    pub fn weight_x(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx - 1 {
            0.5
        } else {
            1.0
        }
    }

    #[inline]
    pub fn weight_y(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny - 1 {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoidal volume element of node `(i, j)`: `w_node * hx * hy`.
    #[inline]
    pub fn volume_weight(&self, i: usize, j: usize) -> f64 {
        self.weight_x(i) * self.weight_y(j) * self.hx * self.hy
    }

    /// Volume elements of all nodes, in storage order.
    pub fn volume_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                w.push(self.volume_weight(i, j));
            }
        }
        w
    }

    /// Index of the node closest to a physical point (clamped to the grid).
    pub fn nearest_node(&self, x: [f64; 2]) -> (usize, usize) {
        let fi = ((x[0] - self.origin[0]) / self.hx).round();
        let fj = ((x[1] - self.origin[1]) / self.hy).round();
        let i = fi.clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = fj.clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let up = self.upper();
        x[0] >= self.origin[0] && x[0] <= up[0] && x[1] >= self.origin[1] && x[1] <= up[1]
    }

    pub(crate) fn ensure_same(&self, other: &Grid2D, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Dimension(format!("{what}: grids differ ({self:?} vs {other:?})")));
        }
        Ok(())
    }
}

/// A real-valued function sampled on every node of a [`Grid2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite field value at node {k}")));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let [x, y] = grid.coords(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub(crate) fn from_vec_unchecked(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ScalarField) -> Result<Self> {
        self.grid.ensure_same(&other.grid, "axpy")?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.axpy(1.0, other)
    }

    /// In-place `self += s * other`; grids must match (checked in debug builds).
    pub(crate) fn add_scaled(&mut self, s: f64, other: &ScalarField) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for ScalarField {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[self.grid.index(i, j)]
    }
}

impl IndexMut<(usize, usize)> for ScalarField {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        let k = self.grid.index(i, j);
        &mut self.values[k]
    }
}
