//! Boundary node enumeration, impedance coefficients and the observed set Γ.
//!
//! Boundary nodes are listed counter-clockwise starting at the lower-left
//! corner: bottom row left to right, right column upwards, top row right to
//! left, left column downwards. Corner nodes belong to both adjacent faces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// One side of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bottom" | "south" => Ok(Side::Bottom),
            "right" | "east" => Ok(Side::Right),
            "top" | "north" => Ok(Side::Top),
            "left" | "west" => Ok(Side::Left),
            other => Err(Error::Spec(format!("unknown face '{other}'"))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Side::Bottom => "bottom",
            Side::Right => "right",
            Side::Top => "top",
            Side::Left => "left",
        };
        f.write_str(s)
    }
}

/// Location class of a boundary node. The numeric ids are part of the trace
/// file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    Bottom,
    Right,
    Top,
    Left,
    BottomLeft,
    BottomRight,
    TopRight,
    TopLeft,
}

impl Face {
    pub fn id(self) -> u8 {
        match self {
            Face::Bottom => 0,
            Face::Right => 1,
            Face::Top => 2,
            Face::Left => 3,
            Face::BottomLeft => 4,
            Face::BottomRight => 5,
            Face::TopRight => 6,
            Face::TopLeft => 7,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            0 => Face::Bottom,
            1 => Face::Right,
            2 => Face::Top,
            3 => Face::Left,
            4 => Face::BottomLeft,
            5 => Face::BottomRight,
            6 => Face::TopRight,
            7 => Face::TopLeft,
            _ => return Err(Error::Format(format!("unknown face id {id}"))),
        })
    }

    pub fn sides(self) -> &'static [Side] {
        match self {
            Face::Bottom => &[Side::Bottom],
            Face::Right => &[Side::Right],
            Face::Top => &[Side::Top],
            Face::Left => &[Side::Left],
            Face::BottomLeft => &[Side::Bottom, Side::Left],
            Face::BottomRight => &[Side::Bottom, Side::Right],
            Face::TopRight => &[Side::Top, Side::Right],
            Face::TopLeft => &[Side::Top, Side::Left],
        }
    }

    pub fn is_corner(self) -> bool {
        self.sides().len() == 2
    }

    pub fn touches(self, side: Side) -> bool {
        self.sides().contains(&side)
    }

    fn classify(grid: &Grid2D, i: usize, j: usize) -> Face {
        let (left, right) = (i == 0, i == grid.nx() - 1);
        let (bottom, top) = (j == 0, j == grid.ny() - 1);
        match (left, right, bottom, top) {
            (true, _, true, _) => Face::BottomLeft,
            (_, true, true, _) => Face::BottomRight,
            (_, true, _, true) => Face::TopRight,
            (true, _, _, true) => Face::TopLeft,
            (_, _, true, _) => Face::Bottom,
            (_, true, _, _) => Face::Right,
            (_, _, _, true) => Face::Top,
            _ => Face::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryNode {
    /// Linear node index into the grid.
    pub index: usize,
    pub i: usize,
    pub j: usize,
    pub face: Face,
}

/// Enumerates the boundary nodes of `grid` in counter-clockwise order.
pub fn boundary_nodes(grid: &Grid2D) -> Vec<BoundaryNode> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut ij = Vec::with_capacity(2 * (nx + ny) - 4);
    ij.extend((0..nx).map(|i| (i, 0)));
    ij.extend((1..ny).map(|j| (nx - 1, j)));
    ij.extend((0..nx - 1).rev().map(|i| (i, ny - 1)));
    ij.extend((1..ny - 1).rev().map(|j| (0, j)));
    ij.into_iter()
        .map(|(i, j)| BoundaryNode { index: grid.index(i, j), i, j, face: Face::classify(grid, i, j) })
        .collect()
}

/// Boundary description: node list, impedance λ per node and the observed set Γ.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    grid: Grid2D,
    nodes: Vec<BoundaryNode>,
    lambda: Vec<f64>,
    gamma: Vec<bool>,
    /// Arc-length quadrature weight per node.
    ds: Vec<f64>,
    /// Ghost-node injection factor per node: `2/hx` per x-face plus `2/hy` per y-face.
    injection: Vec<f64>,
    /// Grid node index -> boundary position (`usize::MAX` for interior nodes).
    slot: Vec<usize>,
}

impl BoundarySpec {
    pub fn new(grid: Grid2D, lambda: Vec<f64>, gamma: Vec<bool>) -> Result<Self> {
        let nodes = boundary_nodes(&grid);
        let n = nodes.len();
        if lambda.len() != n || gamma.len() != n {
            return Err(Error::Dimension(format!(
                "boundary has {n} nodes, got {} impedance values and {} mask entries",
                lambda.len(),
                gamma.len()
            )));
        }
        for (b, (&l, &g)) in lambda.iter().zip(&gamma).enumerate() {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("impedance must be finite and >= 0 (node {b}: {l})")));
            }
            if l > 0.0 && !g {
                return Err(Error::Config(format!(
                    "impedance is positive at boundary node {b} but the node is not observed"
                )));
            }
        }
        let mut ds = Vec::with_capacity(n);
        let mut injection = Vec::with_capacity(n);
        let mut slot = vec![usize::MAX; grid.len()];
        for (b, node) in nodes.iter().enumerate() {
            let mut w = 0.0;
            let mut inj = 0.0;
            for side in node.face.sides() {
                match side {
                    Side::Left | Side::Right => {
                        w += grid.weight_y(node.j) * grid.hy();
                        inj += 2.0 / grid.hx();
                    }
                    Side::Bottom | Side::Top => {
                        w += grid.weight_x(node.i) * grid.hx();
                        inj += 2.0 / grid.hy();
                    }
                }
            }
            ds.push(w);
            injection.push(inj);
            slot[node.index] = b;
        }
        Ok(Self { grid, nodes, lambda, gamma, ds, injection, slot })
    }

    /// Builds λ and Γ from textual specs. When `gamma` is `None`, Γ = {λ > 0}.
    pub fn from_specs(grid: Grid2D, lambda: &LambdaSpec, gamma: Option<&GammaSpec>) -> Result<Self> {
        let nodes = boundary_nodes(&grid);
        let lam: Vec<f64> = nodes.iter().map(|nd| lambda.value_at(&grid, nd)).collect();
        let mask: Vec<bool> = match gamma {
            Some(g) => nodes.iter().map(|nd| g.contains(&grid, nd)).collect(),
            None => lam.iter().map(|&l| l > 0.0).collect(),
        };
        Self::new(grid, lam, mask)
    }

    /// Constant impedance on the whole boundary, Γ = ∂Ω.
    pub fn uniform(grid: Grid2D, lambda: f64) -> Result<Self> {
        let n = boundary_nodes(&grid).len();
        Self::new(grid, vec![lambda; n], vec![true; n])
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn nodes(&self) -> &[BoundaryNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn gamma(&self) -> &[bool] {
        &self.gamma
    }

    pub fn ds(&self) -> &[f64] {
        &self.ds
    }

    pub(crate) fn injection(&self) -> &[f64] {
        &self.injection
    }

    /// Boundary position of grid node `k`, if it is a boundary node.
    pub fn slot_of(&self, k: usize) -> Option<usize> {
        match self.slot.get(k) {
            Some(&b) if b != usize::MAX => Some(b),
            _ => None,
        }
    }

    pub fn gamma_count(&self) -> usize {
        self.gamma.iter().filter(|&&g| g).count()
    }

    /// `∫_{∂Ω} λ dS`.
    pub fn lambda_integral(&self) -> f64 {
        self.lambda.iter().zip(&self.ds).map(|(l, w)| l * w).sum()
    }

    pub fn lambda_vanishes(&self) -> bool {
        self.lambda.iter().all(|&l| l == 0.0)
    }

    /// True when the observed set is exactly the set where λ > 0.
    pub fn gamma_is_positive_lambda(&self) -> bool {
        self.lambda.iter().zip(&self.gamma).all(|(&l, &g)| (l > 0.0) == g)
    }

    /// Maximal runs of consecutive observed nodes (cyclically), as
    /// `(start, length)` pairs in boundary order.
    pub fn gamma_arcs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        if self.gamma.iter().all(|&g| g) {
            return vec![(0, n)];
        }
        let Some(first_gap) = self.gamma.iter().position(|&g| !g) else {
            return vec![];
        };
        let mut arcs = Vec::new();
        let mut run: Option<(usize, usize)> = None;
        for step in 1..=n {
            let b = (first_gap + step) % n;
            if self.gamma[b] {
                run = Some(match run {
                    Some((s, l)) => (s, l + 1),
                    None => (b, 1),
                });
            } else if let Some(r) = run.take() {
                arcs.push(r);
            }
        }
        if let Some(r) = run {
            arcs.push(r);
        }
        arcs
    }

    /// Same node set with a different Γ (λ must still vanish off Γ).
    pub fn with_gamma(&self, gamma: Vec<bool>) -> Result<Self> {
        Self::new(self.grid, self.lambda.clone(), gamma)
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, lambda, self.gamma.clone())
    }
}

/// Selects a set of boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryRegion {
    None,
    Full,
    Faces(Vec<Side>),
    /// Part of one face, with start/end given as fractions of the face length
    /// measured along the coordinate axis of the face.
    Arc { side: Side, start: f64, end: f64 },
}

impl BoundaryRegion {
    pub fn contains(&self, grid: &Grid2D, node: &BoundaryNode) -> bool {
        match self {
            BoundaryRegion::None => false,
            BoundaryRegion::Full => true,
            BoundaryRegion::Faces(sides) => sides.iter().any(|&s| node.face.touches(s)),
            BoundaryRegion::Arc { side, start, end } => {
                if !node.face.touches(*side) {
                    return false;
                }
                let frac = match side {
                    Side::Bottom | Side::Top => node.i as f64 / (grid.nx() - 1) as f64,
                    Side::Left | Side::Right => node.j as f64 / (grid.ny() - 1) as f64,
                };
                let eps = 1e-12;
                frac >= start - eps && frac <= end + eps
            }
        }
    }

    fn parse(kind: &str, args: Option<&str>) -> Result<Self> {
        match (kind.trim(), args) {
            ("none", None) => Ok(BoundaryRegion::None),
            ("full", None) => Ok(BoundaryRegion::Full),
            ("faces", Some(a)) => {
                let sides = a.split(',').map(Side::from_str).collect::<Result<Vec<_>>>()?;
                if sides.is_empty() {
                    return Err(Error::Spec("'faces' needs at least one face".into()));
                }
                Ok(BoundaryRegion::Faces(sides))
            }
            ("arc", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::Spec(format!("'arc' expects face,start,end, got '{a}'")));
                }
                let side = Side::from_str(parts[0])?;
                let start = parse_f64(parts[1])?;
                let end = parse_f64(parts[2])?;
                if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
                    return Err(Error::Spec(format!("arc range must satisfy 0 <= start <= end <= 1, got {start}..{end}")));
                }
                Ok(BoundaryRegion::Arc { side, start, end })
            }
            (k, _) => Err(Error::Spec(format!("unknown or malformed boundary region '{k}'"))),
        }
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Spec(format!("expected a number, got '{s}'")))
}

/// Impedance specification: `full:v`, `faces:right,top:v`, `arc:face,start,end:v`
/// or `none`; several clauses may be joined with `;`, later ones win.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSpec {
    clauses: Vec<(BoundaryRegion, f64)>,
}

impl LambdaSpec {
    pub fn full(value: f64) -> Self {
        Self { clauses: vec![(BoundaryRegion::Full, value)] }
    }

    pub fn zero() -> Self {
        Self { clauses: vec![] }
    }

    pub fn faces(sides: &[Side], value: f64) -> Self {
        Self { clauses: vec![(BoundaryRegion::Faces(sides.to_vec()), value)] }
    }

    pub fn value_at(&self, grid: &Grid2D, node: &BoundaryNode) -> f64 {
        self.clauses
            .iter()
            .rev()
            .find(|(r, _)| r.contains(grid, node))
            .map_or(0.0, |&(_, v)| v)
    }
}

impl FromStr for LambdaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut clauses = Vec::new();
        for clause in s.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            if clause == "none" {
                clauses.push((BoundaryRegion::None, 0.0));
                continue;
            }
            let parts: Vec<&str> = clause.split(':').collect();
            let (region, value) = match parts.as_slice() {
                [kind, v] => (BoundaryRegion::parse(kind, None)?, parse_f64(v)?),
                [kind, args, v] => (BoundaryRegion::parse(kind, Some(args))?, parse_f64(v)?),
                _ => return Err(Error::Spec(format!("malformed impedance clause '{clause}'"))),
            };
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::Spec(format!("impedance must be >= 0, got {value}")));
            }
            clauses.push((region, value));
        }
        if clauses.is_empty() {
            return Err(Error::Spec("empty impedance specification".into()));
        }
        Ok(Self { clauses })
    }
}

/// Observed-set specification: `full`, `none`, `faces:right,top`, `arc:face,start,end`,
/// joined with `;` for unions.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSpec {
    regions: Vec<BoundaryRegion>,
}

impl GammaSpec {
    pub fn full() -> Self {
        Self { regions: vec![BoundaryRegion::Full] }
    }

    pub fn faces(sides: &[Side]) -> Self {
        Self { regions: vec![BoundaryRegion::Faces(sides.to_vec())] }
    }

    pub fn contains(&self, grid: &Grid2D, node: &BoundaryNode) -> bool {
        self.regions.iter().any(|r| r.contains(grid, node))
    }
}

impl FromStr for GammaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut regions = Vec::new();
        for clause in s.split(';').map(str::trim).filter(|c| !c.is_empty()) {
            let region = match clause.split_once(':') {
                Some((kind, args)) => BoundaryRegion::parse(kind, Some(args))?,
                None => BoundaryRegion::parse(clause, None)?,
            };
            regions.push(region);
        }
        if regions.is_empty() {
            return Err(Error::Spec("empty observation specification".into()));
        }
        Ok(Self { regions })
    }
}
