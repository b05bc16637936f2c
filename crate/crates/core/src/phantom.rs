//! Synthetic phantoms, media and noise.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundarySpec, GammaSpec, LambdaSpec};
use crate::solver::{measure, WaveRunConfig};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};
use crate::medium::{Lens, MediumParams, SpeedModel, SpeedProfile};
use crate::trace::{BoundaryTrace, TimeAxis};

/// Minimum distance, in grid cells, between a phantom's support and the boundary.
pub const MARGIN_CELLS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    GaussianBumps,
    Disks,
    SmoothedDisks,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_bumps" | "gauss" => Ok(Self::GaussianBumps),
            "disks" | "disk" => Ok(Self::Disks),
            "smoothed_disks" | "sdisk" => Ok(Self::SmoothedDisks),
            _ => Err(Error::Spec(format!("unknown phantom kind '{s}'"))),
        }
    }
}

/// One phantom component. For Gaussian bumps `radius` is the standard
/// deviation; for disks it is the disk radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

/// Placement rule for randomly generated blobs. Sizes are fractions of the
/// shorter side of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBlobs {
    pub count: usize,
    pub seed: u64,
    pub radius: [f64; 2],
    pub amplitude: [f64; 2],
}

impl RandomBlobs {
    pub fn new(count: usize, seed: u64) -> Self {
        Self { count, seed, radius: [0.06, 0.12], amplitude: [0.5, 1.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub blobs: Vec<Blob>,
    /// Taper half-width for smoothed disks, same units as the grid.
    pub smoothing: f64,
    pub random: Option<RandomBlobs>,
}

impl PhantomSpec {
    pub fn gaussian(center: [f64; 2], sigma: f64, amplitude: f64) -> Self {
        Self {
            kind: PhantomKind::GaussianBumps,
            blobs: vec![Blob { center, radius: sigma, amplitude }],
            smoothing: 0.0,
            random: None,
        }
    }

    pub fn random(kind: PhantomKind, count: usize, seed: u64) -> Self {
        Self { kind, blobs: vec![], smoothing: 0.03, random: Some(RandomBlobs::new(count, seed)) }
    }

    /// Distance from a blob's centre beyond which it is treated as zero.
    fn reach(&self, b: &Blob) -> f64 {
        match self.kind {
            PhantomKind::GaussianBumps => 3.0 * b.radius,
            PhantomKind::Disks => b.radius,
            PhantomKind::SmoothedDisks => b.radius + self.smoothing,
        }
    }

    fn resolved_blobs(&self, grid: &Grid2D) -> Result<Vec<Blob>> {
        let mut blobs = self.blobs.clone();
        if let Some(r) = &self.random {
            if !(r.radius[0] > 0.0 && r.radius[0] <= r.radius[1]) || r.amplitude[0] > r.amplitude[1] {
                return Err(Error::Spec("random blob ranges must be ordered and positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
            let side = grid.extent()[0].min(grid.extent()[1]);
            let margin = MARGIN_CELLS * grid.hx().max(grid.hy());
            for _ in 0..r.count {
                let radius = side * rng.random_range(r.radius[0]..=r.radius[1]);
                let amplitude = rng.random_range(r.amplitude[0]..=r.amplitude[1]);
                let probe = Blob { center: [0.0, 0.0], radius, amplitude };
                let pad = self.reach(&probe) + margin;
                let (lo, hi) = (grid.origin(), grid.upper());
                if hi[0] - lo[0] <= 2.0 * pad || hi[1] - lo[1] <= 2.0 * pad {
                    return Err(Error::Spec("random blob radius too large for the grid".into()));
                }
                let center = [
                    rng.random_range(lo[0] + pad..hi[0] - pad),
                    rng.random_range(lo[1] + pad..hi[1] - pad),
                ];
                blobs.push(Blob { center, radius, amplitude });
            }
        }
        Ok(blobs)
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<Vec<Blob>> {
        if self.kind == PhantomKind::SmoothedDisks && !(self.smoothing > 0.0) {
            return Err(Error::Spec("smoothed disks need a positive smoothing width".into()));
        }
        let blobs = self.resolved_blobs(grid)?;
        let margin = MARGIN_CELLS * grid.hx().max(grid.hy());
        let (lo, hi) = (grid.origin(), grid.upper());
        for (k, b) in blobs.iter().enumerate() {
            if !(b.radius > 0.0 && b.amplitude.is_finite()) {
                return Err(Error::Spec(format!("blob {k}: radius must be positive")));
            }
            if b.amplitude == 0.0 {
                continue;
            }
            let reach = self.reach(b) + margin;
            if b.center[0] - reach < lo[0]
                || b.center[0] + reach > hi[0]
                || b.center[1] - reach < lo[1]
                || b.center[1] + reach > hi[1]
            {
                return Err(Error::Spec(format!(
                    "blob {k} at ({}, {}) reaches within {MARGIN_CELLS} cells of the boundary",
                    b.center[0], b.center[1]
                )));
            }
        }
        Ok(blobs)
    }
}

/// C¹ cosine taper: 1 below `r0 - w`, 0 above `r0 + w`.
fn taper(r: f64, r0: f64, w: f64) -> f64 {
    if r <= r0 - w {
        1.0
    } else if r >= r0 + w {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * (r - r0 + w) / (2.0 * w)).cos())
    }
}

pub fn make_phantom(spec: &PhantomSpec, grid: Grid2D) -> Result<ScalarField> {
    let blobs = spec.validate(&grid)?;
    Ok(ScalarField::from_fn(grid, |x, y| {
        blobs
            .iter()
            .map(|b| {
                let r2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
                let shape = match spec.kind {
                    PhantomKind::GaussianBumps => (-r2 / (2.0 * b.radius * b.radius)).exp(),
                    PhantomKind::Disks => {
                        if r2 <= b.radius * b.radius {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    PhantomKind::SmoothedDisks => taper(r2.sqrt(), b.radius, spec.smoothing),
                };
                b.amplitude * shape
            })
            .sum()
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MediumKind {
    Constant { c: f64 },
    /// Speed rising linearly from `c_min` to `c_max` across the domain along `angle_deg`.
    LinearGradient { c_min: f64, c_max: f64, angle_deg: f64 },
    Lens { background: f64, lenses: Vec<Lens> },
    /// Random Gaussian lenses, affinely rescaled so the sampled speed spans `[c_min, c_max]`.
    RandomSmooth { c_min: f64, c_max: f64, seed: u64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub kind: MediumKind,
    pub q: f64,
}

impl MediumSpec {
    pub fn constant(c: f64) -> Self {
        Self { kind: MediumKind::Constant { c }, q: 0.0 }
    }

    /// Unit background with a fast and a slow lens, ±20% peak deviation.
    pub fn two_lens() -> Self {
        Self {
            kind: MediumKind::Lens {
                background: 1.0,
                lenses: vec![
                    Lens { center: [0.35, 0.6], amplitude: 0.2, sigma: 0.15 },
                    Lens { center: [0.65, 0.4], amplitude: -0.2, sigma: 0.15 },
                ],
            },
            q: 0.0,
        }
    }

    pub fn with_potential(mut self, q: f64) -> Self {
        self.q = q;
        self
    }

    /// The analytic speed profile for `grid`'s rectangle.
    pub fn profile(&self, grid: &Grid2D) -> Result<SpeedProfile> {
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::Spec(format!("potential must be >= 0, got {}", self.q)));
        }
        let range_ok = |lo: f64, hi: f64| lo > 0.0 && lo <= hi && hi.is_finite();
        match &self.kind {
            MediumKind::Constant { c } => {
                if !range_ok(*c, *c) {
                    return Err(Error::Spec(format!("speed must be positive, got {c}")));
                }
                Ok(SpeedProfile::Constant(*c))
            }
            MediumKind::LinearGradient { c_min, c_max, angle_deg } => {
                if !range_ok(*c_min, *c_max) {
                    return Err(Error::Spec("linear gradient needs 0 < c_min <= c_max".into()));
                }
                let (s, c) = angle_deg.to_radians().sin_cos();
                let corners = [grid.origin(), grid.upper(), [grid.origin()[0], grid.upper()[1]], [
                    grid.upper()[0],
                    grid.origin()[1],
                ]];
                let proj = |p: [f64; 2]| c * p[0] + s * p[1];
                let lo = corners.iter().map(|&p| proj(p)).fold(f64::INFINITY, f64::min);
                let hi = corners.iter().map(|&p| proj(p)).fold(f64::NEG_INFINITY, f64::max);
                let k = (c_max - c_min) / (hi - lo);
                Ok(SpeedProfile::Linear { c0: c_min - k * lo, origin: [0.0, 0.0], slope: [k * c, k * s] })
            }
            MediumKind::Lens { background, lenses } => {
                if lenses.iter().any(|l| !(l.sigma > 0.0)) {
                    return Err(Error::Spec("lens widths must be positive".into()));
                }
                let lower = background - lenses.iter().map(|l| l.amplitude.min(0.0).abs()).sum::<f64>();
                if !(lower > 0.0) {
                    return Err(Error::Spec("lens medium can reach non-positive speed".into()));
                }
                Ok(SpeedProfile::Lenses { background: *background, lenses: lenses.clone() })
            }
            MediumKind::RandomSmooth { c_min, c_max, seed, count } => {
                if !range_ok(*c_min, *c_max) {
                    return Err(Error::Spec("random medium needs 0 < c_min <= c_max".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let (lo, hi) = (grid.origin(), grid.upper());
                let side = grid.extent()[0].min(grid.extent()[1]);
                let raw: Vec<Lens> = (0..(*count).max(1))
                    .map(|_| Lens {
                        center: [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])],
                        amplitude: rng.random_range(-1.0..=1.0),
                        sigma: side * rng.random_range(0.1..=0.3),
                    })
                    .collect();
                let shape = SpeedProfile::Lenses { background: 0.0, lenses: raw.clone() };
                let sampled = ScalarField::from_fn(*grid, |x, y| shape.speed([x, y]));
                let (fmin, fmax) = (sampled.min(), sampled.max());
                let (a, b) = if fmax - fmin > 0.0 {
                    let b = (c_max - c_min) / (fmax - fmin);
                    (c_min - b * fmin, b)
                } else {
                    (0.5 * (c_min + c_max), 0.0)
                };
                let lenses = raw.into_iter().map(|l| Lens { amplitude: b * l.amplitude, ..l }).collect();
                Ok(SpeedProfile::Lenses { background: a, lenses })
            }
        }
    }
}

impl FromStr for MediumSpec {
    type Err = Error;

    /// `const:c`, `linear:cmin,cmax,angle_deg`, `lens:bg/x,y,amp,sigma/...`,
    /// `random:cmin,cmax,seed[,count]` or `twolens`; append `+q:v` for a potential.
    fn from_str(s: &str) -> Result<Self> {
        let (body, q) = match s.split_once("+q:") {
            Some((b, q)) => (b, parse(q)?),
            None => (s, 0.0),
        };
        let (kind, args) = body.split_once(':').unwrap_or((body, ""));
        let nums = |a: &str| a.split(',').filter(|t| !t.trim().is_empty()).map(parse).collect::<Result<Vec<f64>>>();
        let kind = match kind.trim() {
            "twolens" => MediumSpec::two_lens().kind,
            "const" | "constant" => match nums(args)?.as_slice() {
                [c] => MediumKind::Constant { c: *c },
                _ => return Err(Error::Spec("const takes one value".into())),
            },
            "linear" => match nums(args)?.as_slice() {
                [a, b, t] => MediumKind::LinearGradient { c_min: *a, c_max: *b, angle_deg: *t },
                _ => return Err(Error::Spec("linear takes cmin,cmax,angle".into())),
            },
            "lens" => {
                let mut parts = args.split('/');
                let background = parse(parts.next().unwrap_or(""))?;
                let lenses = parts
                    .map(|p| match nums(p)?.as_slice() {
                        [x, y, a, w] => Ok(Lens { center: [*x, *y], amplitude: *a, sigma: *w }),
                        _ => Err(Error::Spec(format!("lens entry '{p}' needs x,y,amp,sigma"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                MediumKind::Lens { background, lenses }
            }
            "random" => match nums(args)?.as_slice() {
                [a, b, seed] => MediumKind::RandomSmooth { c_min: *a, c_max: *b, seed: *seed as u64, count: 6 },
                [a, b, seed, n] => {
                    MediumKind::RandomSmooth { c_min: *a, c_max: *b, seed: *seed as u64, count: *n as usize }
                }
                _ => return Err(Error::Spec("random takes cmin,cmax,seed[,count]".into())),
            },
            other => return Err(Error::Spec(format!("unknown medium kind '{other}'"))),
        };
        Ok(MediumSpec { kind, q })
    }
}

fn parse(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Spec(format!("expected a number, got '{s}'")))
}

pub fn make_medium(spec: &MediumSpec, grid: Grid2D) -> Result<MediumParams> {
    let profile = spec.profile(&grid)?;
    MediumParams::from_model(grid, &profile, spec.q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

/// Adds `level · rms · N(0, 1)` to every observed sample, where `rms` is the
/// RMS of `d` over the observed samples. Samples off Γ stay zero.
pub fn add_noise(d: &BoundaryTrace, spec: &NoiseSpec, bnd: &BoundarySpec) -> Result<BoundaryTrace> {
    if !(spec.level >= 0.0 && spec.level.is_finite()) {
        return Err(Error::Spec(format!("noise level must be >= 0, got {}", spec.level)));
    }
    d.check_against(bnd, false)?;
    let mut out = d.restricted_to(bnd.gamma());
    if spec.level == 0.0 {
        return Ok(out);
    }
    let rms = observed_rms(&out, bnd.gamma());
    let sigma = spec.level * rms;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = out.n_nodes();
    for (s, v) in out.values_mut().iter_mut().enumerate() {
        if bnd.gamma()[s % n] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    Ok(out)
}

/// RMS over the samples whose node lies in `gamma`.
pub fn observed_rms(d: &BoundaryTrace, gamma: &[bool]) -> f64 {
    let n = d.n_nodes();
    let (sum, count) = d
        .values()
        .iter()
        .enumerate()
        .filter(|(s, _)| gamma[s % n])
        .fold((0.0, 0usize), |(a, c), (_, v)| (a + v * v, c + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Keeps every `factor`-th node of a field sampled on `grid.refined(factor)`.
pub fn downsample_field(fine: &ScalarField, coarse: Grid2D, factor: usize) -> Result<ScalarField> {
    let expected = coarse.refined(factor)?;
    if *fine.grid() != expected {
        return Err(Error::Dimension("field is not on the refined grid".into()));
    }
    let mut out = ScalarField::zeros(coarse);
    for j in 0..coarse.ny() {
        for i in 0..coarse.nx() {
            out[(i, j)] = fine.at(factor * i, factor * j);
        }
    }
    Ok(out)
}

/// Restricts a trace recorded on `fine` (a `factor`-refinement of `coarse`
/// in space and time) to the coarse boundary nodes and time levels.
pub fn downsample_trace(
    fine_trace: &BoundaryTrace,
    fine: &BoundarySpec,
    coarse: &BoundarySpec,
    coarse_times: &TimeAxis,
    factor: usize,
) -> Result<BoundaryTrace> {
    if *fine.grid() != coarse.grid().refined(factor)? {
        return Err(Error::Dimension("trace boundary is not on the refined grid".into()));
    }
    let ft = fine_trace.times();
    if ft.nt() != factor * coarse_times.nt() || (ft.dt() * factor as f64 - coarse_times.dt()).abs() > 1e-12 * coarse_times.dt() {
        return Err(Error::Dimension("trace time axis is not the refined coarse axis".into()));
    }
    let fg = fine.grid();
    let map: Vec<usize> = coarse
        .nodes()
        .iter()
        .map(|n| fine.slot_of(fg.index(factor * n.i, factor * n.j)).expect("boundary maps to boundary"))
        .collect();
    let out = BoundaryTrace::from_fn(coarse.len(), *coarse_times, |k, b| {
        if coarse.gamma()[b] {
            fine_trace.get(factor * k, map[b])
        } else {
            0.0
        }
    });
    Ok(out)
}

/// Synthetic data without the inverse crime: runs the forward problem on
/// `cfg`'s grid and time axis refined by `factor` and keeps the coincident
/// samples. `u0_fine` and `med_fine` live on the refined grid; λ and Γ are
/// re-evaluated there from the same specs that built `cfg`'s boundary.
pub fn measure_refined(
    u0_fine: &ScalarField,
    med_fine: MediumParams,
    lambda: &LambdaSpec,
    gamma: Option<&GammaSpec>,
    cfg: &WaveRunConfig,
    factor: usize,
) -> Result<BoundaryTrace> {
    if factor == 1 {
        return measure(u0_fine, cfg);
    }
    let fg = cfg.grid().refined(factor)?;
    let fbnd = BoundarySpec::from_specs(fg, lambda, gamma)?;
    // The step is inherited from the coarse axis; the fine medium's sampled
    // c_max can exceed the coarse one slightly, so only stability is checked.
    let fcfg = WaveRunConfig::with_options(med_fine, fbnd.clone(), cfg.times().refined(factor)?, 1.0, cfg.adjoint_mode())?;
    let fine = measure(u0_fine, &fcfg)?;
    downsample_trace(&fine, &fbnd, cfg.bnd(), cfg.times(), factor)
}
