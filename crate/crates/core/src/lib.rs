//! Thermoacoustic reconstruction in an enclosure with an impedance boundary.
//!
//! The crate discretises the wave equation `u_tt = c²Δu − qu` on a rectangle
//! with the boundary condition `∂_ν u + λ ∂_t u = 0`, and provides the
//! operators needed to recover `u(0)` from boundary traces on an observed arc
//! Γ: the measurement map Λ, the solution operator S of the boundary control
//! problem and its adjoint, the back-projection A and the error operator
//! `K = Id − AΛ`. Two reconstructions are offered: conjugate gradients on
//! `SS* x = S U d` and the Neumann series `Σ Kⁿ A d`.

pub mod boundary;
pub mod error;
pub mod grid;
pub mod io;
pub mod medium;
pub mod norms;
pub mod ops;
pub mod phantom;
pub mod rays;
pub mod recon;
pub mod solver;
pub mod trace;

pub use boundary::{BoundaryNode, BoundaryRegion, BoundarySpec, Face, GammaSpec, LambdaSpec, Side};
pub use error::{Error, Result};
pub use grid::{Grid2D, ScalarField};
pub use medium::{GridSpeed, Lens, MediumParams, SpeedModel, SpeedProfile};
pub use norms::{compatibility_shift, energy, hr_norm, inner_omega, inner_trace, CauchyPair};
pub use solver::{AdjointMode, BCVariant, Direction, Trajectory, WaveRunConfig};
pub use trace::{BoundaryTrace, TimeAxis};
pub use recon::{control_apply, reconstruct_cg, reconstruct_neumann, CgOptions, NeumannOptions, ReconReport};
pub use rays::{estimate_tau, trace_ray, DirectionFan, RayRecord, RayReport, RayState};
pub use phantom::{add_noise, make_medium, make_phantom, MediumKind, MediumSpec, NoiseSpec, PhantomKind, PhantomSpec};
