//! Shishkin meshes, streamline-diffusion FEM with crosswind diffusion, and
//! discrete Green functions measured in weighted energy norms.
//!
//! ```
//! use std::sync::Arc;
//! use sdgreen::{assemble, build_mesh, Discretization, GreenSolver, MeshParams, ProblemData, StabilizationConfig};
//!
//! let mesh = Arc::new(build_mesh(&MeshParams::new(8, 1e-4))?);
//! let disc = Discretization::new(mesh, ProblemData::new(1e-4, 1.0, 1.0, 1.0), StabilizationConfig::default())?;
//! let system = assemble(&disc)?;
//! let g = GreenSolver::new(&disc, &system)?.green(2, 2)?;
//! assert!(g.pole_value() > 0.0);
//! # Ok::<(), sdgreen::Error>(())
//! ```

pub mod assembly;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod green;
pub mod mesh;
pub mod norms;
pub mod quadrature;
pub mod report;
pub mod solver;
pub mod sparse;
pub mod weight;

pub use assembly::{assemble, AssembledSystem, Discretization, EpsHatMode, FEFunction, ProblemData, StabilizationConfig};
pub use error::{Error, Result};
pub use experiments::{run_sweep, BoundRow, Placement, SweepConfig};
pub use green::{solve_forward, solve_green, GreenFunction, GreenSolver};
pub use mesh::{build_mesh, compute_transitions, MeshParams, Region, ShishkinMesh, TransitionParams};
pub use norms::{msd_norm, NormBreakdown, QuadOptions};
pub use weight::{sigma_policy, SigmaPolicy, StreamlineFrame, WeightSpec};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mesh.md")]
    mod mesh {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/green.md")]
    mod green {}
    #[doc = include_str!("../../../book/src/weighted-norms.md")]
    mod weighted_norms {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
