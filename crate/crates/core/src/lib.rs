//! Grid-based Hamilton-Jacobi reachability for two-player differential games
//! with decoupled dynamics.
//!
//! Subsystem value functions are solved on low-dimensional grids and combined
//! into the full value function by a running minimum over time of their
//! pointwise maximum. A direct solver on the product grid and a
//! dynamic-programming oracle are included for cross-validation.

pub mod control;
pub mod decouple;
pub mod dynamics;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod pde;
pub mod problem;
pub mod surface;

pub use decouple::{QueryAxis, QueryDomain, ReconstructionHandle, ValueFunction};
pub use dynamics::{DecoupledSystem, Dynamics, Interval, Subsystem};
pub use grid::{Axis, GridSpec, ScalarField};
pub use pde::{SolveOptions, TimeSeriesField};
pub use problem::{Problem, Reconstruction};
pub use surface::{CombineMode, Constraint, SubsystemSurface, TargetSpec};
