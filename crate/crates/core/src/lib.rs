//! Spatial integro-differential SIR epidemics with optimal lockdown control.
//!
//! * [`kernel`] – distance kernel, its discretisation, norms and `R0`
//! * [`model`] – forward RK4 integration of the spatial SIR system
//! * [`optim`] – objective, discrete costates and the forward-backward sweep
//! * [`equilibria`] – SIS fixed point and SIR final-size solvers
//! * [`abm`] – stochastic agent-based counterpart used for validation
//! * [`scenario`], [`experiment`] – scenario presets, orchestration and file output

pub mod abm;
pub mod control;
pub mod equilibria;
pub mod error;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod kernel;
pub mod model;
pub mod optim;
pub mod par;
pub mod scenario;

pub use control::{BlockLayout, ControlField, ControlVariant, PiecewiseControl};
pub use error::{Error, Result};
pub use field::Field;
pub use grid::SpatialGrid;
pub use kernel::{KernelMatrix, KernelNorms, KernelSpec};
pub use model::{EpidemicParams, InitialCondition, StateField, TimeGrid};
