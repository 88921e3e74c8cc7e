//! Finite-difference engine for semi-linear parabolic "neural PDEs".
//!
//! The crate solves reaction-diffusion equations with learnable coefficient
//! fields, generates network layers (convolution, dense, residual, recurrent,
//! RBM energy) directly from the discretization, and trains the coefficients
//! with first- and second-order optimizers.
//!
//! Module map:
//! - [`grid`]: grids, fields and boundary padding
//! - [`stencil`]: discrete Laplacians and the variable-coefficient elliptic operator
//! - [`solver`]: explicit/implicit time stepping, Turing systems, stability checks
//! - [`blocks`]: network blocks generated from the discretization
//! - [`optim`]: losses, SGD, Adam, Newton, Gauss-Newton, L-BFGS, finite-difference gradients
//! - [`train`]: supervised training loop over block/solver pipelines
//! - [`reference`]: closed-form oracles (heat kernel, Fisher speed, ...)
//! - [`io`]: CSV / PGM / block-file serialization

pub mod blocks;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod reference;
pub mod solver;
pub mod stencil;
pub mod train;

pub use error::{NpdeError, Result};
pub use grid::{make_grid, pad, BoundaryCondition, FieldState, GridSpec, Shape};
pub use solver::{ReactionSpec, Scheme, Trajectory};
pub use stencil::{EllipticCoefficients, Stencil1D, Stencil2D};
