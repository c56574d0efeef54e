//! Minimum-time backstepping boundary control and boundary observers for
//! linear heterodirectional hyperbolic systems with `n + m` states.
//!
//! The typical pipeline is
//!
//! 1. describe the plant with [`HyperbolicSystem`];
//! 2. compute the control kernels with [`solve_control_kernels`] and,
//!    if needed, the observer kernels with [`solve_observer_kernels`];
//! 3. run closed-loop simulations with [`sim::simulate`].

// index loops mirror the matrix algebra; `!(x > 0.0)` also rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod observer;
pub mod residual;
pub mod sim;
pub mod system;
pub mod verify;
pub mod volterra;

pub use error::{Error, Result};
pub use kernels::{solve_control_kernels, KernelSolution};
pub use observer::{solve_observer_kernels, ObserverSolution};
pub use system::{GridSpec, HyperbolicSystem, ValidationReport};
