//! Relativistic Boltzmann collision quadrature and verification of
//! near-equilibrium decay rates on a discrete momentum grid.

pub mod analysis;
pub mod discretization;
pub mod error;
pub mod harness;
pub mod kernel_ops;
pub mod kinematics;
pub mod linalg;
pub mod macro_moments;
pub mod mode_dynamics;
pub mod nonlinear_dynamics;
pub mod par;
pub mod quad1d;
pub mod semigroup_vidav;

pub use error::{Error, Result};
