//! Non-diffusive neural solvers for one-dimensional hyperbolic
//! conservation laws.
//!
//! Smooth parts of the solution are represented by small tanh networks on
//! subdomains bounded by moving discontinuity lines, which are networks
//! themselves. The two are trained jointly so that each subdomain solves
//! the PDE and every line satisfies the Rankine-Hugoniot condition.

pub mod autodiff;
pub mod error;
pub mod events;
pub mod fv;
pub mod geometry;
pub mod loss;
pub mod problem;
pub mod riemann;
pub mod train;

pub use error::{NdnnError, Result};
