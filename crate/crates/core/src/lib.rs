//! Numerical laboratory for radial blow-up of `u_t = Δu + f(u)`.

// Negated float comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod interp;
pub mod intersections;
pub mod io;
pub mod nonlinearity;
pub mod ode;
pub mod pde;
pub mod quadrature;
pub mod rescaling;
pub mod roots;
pub mod steady;

pub use error::{Error, Result};
pub use nonlinearity::{Family, Nonlinearity};
