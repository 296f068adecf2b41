//! Discrete-time spin Calogero-Moser map: implicit stepping, Lax structure,
//! the continuous second flow, the continuum limit and identity checks.

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuous;
pub mod convergence;
pub mod discrete;
pub mod error;
pub mod io;
pub mod lax;
pub mod linalg;
pub mod report;
pub mod state;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64;
