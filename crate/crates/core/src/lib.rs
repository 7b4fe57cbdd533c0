//! Numerical laboratory for the fully parabolic chemotaxis-growth system with
//! spatially heterogeneous logistic damping.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cutoff;
pub mod diagnostics;
pub mod expr;
pub mod grid;
pub mod io;
pub mod maxreg;
pub mod runner;
pub mod solver;
pub mod verify;
