//! Solver and verification toolkit for diffusion problems that couple a
//! local (finite element) region to a nonlocal (kernel integral) region
//! across an interface.

// Negated float comparisons deliberately treat NaN as invalid input.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod assembly;
pub mod fem;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod nonlocal_ops;
pub mod quadrature;
pub mod reference;
pub mod verification;
