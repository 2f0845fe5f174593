//! Numerical pseudohermitian geometry on compact strictly pseudoconvex CR
//! manifolds: adapted frames, the Tanaka–Webster connection, tensor calculus
//! on scalar fields, quadrature, a Galerkin sub-Laplacian and integral
//! identity verification.

pub mod calculus;
pub mod cli;
pub mod connection;
pub mod error;
pub mod integrate;
pub mod jet;
pub mod manifold;
pub mod pde;
pub mod poly;
pub mod verify;

pub use error::{CrError, Result};
