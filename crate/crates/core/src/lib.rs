//! Randomized quadrature for functions of very many variables.
//!
//! Changing dimension algorithms sum independent randomized rules over the
//! anchored components `f_{u,a}` of an integrand. The building blocks are
//! interlaced, Owen-scrambled polynomial lattice rules over `F_b`.

pub mod cdalg;
pub mod coords;
pub mod decomp;
pub mod error;
pub mod gfpoly;
pub mod harness;
pub mod kernels;
pub mod lattice;
pub mod quadrature;
pub mod scramble;
pub mod seeds;
pub mod weights;

pub use coords::CoordSet;
pub use error::{Error, Result};

/// Library version recorded in output metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
