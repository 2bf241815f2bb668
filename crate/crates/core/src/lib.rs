//! Hausdorff dimension of random self-affine Sierpinski carpets.
//!
//! The almost-sure dimension of a random carpet is
//! `sup_P { lambda(P) + t(P) }` over row distributions `P`. This crate
//! evaluates that supremum two ways ([`optimizer::maximize_structural`] and
//! [`optimizer::maximize_generic`]), provides the grid-percolation family
//! with its closed form ([`percolation`]), and Monte Carlo tools to check the
//! value on sampled realizations ([`sampler`]).

pub mod error;
pub mod model;
pub mod moran;
pub mod optimizer;
pub mod percolation;
pub mod rng;
pub mod roots;
pub mod sampler;

pub use error::{CarpetError, Result};
pub use model::{parse_system, serialize_system, RandomCarpetSystem, SystemDoc};
pub use moran::RowDistribution;
