//! Exact and Monte Carlo verification tools for cumulant decay, weighted
//! dependency graphs and pattern central limit theorems in the Ising model.
//!
//! Exact computations are generic over the scalar type ([`Real`], for `f32`
//! and `f64`); Monte Carlo code works in `f64`. The aliases at the crate
//! root fix the scalar to `f64`.

pub mod clt;
pub mod cumulants;
pub mod error;
pub mod expansions;
pub mod format;
pub mod gibbs;
pub mod lattice;
pub mod patterns;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod treelen;
pub mod wdg;

pub use error::{Error, Result};
pub use gibbs::{BoundaryCondition, Sign, SpinConfiguration};
pub use lattice::{LatticeBox, Site};
pub use scalar::Real;

pub type IsingParams = gibbs::IsingParams<f64>;
pub type ExactSystem = gibbs::ExactSystem<f64>;
pub type MomentTables = gibbs::MomentTables<f64>;
