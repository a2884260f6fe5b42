//! Numerical Brouwer degree and regularity diagnostics for Sobolev maps.
//!
//! The degree `deg(f, Ω, y)` is computed three independent ways (signed
//! preimage counting, the change-of-variables integral, and the boundary
//! pull-back of an `(n−1)`-form); the regularity and BMO modules build the
//! oscillation, `E`/`F` set and VMO-degree diagnostics on top of it.

pub mod bmo;
pub mod degree;
pub mod domain;
pub mod error;
pub mod fields;
pub mod kernel;
pub mod linalg;
pub mod mapzoo;
pub mod quadrature;
pub mod regularity;
pub mod report;

pub use domain::{BoundaryMesh, Domain, Shape, TubularPoint};
pub use error::{Error, Result};
pub use fields::MapField;
pub use quadrature::Quadrature;

/// Crate version, embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
