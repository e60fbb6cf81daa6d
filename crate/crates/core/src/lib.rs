//! PO4-DOP marine phosphorus model on a column-structured finite-volume grid.
//!
//! The crate provides the discrete domain ([`geometry`]), tracer fields and
//! the prescribed environment ([`fields`]), the biogeochemical coupling
//! ([`reaction`]) and its derivatives ([`tangent`]), the transport operators
//! ([`transport`]), time integration with fixed-point, Galerkin and tangent
//! solvers ([`solver`]), twin-experiment parameter fitting ([`identify`]) and
//! the invariant suites behind the `check` command ([`checks`]) and the
//! command-line front end ([`cli`]).

pub mod geometry;
pub mod fields;
pub mod linalg;
pub mod reaction;
pub mod tangent;
pub mod transport;
pub mod solver;
pub mod identify;
pub mod checks;
pub mod cli;
