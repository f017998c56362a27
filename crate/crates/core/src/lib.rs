//! Constructive Rokhlin-dimension toolkit for free `Z^m`-actions on finite
//! sampled metric spaces.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: boxes `B_n`, `J_n`, tent weights and shift bijections of `Z^m`.
//! * [`dynsys`]: finite systems with `m` commuting generator bijections.
//! * [`topo`]: point sets, fattening and `(M, k)`-disjointness.
//! * [`markers`]: marker extension, covering iteration and controlled markers.
//! * [`rokhlin`]: Rokhlin covers, tower functions, normalisation and the
//!   tolerance verifier.
//! * [`cstar`]: band operators and the completely positive approximation
//!   pipeline of the crossed product, with matrix-free norm estimation.
//! * [`scenario`]: the end-to-end runner used by the `rokdim` binary.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod cstar;
pub mod dynsys;
pub mod error;
pub mod exec;
pub mod lattice;
pub mod markers;
pub mod rational;
pub mod rokhlin;
pub mod scenario;
pub mod topo;

pub use error::{Error, Result};
pub use rational::Rational;
