//! Contraction certificates for switched nonlinear systems built from
//! subspace seminorms.
//!
//! The pipeline: parse a [`config::SystemConfig`], check invariance of the
//! complement of each subspace, classify modes, verify the coupling and rate
//! conditions of each certificate, aggregate dwell and leave time bounds over a
//! separating family, and validate empirically with [`sim`].

pub mod analysis;
pub mod bundled;
pub mod certificates;
pub mod config;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod signals;
pub mod sim;
pub mod subspaces;
