//! Core simulation library for a branching cell population carrying a
//! parasite load.
//!
//! Each cell holds a nonnegative parasite load that evolves as a diffusion
//! with positive jumps between demographic events. Cells divide at a constant
//! rate, splitting their load between two daughters according to a symmetric
//! fragmentation law, and die at a constant rate. Loads additionally grow by
//! reinfection: doses arriving from an external reservoir at a load-dependent
//! rate, and doses released by cell lysis at a rate driven by the mean load
//! per cell in the population.
//!
//! The crate provides
//!
//! - parametric model families with structural validation and closed-form
//!   moments ([`model`]),
//! - an Euler-Maruyama engine for the single-cell flow with explosion
//!   detection and a quadrature-backed generator ([`sde`]),
//! - the auxiliary single-lineage ("spinal") process, its frozen and reduced
//!   variants, the mean-field fixed point and monotone couplings ([`spinal`]),
//! - the measure-valued population process over Ulam-Harris labels, exact
//!   birth-death cell-count laws and the Many-to-One consistency check
//!   ([`population`]),
//! - the long-time regime functionals and classification heuristics
//!   ([`criteria`]).
//!
//! The crate is `no_std` (with `alloc`); everything here is deterministic
//! given a master seed, with replicate-level parallelism delegated to the
//! caller through the [`ensemble::Ensemble`] trait.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod criteria;
pub mod ensemble;
pub mod model;
pub mod population;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod spinal;

pub use model::{ModelSpec, NumericsSpec};
pub use rng::DriverStream;
