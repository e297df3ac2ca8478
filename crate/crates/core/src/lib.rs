//! Simulation and verification toolkit for coalescing path models.
//!
//! The crate covers three families of systems: lattice drainage networks
//! (Scheidegger and Howard), independent random walks and Brownian motions,
//! and the Poisson tree. For each it estimates first collision times among
//! three paths and checks the exact or bounding identities those times obey:
//! Lyapunov drift conditions, product martingales, and the counting
//! statistics used to certify convergence to the Brownian web.

// `!(x > 0.0)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod collision;
pub mod counting;
pub mod error;
pub mod harness;
pub mod laws;
pub mod lyapunov;
pub mod martingale;
pub mod models;
pub mod stats;

pub use error::{Error, Result};
