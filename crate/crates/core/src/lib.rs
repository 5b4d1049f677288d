//! Moment analysis of single-server polling systems.
//!
//! A single server visits `K` queues according to a polling table with `I`
//! stages and incurs a switchover time between stages. At each stage the
//! server applies one of three controls: binomial-exhaustive (reduce the
//! queue by a Binomial(N, r) count, serving arrivals along the way),
//! binomial-gated (serve exactly the binomially selected customers present
//! at the polling epoch), or base-stock (serve down to a fixed level).
//!
//! The crate computes steady-state queue-length and busy-time moments at
//! the polling epochs along four routes that cross-check each other:
//!
//! * [`analysis`] — exact first and second moments from the buffer-occupancy
//!   equations, plus contraction diagnostics for the underlying cycle maps.
//! * [`pgf`] — numerical evaluation of the joint probability generating
//!   function via its infinite-product representation, differentiated
//!   numerically as an independent oracle for the solvers.
//! * [`fluid`] — periodic equilibria of the deterministic fluid model for
//!   all three policies, and the large-switchover moment approximations
//!   built from them.
//! * [`sim`] — a seeded discrete-event simulator with batch-means
//!   confidence intervals, serving as the empirical ground truth.

pub mod analysis;
pub mod fluid;
pub mod model;
pub mod pgf;
pub mod sim;

mod error;

pub use error::{Error, Result};
