//! Min-sum message passing for convex optimization on sparse factor graphs.
//!
//! The crate solves separable convex programs of the form
//!
//! ```text
//! minimize  F(x) = sum_i f_i(x_i) + sum_{(i,j)} f_ij(x_i, x_j) + sum_C f_C(x_C)
//! ```
//!
//! by passing single-variable summary functions ("messages") along the edges
//! of the factor graph. It provides:
//!
//! - [`model`]: a closed catalog of smooth convex factors and the joint
//!   objective ([`Program`]), with JSON (de)serialization.
//! - [`dominance`]: scaled diagonal dominance certificates — the condition
//!   under which the message iterations are provably contractive — via exact
//!   power iteration for quadratic programs and box sampling otherwise.
//! - [`quadratic`]: the quadratic-message engine (exact for quadratic
//!   programs; a Newton-style local re-expansion otherwise).
//! - [`piecewise`]: piecewise-linear messages on a bounded grid, for
//!   non-quadratic couplings.
//! - [`hyper`]: quadratic messages for factors over more than two variables.
//! - [`schedule`]: synchronous, random totally-asynchronous, and scripted
//!   update schedules, plus the mailbox driver that runs any engine under
//!   them deterministically.
//! - [`analysis`]: unrolled computation trees, per-edge initialization
//!   residuals, and geometric error bounds derived from a dominance
//!   certificate.
//! - [`baselines`]: damped Newton, asynchronous coordinate descent, and
//!   asynchronous gradient descent for cross-checking.
//!
//! The `minsum` binary exposes `certify`, `solve`, and `compare` over problem
//! files; see the repository README for the file formats.

pub mod analysis;
pub mod baselines;
pub mod dominance;
mod error;
pub mod hyper;
pub mod instances;
pub mod model;
pub mod piecewise;
pub mod quadratic;
pub mod sampling;
pub mod schedule;
pub mod trace;

pub use error::Error;
pub use model::{EdgeTerm, HyperTerm, NodeTerm, Program};
pub use trace::{BoundParams, RunOptions, Trace, TraceRow};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
