//! Simulation and verification lab for stochastic approximation driven by
//! controlled Markov noise.
//!
//! The crate simulates the recursion
//!
//! ```text
//! x_{n+1} = x_n + a(n) [ h(x_n, y_n) + M_{n+1} ]
//! ```
//!
//! where `y_n` is a finite controlled Markov process, and turns the
//! assumptions behind its stability and convergence theory into executable
//! checks:
//!
//! - [`convex`]: compact convex sets, the scaled field `h_c`, its limit
//!   `h_∞`, the state-hull `H(x)`, and a Marchaud-property audit.
//! - [`markov`]: finite controlled Markov models, stationary policies,
//!   invariant and ergodic occupation measures, and the limiting map `ĥ`.
//! - [`engine`]: step schedules, martingale-difference noise, trajectory
//!   recording, and the moment-bound audit.
//! - [`rescale`]: interpolated and rescaled trajectories, segment windows,
//!   noise partial sums, and the stability ratio diagnostics.
//! - [`inclusion`]: selection-based Euler integration of differential
//!   inclusions, flow-time estimation, limit-set estimation, and the
//!   attractor / Lyapunov audits.
//! - [`td`]: the temporal-difference application — affine drivers, Hurwitz
//!   checks, Lyapunov candidates, and equilibrium computation.

pub mod convex;
pub mod engine;
pub mod error;
pub mod inclusion;
pub mod linalg;
pub mod markov;
pub mod report;
pub mod rescale;
pub mod td;

pub use error::{Error, Result};
