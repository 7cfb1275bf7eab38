//! Event-triggered learning for linear stochastic systems.
//!
//! The crate combines four pieces:
//!
//! - a Kalman-style **parameter filter** that tracks the vectorized system
//!   matrices `z = vec([A B]^T)` from state/input data, together with batch
//!   and recursive least-squares baselines ([`estimators`]);
//! - a level-alpha **learning trigger** that fires when the filter estimate
//!   leaves the chi-square confidence region around the model used for
//!   control ([`trigger`]);
//! - a nominal MPC for regulation and an **experiment-design MPC** that adds
//!   the predicted filter covariance trace to the cost, actively exciting
//!   the system during learning experiments ([`control`]);
//! - a closed-loop **simulation harness** around a DC servomechanism with
//!   switchable load inertia, including the update-policy comparison and
//!   Monte Carlo false-positive-rate studies ([`sim`], [`scenario`], [`cli`]).
//!
//! The `examples/` directory has one runnable example per capability; the
//! `etlearn` binary exposes the same machinery as `run`, `compare`, and
//! `montecarlo` subcommands driven by a scenario JSON file.

pub mod cli;
pub mod control;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod scenario;
pub mod servo;
pub mod sim;
pub mod trigger;

pub use error::{Error, Result};
