//! Neural ODE classification with learned convex Zubov–Lyapunov functions.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense arrays, a reverse-mode tape and forward tangents.
//! - [`nets`]: dynamics MLP, the input-attention convex network and the
//!   Lyapunov head `V`, `W = 1 - exp(-V)`.
//! - [`ode`]: tape-recorded RK4 and adaptive Dormand–Prince integration.
//! - [`losses`]: Zubov consistency residual, the `W`-based classification
//!   head, FC cross-entropy, boundary separation and the total objective.
//! - [`sampler`]: parallel ray bisection on level sets and projection.
//! - [`train`]: the end-to-end training step, Adam and the training loop.
//! - [`eval`]: noise and gradient-attack robustness harness.
//! - [`verify`]: empirical checks of the stability and separability claims.
//! - [`data`], [`config`], [`checkpoint`]: datasets, strict JSON run
//!   configuration and byte-stable checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod ode;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
