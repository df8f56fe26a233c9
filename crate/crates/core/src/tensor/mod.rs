//! Dense arrays, a reverse-mode tape and forward tangents on top of it.

mod dense;
mod dual;
mod tape;

pub use dense::Tensor;
pub use dual::{directional_derivative, Dual};
pub use tape::{sigmoid, smooth_relu, softplus, Binary, Gradients, Tape, Unary, Var, GUARD_BAND};
