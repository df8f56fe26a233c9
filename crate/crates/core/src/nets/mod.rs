//! Parameterized functions: dynamics/lift MLPs, the convex network and the
//! Lyapunov head built on it, and the class anchors.

mod anchors;
mod iacnn;
mod lyapunov;
mod mlp;

pub use anchors::AnchorSet;
pub use iacnn::{BoundIacnn, Iacnn, IacnnLayer, IacnnShape, LayerGates};
pub use lyapunov::{transform, BoundHead, LevelFunction, LyapunovHead, Potential, QuadraticPotential};
pub use mlp::{Activation, BoundMlp, Dense, Mlp};
