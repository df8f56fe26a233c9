use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{BoundMlp, Mlp};
use crate::tensor::{Tape, Tensor, Var};

/// Autonomous vector field evaluated pointwise, without gradients.
pub trait Field {
    fn dim(&self) -> usize;
    fn eval(&self, h: &[f64]) -> Result<Vec<f64>>;
}

/// Vector field recorded on a tape; applies to every row of `h`.
pub trait TapeField {
    fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var>;
}

impl<F> TapeField for F
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        self(tape, h)
    }
}

impl Field for Mlp {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn eval(&self, h: &[f64]) -> Result<Vec<f64>> {
        Mlp::eval(self, h)
    }
}

impl TapeField for BoundMlp {
    fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        self.forward(tape, h)
    }
}

/// Systems with known regions of attraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum KnownField {
    /// `h' = -h` in any dimension; the whole space is attracted to 0.
    LinearDecay { dim: usize },
    /// `h' = h^3 - h`; the origin attracts exactly `(-1, 1)`.
    Cubic,
    /// Van der Pol run backwards in time: `x' = -y`, `y' = x - mu (1 - x^2) y`.
    /// The origin is stable and its basin is bounded by the unstable limit cycle.
    ReversedVanDerPol { mu: f64 },
}

impl Field for KnownField {
    fn dim(&self) -> usize {
        match *self {
            KnownField::LinearDecay { dim } => dim,
            KnownField::Cubic => 1,
            KnownField::ReversedVanDerPol { .. } => 2,
        }
    }

    fn eval(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.dim() {
            return Err(Error::dim("field", &[h.len()], &[self.dim()]));
        }
        Ok(match *self {
            KnownField::LinearDecay { .. } => h.iter().map(|v| -v).collect(),
            KnownField::Cubic => vec![h[0] * h[0] * h[0] - h[0]],
            KnownField::ReversedVanDerPol { mu } => {
                let (x, y) = (h[0], h[1]);
                vec![-y, x - mu * (1.0 - x * x) * y]
            }
        })
    }
}

impl TapeField for KnownField {
    fn apply(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let (_, d) = tape.shape(h);
        if d != self.dim() {
            return Err(Error::dim("field", &[d], &[self.dim()]));
        }
        match *self {
            KnownField::LinearDecay { .. } => tape.neg(h),
            KnownField::Cubic => {
                let h2 = tape.square(h)?;
                let h3 = tape.mul(h2, h)?;
                tape.sub(h3, h)
            }
            KnownField::ReversedVanDerPol { mu } => {
                let x = tape.column(h, 0)?;
                let y = tape.column(h, 1)?;
                let dx = tape.neg(y)?;
                // x - mu y + mu x^2 y
                let x2 = tape.square(x)?;
                let x2y = tape.mul(x2, y)?;
                let damp = tape.sub(x2y, y)?;
                let damp = tape.scale(damp, mu)?;
                let dy = tape.add(x, damp)?;
                tape.concat_cols(&[dx, dy])
            }
        }
    }
}

/// Evaluates a tape field on a batch of points without recording gradients.
pub fn eval_batch<F: TapeField + ?Sized>(field: &F, points: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let h = tape.constant(points.clone());
    let out = field.apply(&mut tape, h)?;
    Ok(tape.value(out).clone())
}
