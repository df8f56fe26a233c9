//! Forward tangents recorded on the reverse tape.
//!
//! A [`Dual`] pairs a primal node with an optional tangent node. Both live on
//! the same [`Tape`], so a directional derivative computed here can itself be
//! differentiated by [`Tape::backward`]. A missing tangent means "identically
//! zero" and lets parameter-only branches skip the tangent arithmetic.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dual {
    pub primal: Var,
    pub tangent: Option<Var>,
}

impl Dual {
    pub fn new(primal: Var, tangent: Var) -> Self {
        Self {
            primal,
            tangent: Some(tangent),
        }
    }

    /// A value whose tangent is zero (parameters, anchors, gates).
    pub fn constant(primal: Var) -> Self {
        Self {
            primal,
            tangent: None,
        }
    }

    /// Tangent as a node, materializing zeros when absent.
    pub fn tangent_or_zero(&self, tape: &mut Tape) -> Var {
        match self.tangent {
            Some(t) => t,
            None => {
                let (r, c) = tape.shape(self.primal);
                tape.zeros(r, c)
            }
        }
    }

    pub fn add(self, tape: &mut Tape, other: Dual) -> Result<Dual> {
        let primal = tape.add(self.primal, other.primal)?;
        let tangent = match (self.tangent, other.tangent) {
            (Some(a), Some(b)) => Some(tape.add(a, b)?),
            (Some(a), None) => Some(broadcast_like(tape, a, primal)?),
            (None, Some(b)) => Some(broadcast_like(tape, b, primal)?),
            (None, None) => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn sub(self, tape: &mut Tape, other: Dual) -> Result<Dual> {
        let primal = tape.sub(self.primal, other.primal)?;
        let tangent = match (self.tangent, other.tangent) {
            (Some(a), Some(b)) => Some(tape.sub(a, b)?),
            (Some(a), None) => Some(broadcast_like(tape, a, primal)?),
            (None, Some(b)) => {
                let nb = tape.neg(b)?;
                Some(broadcast_like(tape, nb, primal)?)
            }
            (None, None) => None,
        };
        Ok(Dual { primal, tangent })
    }

    /// Hadamard product (with row/column broadcasting).
    pub fn mul(self, tape: &mut Tape, other: Dual) -> Result<Dual> {
        let primal = tape.mul(self.primal, other.primal)?;
        let left = match self.tangent {
            Some(a) => Some(tape.mul(a, other.primal)?),
            None => None,
        };
        let right = match other.tangent {
            Some(b) => Some(tape.mul(self.primal, b)?),
            None => None,
        };
        let tangent = match (left, right) {
            (Some(l), Some(r)) => Some(tape.add(l, r)?),
            (Some(t), None) | (None, Some(t)) => Some(broadcast_like(tape, t, primal)?),
            (None, None) => None,
        };
        Ok(Dual { primal, tangent })
    }

    /// `self * w` for a matrix `w` with zero tangent.
    pub fn matmul(self, tape: &mut Tape, w: Var) -> Result<Dual> {
        let primal = tape.matmul(self.primal, w)?;
        let tangent = match self.tangent {
            Some(t) => Some(tape.matmul(t, w)?),
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn scale(self, tape: &mut Tape, s: f64) -> Result<Dual> {
        let primal = tape.scale(self.primal, s)?;
        let tangent = match self.tangent {
            Some(t) => Some(tape.scale(t, s)?),
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn neg(self, tape: &mut Tape) -> Result<Dual> {
        self.scale(tape, -1.0)
    }

    pub fn offset(self, tape: &mut Tape, s: f64) -> Result<Dual> {
        let primal = tape.offset(self.primal, s)?;
        Ok(Dual {
            primal,
            tangent: self.tangent,
        })
    }

    pub fn sum_cols(self, tape: &mut Tape) -> Result<Dual> {
        let primal = tape.sum_cols(self.primal)?;
        let tangent = match self.tangent {
            Some(t) => Some(tape.sum_cols(t)?),
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn square(self, tape: &mut Tape) -> Result<Dual> {
        let primal = tape.square(self.primal)?;
        let tangent = match self.tangent {
            Some(t) => {
                let xt = tape.mul(self.primal, t)?;
                Some(tape.scale(xt, 2.0)?)
            }
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn exp(self, tape: &mut Tape) -> Result<Dual> {
        let primal = tape.exp(self.primal)?;
        let tangent = match self.tangent {
            Some(t) => Some(tape.mul(primal, t)?),
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn tanh(self, tape: &mut Tape) -> Result<Dual> {
        let primal = tape.tanh(self.primal)?;
        let tangent = match self.tangent {
            Some(t) => {
                let y2 = tape.square(primal)?;
                let slope = tape.scale(y2, -1.0)?;
                let slope = tape.offset(slope, 1.0)?;
                Some(tape.mul(slope, t)?)
            }
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn softplus(self, tape: &mut Tape) -> Result<Dual> {
        let primal = tape.softplus(self.primal)?;
        let tangent = match self.tangent {
            Some(t) => {
                let slope = tape.sigmoid(self.primal)?;
                Some(tape.mul(slope, t)?)
            }
            None => None,
        };
        Ok(Dual { primal, tangent })
    }

    pub fn smoothed_relu(self, tape: &mut Tape, knee: f64) -> Result<Dual> {
        let primal = tape.smoothed_relu(self.primal, knee)?;
        let tangent = match self.tangent {
            Some(t) => {
                let slope = tape.smoothed_relu_slope(self.primal, knee)?;
                Some(tape.mul(slope, t)?)
            }
            None => None,
        };
        Ok(Dual { primal, tangent })
    }
}

/// Expands a tangent that was computed on a broadcast operand to the shape
/// of the primal result.
fn broadcast_like(tape: &mut Tape, t: Var, like: Var) -> Result<Var> {
    let (ts, ls) = (tape.shape(t), tape.shape(like));
    if ts == ls {
        return Ok(t);
    }
    let z = tape.zeros(ls.0, ls.1);
    tape.add(z, t)
}

/// Derivative of `f` at `h` in direction `v`, as a tape node.
///
/// `f` maps each row of `h` independently, so the result holds one
/// directional derivative per row. Because the tangent is recorded on the
/// tape, the returned node can be differentiated again by reverse mode with
/// respect to anything `f`, `h` or `v` depend on.
pub fn directional_derivative<F>(tape: &mut Tape, h: Var, v: Var, f: F) -> Result<Var>
where
    F: FnOnce(&mut Tape, Dual) -> Result<Dual>,
{
    let (hs, vs) = (tape.shape(h), tape.shape(v));
    if hs != vs {
        return Err(Error::dim("directional_derivative", &[hs.0, hs.1], &[vs.0, vs.1]));
    }
    let out = f(tape, Dual::new(h, v))?;
    Ok(out.tangent_or_zero(tape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn norm_sq(tape: &mut Tape, x: Dual) -> Result<Dual> {
        x.square(tape)?.sum_cols(tape)
    }

    #[test]
    fn squared_norm_direction() {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::row(&[1., 2.]).unwrap());
        let v = tape.constant(Tensor::row(&[1., 0.]).unwrap());
        let d = directional_derivative(&mut tape, h, v, norm_sq).unwrap();
        assert_eq!(tape.value(d).item(), 2.0);

        let zero = tape.zeros(1, 2);
        let d = directional_derivative(&mut tape, h, zero, norm_sq).unwrap();
        assert_eq!(tape.value(d).item(), 0.0);

        let bad = tape.zeros(1, 3);
        assert!(directional_derivative(&mut tape, h, bad, norm_sq).is_err());
    }

    #[test]
    fn tangent_is_differentiable() {
        // d/dh [ (d/dh tanh(w h)) * 1 ] = d/dh [ w (1 - tanh^2(w h)) ]
        let (w0, h0) = (0.7, 0.4);
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(w0).unwrap());
        let h = tape.param(Tensor::scalar(h0).unwrap());
        let one = tape.scalar(1.0);
        let d = directional_derivative(&mut tape, h, one, |tape, x| x.matmul(tape, w)?.tanh(tape)).unwrap();
        let y = (w0 * h0).tanh();
        assert!((tape.value(d).item() - w0 * (1.0 - y * y)).abs() < 1e-15);
        let g = tape.backward(d).unwrap();
        let expected_dh = -2.0 * w0 * w0 * y * (1.0 - y * y);
        assert!((g.wrt(h).item() - expected_dh).abs() < 1e-14);
    }
}
