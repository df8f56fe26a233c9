//! Input-attention convex network `g(x, c)`.
//!
//! Two coupled paths: the context path `u` starts at the anchor `c` and is
//! unconstrained; the convex path `z` starts at `x`. Every layer gates both
//! `z` and the raw input `x` with a softmax computed from `u`:
//!
//! ```text
//! u_{i+1} = tanh(U_i u_i + b~_i)
//! z_{i+1} = softplus(A_z (softmax(A_zu u_i + b_z) * z_i)
//!                    + A_x (softmax(A_xu u_i + b_x) * x)
//!                    + A_u u_i + b_i)
//! ```
//!
//! With `A_z >= 0` and a convex non-decreasing activation, `g` is convex in
//! `x` for every `c`: the gates depend on `c` only and are nonnegative.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::mlp::uniform_tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dual, Tape, Tensor, Var};

/// Layer widths. `z_widths[i]` and `u_widths[i]` are the widths produced by
/// layer `i`; the last `z` width must be 1 and the last `u` width is unused.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IacnnShape {
    pub input_dim: usize,
    pub z_widths: Vec<usize>,
    pub u_widths: Vec<usize>,
}

impl IacnnShape {
    pub fn desk(input_dim: usize) -> Self {
        Self {
            input_dim,
            z_widths: vec![32, 32, 1],
            u_widths: vec![32, 32, 0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.z_widths.len();
        if self.input_dim == 0 || k == 0 {
            return Err(Error::Config("IACNN needs a positive input dimension and at least one layer".into()));
        }
        if self.u_widths.len() != k {
            return Err(Error::Config(format!(
                "IACNN u_widths has {} entries, z_widths has {k}",
                self.u_widths.len()
            )));
        }
        if self.z_widths[k - 1] != 1 {
            return Err(Error::Config("IACNN output width must be 1".into()));
        }
        if self.z_widths.contains(&0) || self.u_widths[..k - 1].contains(&0) {
            return Err(Error::Config("IACNN hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IacnnLayer {
    /// `A^(zu)`, `n_i x m_i`.
    pub z_gate_weight: Tensor,
    pub z_gate_bias: Tensor,
    /// `A^(z)`, `m_i x m_{i+1}`, kept elementwise nonnegative.
    pub z_weight: Tensor,
    /// `A^(xu)`, `n_i x d`.
    pub x_gate_weight: Tensor,
    pub x_gate_bias: Tensor,
    /// `A^(x)`, `d x m_{i+1}`.
    pub x_weight: Tensor,
    /// `A^(u)`, `n_i x m_{i+1}`.
    pub u_weight: Tensor,
    pub bias: Tensor,
    /// Context update to the next layer; absent on the last layer.
    pub context: Option<(Tensor, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Iacnn {
    pub shape: IacnnShape,
    pub layers: Vec<IacnnLayer>,
}

impl Iacnn {
    pub fn new(shape: IacnnShape, rng: &mut Rng) -> Result<Self> {
        shape.validate()?;
        let d = shape.input_dim;
        let k = shape.z_widths.len();
        let mut layers = Vec::with_capacity(k);
        let (mut m, mut n) = (d, d);
        for i in 0..k {
            let m_next = shape.z_widths[i];
            let glorot = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
            // The first layer sees x itself, and a clamped nonnegative weight
            // there would tilt g upward along every coordinate; start it at zero
            // so the sign-free A_x path shapes the input term.
            let z_weight = if i == 0 {
                Tensor::zeros(m, m_next)
            } else {
                let hi = 2.0 / m as f64;
                let data = (0..m * m_next).map(|_| rng.random_range(0.0..=hi)).collect();
                let mut w = Tensor::from_raw(m, m_next, data);
                if i == 1 {
                    tie_row_pairs(&mut w);
                }
                w
            };
            let context = if i + 1 < k {
                let n_next = shape.u_widths[i];
                Some((uniform_tensor(rng, n, n_next, glorot(n, n_next)), Tensor::zeros(1, n_next)))
            } else {
                None
            };
            let mut x_weight = uniform_tensor(rng, d, m_next, glorot(d, m_next));
            if i == 0 {
                mirror_columns(&mut x_weight);
            } else {
                // Deeper passthroughs are a pure tilt at init; let training grow them.
                x_weight = Tensor::zeros(d, m_next);
            }
            layers.push(IacnnLayer {
                z_gate_weight: uniform_tensor(rng, n, m, glorot(n, m)),
                z_gate_bias: Tensor::zeros(1, m),
                z_weight,
                x_gate_weight: uniform_tensor(rng, n, d, glorot(n, d)),
                x_gate_bias: Tensor::zeros(1, d),
                x_weight,
                u_weight: uniform_tensor(rng, n, m_next, 0.5 * glorot(n, m_next)),
                bias: Tensor::zeros(1, m_next),
                context,
            });
            m = m_next;
            if i + 1 < k {
                n = shape.u_widths[i];
            }
        }
        Ok(Self { shape, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let p = |name: &str| format!("{prefix}.{i}.{name}");
            out.push((p("z_gate_weight"), &l.z_gate_weight));
            out.push((p("z_gate_bias"), &l.z_gate_bias));
            out.push((p("z_weight"), &l.z_weight));
            out.push((p("x_gate_weight"), &l.x_gate_weight));
            out.push((p("x_gate_bias"), &l.x_gate_bias));
            out.push((p("x_weight"), &l.x_weight));
            out.push((p("u_weight"), &l.u_weight));
            out.push((p("bias"), &l.bias));
            if let Some((w, b)) = &l.context {
                out.push((p("context_weight"), w));
                out.push((p("context_bias"), b));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.z_gate_weight);
            out.push(&mut l.z_gate_bias);
            out.push(&mut l.z_weight);
            out.push(&mut l.x_gate_weight);
            out.push(&mut l.x_gate_bias);
            out.push(&mut l.x_weight);
            out.push(&mut l.u_weight);
            out.push(&mut l.bias);
            if let Some((w, b)) = &mut l.context {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    /// Clamps every entry of every `A^(z)` to `max(entry, 0)`.
    pub fn project_nonneg(&mut self) {
        for l in &mut self.layers {
            for v in l.z_weight.data_mut() {
                *v = v.max(0.0);
            }
        }
    }

    pub fn is_nonneg(&self) -> bool {
        self.layers.iter().all(|l| l.z_weight.data().iter().all(|&v| v >= 0.0))
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundIacnn {
        let mut leaf = |t: &Tensor| if track { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                z_gate_weight: leaf(&l.z_gate_weight),
                z_gate_bias: leaf(&l.z_gate_bias),
                z_weight: leaf(&l.z_weight),
                x_gate_weight: leaf(&l.x_gate_weight),
                x_gate_bias: leaf(&l.x_gate_bias),
                x_weight: leaf(&l.x_weight),
                u_weight: leaf(&l.u_weight),
                bias: leaf(&l.bias),
                context: l.context.as_ref().map(|(w, b)| (leaf(w), leaf(b))),
            })
            .collect();
        BoundIacnn {
            input_dim: self.shape.input_dim,
            layers,
        }
    }

    /// Tape-free `g(x, c)` for each row of `x`.
    pub fn eval(&self, x: &Tensor, c: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let cv = tape.constant(Tensor::row(c)?);
        let out = bound.forward(&mut tape, Dual::constant(xv), cv)?;
        Ok(tape.value(out.primal).data().to_vec())
    }
}

#[derive(Clone, Debug)]
struct BoundLayer {
    z_gate_weight: Var,
    z_gate_bias: Var,
    z_weight: Var,
    x_gate_weight: Var,
    x_gate_bias: Var,
    x_weight: Var,
    u_weight: Var,
    bias: Var,
    context: Option<(Var, Var)>,
}

/// Context-dependent quantities of one layer, computed once per anchor.
#[derive(Clone, Copy, Debug)]
pub struct LayerGates {
    z_gate: Var,
    x_gate: Var,
    context_term: Var,
}

#[derive(Clone, Debug)]
pub struct BoundIacnn {
    input_dim: usize,
    layers: Vec<BoundLayer>,
}

impl BoundIacnn {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([
                l.z_gate_weight,
                l.z_gate_bias,
                l.z_weight,
                l.x_gate_weight,
                l.x_gate_bias,
                l.x_weight,
                l.u_weight,
                l.bias,
            ]);
            if let Some((w, b)) = l.context {
                out.extend([w, b]);
            }
        }
        out
    }

    /// Runs the context path from anchor `c` (a `1 x d` row).
    pub fn gates(&self, tape: &mut Tape, c: Var) -> Result<Vec<LayerGates>> {
        let (r, d) = tape.shape(c);
        if r != 1 || d != self.input_dim {
            return Err(Error::dim("iacnn_forward", &[r, d], &[1, self.input_dim]));
        }
        for l in &self.layers {
            if let Some(&bad) = tape.value(l.z_weight).data().iter().find(|&&v| v < 0.0) {
                return Err(Error::Contract(format!(
                    "A^(z) entry {bad} is negative; project before the forward pass"
                )));
            }
        }
        let mut u = c;
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let zg = tape.matmul(u, l.z_gate_weight)?;
            let zg = tape.add(zg, l.z_gate_bias)?;
            let z_gate = tape.softmax_rows(zg)?;
            let xg = tape.matmul(u, l.x_gate_weight)?;
            let xg = tape.add(xg, l.x_gate_bias)?;
            let x_gate = tape.softmax_rows(xg)?;
            let ct = tape.matmul(u, l.u_weight)?;
            let context_term = tape.add(ct, l.bias)?;
            out.push(LayerGates {
                z_gate,
                x_gate,
                context_term,
            });
            if let Some((w, b)) = l.context {
                let nu = tape.matmul(u, w)?;
                let nu = tape.add(nu, b)?;
                u = tape.tanh(nu)?;
            }
        }
        Ok(out)
    }

    /// Convex path for rows of `x` given precomputed gates; returns `B x 1`.
    pub fn forward_with(&self, tape: &mut Tape, gates: &[LayerGates], x: Dual) -> Result<Dual> {
        let (_, d) = tape.shape(x.primal);
        if d != self.input_dim {
            return Err(Error::dim("iacnn_forward", &[d], &[self.input_dim]));
        }
        let mut z = x;
        for (l, g) in self.layers.iter().zip(gates) {
            let zp = z.mul(tape, Dual::constant(g.z_gate))?.matmul(tape, l.z_weight)?;
            let xp = x.mul(tape, Dual::constant(g.x_gate))?.matmul(tape, l.x_weight)?;
            let pre = zp.add(tape, xp)?.add(tape, Dual::constant(g.context_term))?;
            z = pre.softplus(tape)?;
        }
        Ok(z)
    }

    pub fn forward(&self, tape: &mut Tape, x: Dual, c: Var) -> Result<Dual> {
        let gates = self.gates(tape, c)?;
        self.forward_with(tape, &gates, x)
    }
}

/// Makes every odd column the negation of the one before it. Units then come
/// in pairs facing opposite directions, so `g(x - c) - g(0)` starts positive on
/// both sides of the anchor instead of leaving a half-space where the outer
/// activation is flat and passes no gradient.
fn mirror_columns(w: &mut Tensor) {
    let cols = w.cols();
    let data = w.data_mut();
    for row in data.chunks_mut(cols) {
        for j in (1..cols).step_by(2) {
            row[j] = -row[j - 1];
        }
    }
}

/// Copies every even row onto the odd row after it, so both units of a mirrored
/// pair feed the next layer identically. Together with `mirror_columns` this
/// makes `g(x - c, c)` even in `x - c` at init whenever the context is zero.
fn tie_row_pairs(w: &mut Tensor) {
    let cols = w.cols();
    let rows = w.rows();
    let data = w.data_mut();
    for r in (1..rows).step_by(2) {
        let (head, tail) = data.split_at_mut(r * cols);
        tail[..cols].copy_from_slice(&head[(r - 1) * cols..]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn zeroed(shape: IacnnShape) -> Iacnn {
        let mut net = Iacnn::new(shape, &mut seeded(0)).unwrap();
        for p in net.params_mut() {
            p.data_mut().fill(0.0);
        }
        net
    }

    #[test]
    fn zero_layer_is_softplus_of_zero() {
        let net = zeroed(IacnnShape {
            input_dim: 2,
            z_widths: vec![1],
            u_widths: vec![0],
        });
        let x = Tensor::from_rows(&[vec![0.4, -1.0], vec![3.0, 2.0]]).unwrap();
        let out = net.eval(&x, &[1.0, 0.0]).unwrap();
        for v in out {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_validation() {
        assert!(IacnnShape::desk(2).validate().is_ok());
        let bad = IacnnShape {
            input_dim: 2,
            z_widths: vec![4, 2],
            u_widths: vec![4, 0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn projection_clamps_only_z_weights() {
        let mut net = Iacnn::new(IacnnShape::desk(2), &mut seeded(4)).unwrap();
        net.layers[1].z_weight.data_mut()[0] = -0.3;
        net.layers[1].z_weight.data_mut()[1] = 0.7;
        net.layers[1].x_weight.data_mut()[0] = -0.3;
        assert!(!net.is_nonneg());
        net.project_nonneg();
        assert!(net.is_nonneg());
        assert_eq!(net.layers[1].z_weight.data()[0], 0.0);
        assert_eq!(net.layers[1].z_weight.data()[1], 0.7);
        assert_eq!(net.layers[1].x_weight.data()[0], -0.3);
    }

    #[test]
    fn negative_z_weight_is_contract_error() {
        let mut net = Iacnn::new(IacnnShape::desk(2), &mut seeded(5)).unwrap();
        net.layers[2].z_weight.data_mut()[3] = -1e-3;
        let x = Tensor::row(&[0.1, 0.2]).unwrap();
        assert!(matches!(net.eval(&x, &[0.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn init_is_even_at_zero_context() {
        let net = Iacnn::new(IacnnShape::desk(2), &mut seeded(9)).unwrap();
        let x = Tensor::from_rows(&[vec![0.7, -1.3], vec![-0.2, 0.05]]).unwrap();
        let neg = Tensor::from_rows(&[vec![-0.7, 1.3], vec![0.2, -0.05]]).unwrap();
        let a = net.eval(&x, &[0.0, 0.0]).unwrap();
        let b = net.eval(&neg, &[0.0, 0.0]).unwrap();
        let g0 = net.eval(&Tensor::zeros(1, 2), &[0.0, 0.0]).unwrap()[0];
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
            assert!(*u >= g0);
        }
    }
}
