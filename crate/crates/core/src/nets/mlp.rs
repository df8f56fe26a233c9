use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{softplus, Dual, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
        }
    }

    fn on_dual(self, tape: &mut Tape, x: Dual) -> Result<Dual> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => x.tanh(tape),
            Activation::Softplus => x.softplus(tape),
        }
    }
}

/// Affine map `x W + b` followed by an activation. `weight` is `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub(crate) fn uniform_tensor(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_raw(rows, cols, data)
}

impl Mlp {
    /// Glorot-uniform weights scaled by `gain`, zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, gain: f64, rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output sizes".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let bound = gain * (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    weight: uniform_tensor(rng, w[0], w[1], bound),
                    bias: Tensor::zeros(1, w[1]),
                    activation: if k + 2 == sizes.len() { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::dim("mlp layers", w[0].weight.shape(), w[1].weight.shape()));
            }
        }
        for l in &layers {
            if l.bias.dims() != (1, l.weight.cols()) {
                return Err(Error::dim("mlp bias", l.weight.shape(), l.bias.shape()));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{k}.weight"), &l.weight));
            out.push((format!("{prefix}.{k}.bias"), &l.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (w, b) = if track {
                    (tape.param(l.weight.clone()), tape.param(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                };
                (w, b, l.activation)
            })
            .collect();
        BoundMlp { layers }
    }

    /// Tape-free forward pass on a single input vector.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("mlp_forward", &[1, x.len()], self.layers[0].weight.shape()));
        }
        let mut h = x.to_vec();
        for l in &self.layers {
            let (n_in, n_out) = l.weight.dims();
            let w = l.weight.data();
            let mut next = l.bias.data().to_vec();
            for i in 0..n_in {
                let hi = h[i];
                for j in 0..n_out {
                    next[j] += hi * w[i * n_out + j];
                }
            }
            for v in &mut next {
                *v = l.activation.apply(*v);
            }
            h = next;
        }
        Ok(h)
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(Var, Var, Activation)>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let mut h = h;
        for &(w, b, act) in &self.layers {
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = act.on_tape(tape, z)?;
        }
        Ok(h)
    }

    pub fn forward_dual(&self, tape: &mut Tape, h: Dual) -> Result<Dual> {
        let mut h = h;
        for &(w, b, act) in &self.layers {
            let z = h.matmul(tape, w)?.add(tape, Dual::constant(b))?;
            h = act.on_dual(tape, z)?;
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b, _)| [w, b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut mlp = Mlp::new(&[2, 4, 2], Activation::Tanh, Activation::Identity, 1.0, &mut seeded(1)).unwrap();
        for p in mlp.params_mut() {
            p.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape, false);
        let x = tape.constant(Tensor::row(&[0.3, -2.0]).unwrap());
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer() {
        let mlp = Mlp::from_layers(vec![Dense {
            weight: Tensor::scalar(2.0).unwrap(),
            bias: Tensor::scalar(0.0).unwrap(),
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(mlp.eval(&[3.0]).unwrap(), vec![6.0]);
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape, true);
        let x = tape.constant(Tensor::scalar(3.0).unwrap());
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).item(), 6.0);
    }

    #[test]
    fn input_width_mismatch_is_dimension_error() {
        let mlp = Mlp::new(&[2, 3, 2], Activation::Tanh, Activation::Identity, 1.0, &mut seeded(2)).unwrap();
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape, false);
        let x = tape.constant(Tensor::row(&[1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(bound.forward(&mut tape, x), Err(Error::Dimension { .. })));
        assert!(mlp.eval(&[1.0]).is_err());
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let mlp = Mlp::new(&[3, 5, 5, 3], Activation::Tanh, Activation::Softplus, 1.0, &mut seeded(3)).unwrap();
        let x = [0.2, -0.7, 1.1];
        let mut tape = Tape::new();
        let bound = mlp.bind(&mut tape, false);
        let xv = tape.constant(Tensor::row(&x).unwrap());
        let y = bound.forward(&mut tape, xv).unwrap();
        let plain = mlp.eval(&x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
