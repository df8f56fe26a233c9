use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

const ANCHOR_STEPS: usize = 500;
const ANCHOR_TEMPERATURE: f64 = 50.0;
const ANCHOR_STEP_START: f64 = 0.05;
const ANCHOR_STEP_END: f64 = 1e-4;

/// Class equilibria `c_1..c_L`, stored as the rows of an `L x d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    points: Tensor,
    max_coherence: f64,
}

fn coherence(points: &Tensor) -> f64 {
    let l = points.rows();
    let mut worst: f64 = 0.0;
    for i in 0..l {
        for j in i + 1..l {
            let (a, b) = (points.row_slice(i), points.row_slice(j));
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                continue;
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            worst = worst.max((dot / (na * nb)).abs());
        }
    }
    worst
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

impl AnchorSet {
    /// Unit anchors that approximately minimize the largest pairwise
    /// `|cos|`, by gradient descent on a log-sum-exp softening of that
    /// maximum with renormalization after every step. Steps are normalized
    /// by the largest per-anchor gradient and shrink geometrically, and the
    /// best iterate seen is returned.
    pub fn build(classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if classes < 2 || dim < 2 {
            return Err(Error::Config(format!(
                "anchor construction needs L >= 2 and d_h >= 2, got L = {classes}, d_h = {dim}"
            )));
        }
        let mut rng = seeded(seed);
        let mut c: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                normalize(&mut v);
                v
            })
            .collect();

        let pairs: Vec<(usize, usize)> = (0..classes)
            .flat_map(|i| (i + 1..classes).map(move |j| (i, j)))
            .collect();
        let mut best = c.clone();
        let mut best_score = f64::INFINITY;
        for step in 0..=ANCHOR_STEPS {
            let cos: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum())
                .collect();
            let score = cos.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if score < best_score {
                best_score = score;
                best = c.clone();
            }
            // Softmax weights over the 2P terms +-tau*cos; the surrogate's
            // derivative in cos_p is w(+p) - w(-p).
            let top = score * ANCHOR_TEMPERATURE;
            let mut z = 0.0;
            let mut coef = Vec::with_capacity(pairs.len());
            for &x in &cos {
                let (ep, en) = ((ANCHOR_TEMPERATURE * x - top).exp(), (-ANCHOR_TEMPERATURE * x - top).exp());
                z += ep + en;
                coef.push(ep - en);
            }
            let mut grad = vec![vec![0.0; dim]; classes];
            for (&(i, j), w) in pairs.iter().zip(&coef) {
                let w = w / z;
                for k in 0..dim {
                    grad[i][k] += w * c[j][k];
                    grad[j][k] += w * c[i][k];
                }
            }
            let gmax = grad
                .iter()
                .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0f64, f64::max);
            if gmax == 0.0 {
                break;
            }
            let frac = step as f64 / ANCHOR_STEPS as f64;
            let eta = ANCHOR_STEP_START * (ANCHOR_STEP_END / ANCHOR_STEP_START).powf(frac);
            for (ci, gi) in c.iter_mut().zip(&grad) {
                for (x, g) in ci.iter_mut().zip(gi) {
                    *x -= eta * g / gmax;
                }
                normalize(ci);
            }
        }
        let flat = best.into_iter().flatten().collect();
        let points = Tensor::matrix(classes, dim, flat)?;
        Ok(Self {
            max_coherence: coherence(&points),
            points,
        })
    }

    /// Anchors at given equilibria of a known field; no unit-norm requirement.
    pub fn custom(points: Tensor) -> Result<Self> {
        if points.rows() == 0 || points.cols() == 0 {
            return Err(Error::Config("anchor set must be non-empty".into()));
        }
        Ok(Self {
            max_coherence: coherence(&points),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row_slice(i)
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    /// `d x L` matrix whose columns are the anchors (the FC head weights).
    pub fn c_psi(&self) -> Tensor {
        self.points.transpose()
    }

    pub fn max_coherence(&self) -> f64 {
        self.max_coherence
    }
}
