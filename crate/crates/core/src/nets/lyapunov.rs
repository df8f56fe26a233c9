use crate::error::{Error, Result};
use crate::tensor::{Dual, Tape, Tensor, Var};

use super::anchors::AnchorSet;
use super::iacnn::{BoundIacnn, Iacnn, LayerGates};

/// Class-indexed potentials `V_i >= 0` with `V_i(c_i) = 0`, evaluated on a
/// tape so that tangents in `x` and reverse gradients both flow.
pub trait Potential {
    fn num_classes(&self) -> usize;
    fn anchor(&self, i: usize) -> &[f64];

    /// `V_i` at each row of `x`, as a `B x 1` dual.
    fn potential(&self, tape: &mut Tape, x: Dual, i: usize) -> Result<Dual>;

    /// `W_i = 1 - exp(-V_i)`.
    fn level(&self, tape: &mut Tape, x: Dual, i: usize) -> Result<Dual> {
        let v = self.potential(tape, x, i)?;
        transform(tape, v, 1.0)
    }

    /// `W_i^beta = 1 - exp(-beta V_i)`.
    fn level_beta(&self, tape: &mut Tape, x: Dual, i: usize, beta: f64) -> Result<Dual> {
        let v = self.potential(tape, x, i)?;
        transform(tape, v, beta)
    }
}

/// `1 - exp(-beta v)`.
pub fn transform(tape: &mut Tape, v: Dual, beta: f64) -> Result<Dual> {
    v.scale(tape, -beta)?.exp(tape)?.neg(tape)?.offset(tape, 1.0)
}

/// Tape-free evaluation of the same family of functions.
pub trait LevelFunction {
    fn num_classes(&self) -> usize;
    fn dim(&self) -> usize;
    fn anchor_point(&self, i: usize) -> Vec<f64>;
    fn potential_values(&self, points: &Tensor, i: usize) -> Result<Vec<f64>>;

    fn level_values(&self, points: &Tensor, i: usize) -> Result<Vec<f64>> {
        Ok(self
            .potential_values(points, i)?
            .into_iter()
            .map(|v| -(-v).exp_m1())
            .collect())
    }
}

fn check_class(i: usize, classes: usize) -> Result<()> {
    if i >= classes {
        return Err(Error::Contract(format!("class index {i} out of range for {classes} classes")));
    }
    Ok(())
}

/// `V_i(x) = scale * |x - c_i|^2`, the closed-form reference potential.
#[derive(Clone, Debug)]
pub struct QuadraticPotential {
    pub anchors: AnchorSet,
    pub scale: f64,
}

impl QuadraticPotential {
    pub fn new(anchors: AnchorSet, scale: f64) -> Self {
        Self { anchors, scale }
    }
}

impl Potential for QuadraticPotential {
    fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    fn anchor(&self, i: usize) -> &[f64] {
        self.anchors.point(i)
    }

    fn potential(&self, tape: &mut Tape, x: Dual, i: usize) -> Result<Dual> {
        check_class(i, self.anchors.len())?;
        let c = tape.constant(Tensor::row(self.anchors.point(i))?);
        x.sub(tape, Dual::constant(c))?.square(tape)?.sum_cols(tape)?.scale(tape, self.scale)
    }
}

impl LevelFunction for QuadraticPotential {
    fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    fn dim(&self) -> usize {
        self.anchors.dim()
    }

    fn anchor_point(&self, i: usize) -> Vec<f64> {
        self.anchors.point(i).to_vec()
    }

    fn potential_values(&self, points: &Tensor, i: usize) -> Result<Vec<f64>> {
        check_class(i, self.anchors.len())?;
        let c = self.anchors.point(i);
        if points.cols() != c.len() {
            return Err(Error::dim("potential", points.shape(), &[1, c.len()]));
        }
        Ok((0..points.rows())
            .map(|r| {
                let d2: f64 = points.row_slice(r).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                self.scale * d2
            })
            .collect())
    }
}

/// Learned Lyapunov head:
/// `V(x, c) = smooth_relu(g(x - c, c) - g(0, c)) + delta |x - c|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovHead {
    pub iacnn: Iacnn,
    pub anchors: AnchorSet,
    /// Strong-convexity weight.
    pub delta: f64,
    /// Knee of the outer smoothed rectifier.
    pub knee: f64,
    /// Exponent of the separation transform `W^beta`.
    pub beta: f64,
    /// Level defining the prescribed region `{W < rho}`.
    pub rho: f64,
}

impl LyapunovHead {
    pub fn new(iacnn: Iacnn, anchors: AnchorSet, delta: f64, knee: f64, beta: f64, rho: f64) -> Result<Self> {
        if !(delta > 0.0) || !(knee > 0.0) {
            return Err(Error::Config(format!("delta and knee must be positive (got {delta}, {knee})")));
        }
        if !(beta > 0.0 && beta < 1.0) || !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("beta and rho must lie in (0, 1) (got {beta}, {rho})")));
        }
        if iacnn.input_dim() != anchors.dim() {
            return Err(Error::dim("lyapunov head", &[iacnn.input_dim()], &[anchors.dim()]));
        }
        Ok(Self {
            iacnn,
            anchors,
            delta,
            knee,
            beta,
            rho,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundHead {
        let iacnn = self.iacnn.bind(tape, track);
        let anchors = (0..self.anchors.len())
            .map(|i| {
                let c = self.anchors.point(i);
                tape.constant(Tensor::from_raw(1, c.len(), c.to_vec()))
            })
            .collect();
        BoundHead {
            iacnn,
            anchors,
            anchor_points: self.anchors.clone(),
            delta: self.delta,
            knee: self.knee,
            gates: std::cell::RefCell::new(vec![None; self.anchors.len()]),
        }
    }
}

impl LevelFunction for LyapunovHead {
    fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    fn dim(&self) -> usize {
        self.anchors.dim()
    }

    fn anchor_point(&self, i: usize) -> Vec<f64> {
        self.anchors.point(i).to_vec()
    }

    fn potential_values(&self, points: &Tensor, i: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let head = self.bind(&mut tape, false);
        let x = tape.constant(points.clone());
        let v = head.potential(&mut tape, Dual::constant(x), i)?;
        Ok(tape.value(v.primal).data().to_vec())
    }
}

/// A [`LyapunovHead`] bound to a tape. Context gates are computed lazily
/// once per class and reused for every batch evaluated on the same tape.
#[derive(Debug)]
pub struct BoundHead {
    iacnn: BoundIacnn,
    anchors: Vec<Var>,
    anchor_points: AnchorSet,
    delta: f64,
    knee: f64,
    gates: std::cell::RefCell<Vec<Option<(Vec<LayerGates>, Var)>>>,
}

impl BoundHead {
    pub fn vars(&self) -> Vec<Var> {
        self.iacnn.vars()
    }

    pub fn anchor_var(&self, i: usize) -> Var {
        self.anchors[i]
    }

    pub fn iacnn(&self) -> &BoundIacnn {
        &self.iacnn
    }

    /// Gates for class `i` together with `g(0, c_i)`.
    fn class_gates(&self, tape: &mut Tape, i: usize) -> Result<(Vec<LayerGates>, Var)> {
        if let Some(hit) = &self.gates.borrow()[i] {
            return Ok(hit.clone());
        }
        let gates = self.iacnn.gates(tape, self.anchors[i])?;
        let zero = tape.zeros(1, self.anchor_points.dim());
        let g0 = self.iacnn.forward_with(tape, &gates, Dual::constant(zero))?.primal;
        self.gates.borrow_mut()[i] = Some((gates.clone(), g0));
        Ok((gates, g0))
    }
}

impl Potential for BoundHead {
    fn num_classes(&self) -> usize {
        self.anchors.len()
    }

    fn anchor(&self, i: usize) -> &[f64] {
        self.anchor_points.point(i)
    }

    fn potential(&self, tape: &mut Tape, x: Dual, i: usize) -> Result<Dual> {
        check_class(i, self.anchors.len())?;
        let (gates, g0) = self.class_gates(tape, i)?;
        let diff = x.sub(tape, Dual::constant(self.anchors[i]))?;
        let g = self.iacnn.forward_with(tape, &gates, diff)?;
        let convex = g.sub(tape, Dual::constant(g0))?.smoothed_relu(tape, self.knee)?;
        let quad = diff.square(tape)?.sum_cols(tape)?.scale(tape, self.delta)?;
        convex.add(tape, quad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::IacnnShape;
    use crate::rng::seeded;

    fn head(seed: u64, delta: f64) -> LyapunovHead {
        let anchors = AnchorSet::build(3, 2, seed).unwrap();
        let iacnn = Iacnn::new(IacnnShape::desk(2), &mut seeded(seed)).unwrap();
        LyapunovHead::new(iacnn, anchors, delta, 0.1, 0.85, 0.9).unwrap()
    }

    #[test]
    fn potential_vanishes_at_anchor() {
        let h = head(1, 0.5);
        for i in 0..3 {
            let c = Tensor::row(h.anchors.point(i)).unwrap();
            assert!(h.potential_values(&c, i).unwrap()[0].abs() <= 1e-12);
            assert!(h.level_values(&c, i).unwrap()[0].abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_network_leaves_quadratic_term() {
        let mut h = head(2, 0.5);
        for p in h.iacnn.params_mut() {
            p.data_mut().fill(0.0);
        }
        let c = h.anchors.point(0).to_vec();
        let x = Tensor::row(&[c[0] + 2.0, c[1]]).unwrap();
        assert!((h.potential_values(&x, 0).unwrap()[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn level_transform_values() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::column(&[10f64.ln(), 1.0]).unwrap());
        let w = transform(&mut tape, Dual::constant(v), 1.0).unwrap();
        assert!((tape.value(w.primal).data()[0] - 0.9).abs() < 1e-15);
        let wb = transform(&mut tape, Dual::constant(v), 0.85).unwrap();
        assert!((tape.value(wb.primal).data()[1] - 0.572_585).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_parameters() {
        let anchors = AnchorSet::build(2, 2, 0).unwrap();
        let iacnn = Iacnn::new(IacnnShape::desk(2), &mut seeded(0)).unwrap();
        assert!(LyapunovHead::new(iacnn.clone(), anchors.clone(), 0.0, 0.1, 0.85, 0.9).is_err());
        assert!(LyapunovHead::new(iacnn.clone(), anchors.clone(), 0.5, 0.1, 1.0, 0.9).is_err());
        assert!(LyapunovHead::new(iacnn, anchors, 0.5, 0.1, 0.85, 0.0).is_err());
    }

    #[test]
    fn bound_and_plain_agree() {
        let h = head(3, 0.5);
        let pts = Tensor::from_rows(&[vec![0.3, 0.1], vec![-1.0, 2.0]]).unwrap();
        let plain = h.potential_values(&pts, 1).unwrap();
        let mut tape = Tape::new();
        let b = h.bind(&mut tape, true);
        let x = tape.constant(pts);
        let v = b.potential(&mut tape, Dual::constant(x), 1).unwrap();
        assert_eq!(tape.value(v.primal).data(), plain.as_slice());
    }
}
