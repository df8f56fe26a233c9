//! Objective terms: the Zubov consistency residual, the `W`-based output
//! head with its classification loss, FC cross-entropy on the frozen anchor
//! matrix, boundary separation, and their weighted total.
//!
//! Batch conventions: per-example losses are averaged over the batch, while
//! the per-example sums over the point sets `S1` (consistency) and `S2`
//! (separation) are kept as sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Potential;
use crate::ode::TapeField;
use crate::tensor::{Dual, Tape, Tensor, Var};

/// Shaping term `Phi_i(h) = scale * |h - c_i|^2` of the Zubov equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapingFunction {
    SquaredDistance { scale: f64 },
}

impl Default for ShapingFunction {
    fn default() -> Self {
        ShapingFunction::SquaredDistance { scale: 1.0 }
    }
}

impl ShapingFunction {
    pub fn scale(&self) -> f64 {
        match *self {
            ShapingFunction::SquaredDistance { scale } => scale,
        }
    }

    pub fn eval(&self, h: &[f64], c: &[f64]) -> f64 {
        self.scale() * h.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    fn on_tape(&self, tape: &mut Tape, h: Var, c: &[f64]) -> Result<Var> {
        let c = tape.constant(Tensor::row(c)?);
        let d = tape.sub(h, c)?;
        let d = tape.square(d)?;
        let d = tape.sum_cols(d)?;
        tape.scale(d, self.scale())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the FC cross-entropy.
    pub lambda1: f64,
    /// Weight of the consistency residual sum over `S1`.
    pub lambda2: f64,
    /// Weight of the separation sum over `S2`.
    pub lambda3: f64,
    /// Stability margin subtracted from `1 / W` in the output head.
    pub alpha: f64,
    /// Clamp applied to `W` before inversion.
    pub eps_w: f64,
    pub shaping: ShapingFunction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.5,
            lambda2: 0.12,
            lambda3: 0.9,
            alpha: 0.0,
            eps_w: 1e-6,
            shaping: ShapingFunction::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda1, self.lambda2, self.lambda3];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative, got {weights:?}")));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.eps_w > 0.0 && self.eps_w <= 1e-3) {
            return Err(Error::Config(format!("eps_w must lie in (0, 1e-3], got {}", self.eps_w)));
        }
        if !(self.shaping.scale() > 0.0) {
            return Err(Error::Config("shaping scale must be positive".into()));
        }
        Ok(())
    }
}

/// Squared Zubov residual `(dW_i/dh . f(h) + Phi_i(h) (1 - W_i(h)))^2` for
/// every row of `h`, as an `n x 1` node. The directional derivative is
/// taken on the tape, so the result is differentiable in the parameters of
/// both `head` and `field`, and in `h` itself when `h` is tracked.
pub fn consistency_residual<P, F>(
    tape: &mut Tape,
    head: &P,
    field: &F,
    shaping: &ShapingFunction,
    h: Var,
    class: usize,
) -> Result<Var>
where
    P: Potential + ?Sized,
    F: TapeField + ?Sized,
{
    let v = field.apply(tape, h)?;
    if tape.shape(v) != tape.shape(h) {
        let (a, b) = (tape.shape(h), tape.shape(v));
        return Err(Error::dim("consistency_residual", &[a.0, a.1], &[b.0, b.1]));
    }
    let w = head.level(tape, Dual::new(h, v), class)?;
    let dw = w.tangent_or_zero(tape);
    let phi = shaping.on_tape(tape, h, head.anchor(class))?;
    let one_minus_w = tape.neg(w.primal)?;
    let one_minus_w = tape.offset(one_minus_w, 1.0)?;
    let decay = tape.mul(phi, one_minus_w)?;
    let r = tape.add(dw, decay)?;
    tape.square(r)
}

/// `W_k` (or `W_k^beta` when `beta` is given) for every class, `B x L`.
pub fn level_matrix<P: Potential + ?Sized>(tape: &mut Tape, head: &P, h: Var, beta: Option<f64>) -> Result<Var> {
    let cols = (0..head.num_classes())
        .map(|k| {
            let x = Dual::constant(h);
            let w = match beta {
                Some(b) => head.level_beta(tape, x, k, b)?,
                None => head.level(tape, x, k)?,
            };
            Ok(w.primal)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_cols(&cols)
}

/// Output head `psi = (1/W - alpha) / sum(1/W - alpha)` with `W` clamped to
/// `[eps_w, 1 - eps_w]`; rows of the `B x L` input map to probability rows.
pub fn output_probs(tape: &mut Tape, w: Var, cfg: &LossConfig) -> Result<Var> {
    let w = tape.clamp(w, cfg.eps_w, 1.0 - cfg.eps_w)?;
    let inv = tape.reciprocal(w)?;
    let q = tape.offset(inv, -cfg.alpha)?;
    let s = tape.sum_cols(q)?;
    let s = tape.reciprocal(s)?;
    tape.mul(q, s)
}

/// Plain-value version of [`output_probs`] for a single row of `W`.
pub fn output_probs_values(w: &[f64], cfg: &LossConfig) -> Vec<f64> {
    let q: Vec<f64> = w
        .iter()
        .map(|v| 1.0 / v.clamp(cfg.eps_w, 1.0 - cfg.eps_w) - cfg.alpha)
        .collect();
    let s: f64 = q.iter().sum();
    q.into_iter().map(|v| v / s).collect()
}

fn batch_mean(tape: &mut Tape, per_row: Var) -> Result<Var> {
    let n = tape.shape(per_row).0;
    if n == 0 {
        return Err(Error::Contract("loss over an empty batch".into()));
    }
    let s = tape.sum(per_row)?;
    tape.scale(s, 1.0 / n as f64)
}

/// Mean over rows of `-log probs[y]`.
pub fn cla_loss(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let p = tape.gather(probs, labels)?;
    let l = tape.log(p)?;
    let l = tape.neg(l)?;
    batch_mean(tape, l)
}

/// Mean cross-entropy of `softmax(h C_psi)` against the labels; `c_psi` is
/// the `d x L` anchor matrix and is normally bound as a constant.
pub fn fc_loss(tape: &mut Tape, c_psi: Var, h: Var, labels: &[usize]) -> Result<Var> {
    let logits = tape.matmul(h, c_psi)?;
    let ls = tape.log_softmax_rows(logits)?;
    let l = tape.gather(ls, labels)?;
    let l = tape.neg(l)?;
    batch_mean(tape, l)
}

/// `sum_j sum_{k != class} -W_k^beta(p_j)` over the boundary points of `class`.
pub fn sep_loss<P: Potential + ?Sized>(tape: &mut Tape, head: &P, boundary: &Tensor, class: usize, beta: f64) -> Result<Var> {
    if boundary.rows() == 0 {
        return Ok(tape.scalar(0.0));
    }
    let pts = tape.constant(boundary.clone());
    let mut acc: Option<Var> = None;
    for k in (0..head.num_classes()).filter(|&k| k != class) {
        let w = head.level_beta(tape, Dual::constant(pts), k, beta)?;
        let s = tape.sum(w.primal)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    match acc {
        Some(a) => tape.neg(a),
        None => Ok(tape.scalar(0.0)),
    }
}

/// Inputs to [`total_loss`]. `s1[c]` stacks the detached consistency
/// points of all batch examples labeled `c`; `s2[c]` holds the boundary
/// points of class `c`. Both are indexed by class.
pub struct LossInputs<'a> {
    /// Final states `h(T)`, `B x d`, tracked.
    pub h_final: Var,
    pub labels: &'a [usize],
    pub c_psi: Var,
    pub s1: &'a [Tensor],
    pub s2: &'a [Tensor],
    pub beta: f64,
}

/// Value of every term, alongside the differentiable total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub cla: f64,
    pub fc: f64,
    /// Batch average of the per-example sum of `l_con` over `S1`.
    pub con_sum: f64,
    /// Mean and max of `l_con` over all points of `S1`.
    pub con_mean: f64,
    pub con_max: f64,
    /// Batch average of the per-example separation sum over `S2`.
    pub sep_sum: f64,
    /// Fraction of the batch the W-head and FC head classify correctly.
    pub acc_w: f64,
    pub acc_fc: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// `cla + lambda1 fc + lambda2 sum_S1 l_con + lambda3 sum_S2 sep`, each term
/// averaged over the batch.
pub fn total_loss<P, F>(tape: &mut Tape, head: &P, field: &F, inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<LossTerms>
where
    P: Potential + ?Sized,
    F: TapeField + ?Sized,
{
    let classes = head.num_classes();
    let b = inputs.labels.len();
    if b == 0 || tape.shape(inputs.h_final).0 != b {
        return Err(Error::dim("total_loss", &[tape.shape(inputs.h_final).0], &[b]));
    }
    if inputs.s1.len() != classes || inputs.s2.len() != classes {
        return Err(Error::dim("total_loss", &[inputs.s1.len(), inputs.s2.len()], &[classes, classes]));
    }
    let inv_b = 1.0 / b as f64;

    let w = level_matrix(tape, head, inputs.h_final, None)?;
    let probs = output_probs(tape, w, cfg)?;
    let cla = cla_loss(tape, probs, inputs.labels)?;
    let fc = fc_loss(tape, inputs.c_psi, inputs.h_final, inputs.labels)?;

    let mut total = cla;
    let t = tape.scale(fc, cfg.lambda1)?;
    total = tape.add(total, t)?;

    let mut con_sum = 0.0;
    let mut con_max: f64 = 0.0;
    let mut con_count = 0usize;
    for (c, pts) in inputs.s1.iter().enumerate() {
        if pts.rows() == 0 {
            continue;
        }
        let h = tape.constant(pts.clone());
        let l = consistency_residual(tape, head, field, &cfg.shaping, h, c)?;
        for v in tape.value(l).data() {
            con_max = con_max.max(*v);
        }
        con_count += pts.rows();
        let s = tape.sum(l)?;
        con_sum += tape.value(s).item();
        let t = tape.scale(s, cfg.lambda2 * inv_b)?;
        total = tape.add(total, t)?;
    }

    let mut counts = vec![0usize; classes];
    for &y in inputs.labels {
        if y >= classes {
            return Err(Error::Contract(format!("label {y} out of range for {classes} classes")));
        }
        counts[y] += 1;
    }
    let mut sep_sum = 0.0;
    for (c, pts) in inputs.s2.iter().enumerate() {
        if counts[c] == 0 || pts.rows() == 0 {
            continue;
        }
        let s = sep_loss(tape, head, pts, c, inputs.beta)?;
        let weight = counts[c] as f64 * inv_b;
        sep_sum += weight * tape.value(s).item();
        let t = tape.scale(s, cfg.lambda3 * weight)?;
        total = tape.add(total, t)?;
    }

    let pv = tape.value(probs).clone();
    let logits = tape.value(inputs.h_final).matmul(tape.value(inputs.c_psi))?;
    let mut hits_w = 0;
    let mut hits_fc = 0;
    for (r, &y) in inputs.labels.iter().enumerate() {
        hits_w += usize::from(argmax(pv.row_slice(r)) == y);
        hits_fc += usize::from(argmax(logits.row_slice(r)) == y);
    }

    Ok(LossTerms {
        total,
        cla: tape.value(cla).item(),
        fc: tape.value(fc).item(),
        con_sum: con_sum * inv_b,
        con_mean: if con_count > 0 { con_sum / con_count as f64 } else { 0.0 },
        con_max,
        sep_sum,
        acc_w: hits_w as f64 * inv_b,
        acc_fc: hits_fc as f64 * inv_b,
    })
}
