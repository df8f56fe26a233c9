//! End-to-end training: boundary sets, trajectories, counterexample
//! refinement, the total loss, Adam updates and the `A_z >= 0` projection.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{consistency_residual, total_loss, LossConfig, LossInputs, ShapingFunction};
use crate::nets::{Activation, AnchorSet, BoundHead, BoundMlp, Iacnn, IacnnShape, LyapunovHead, Mlp};
use crate::ode::{rk4_integrate, SolverConfig, TapeField, TapeTrajectory};
use crate::rng::{derive_seed, seeded};
use crate::sampler::{boundary_sample_class, make_directions, project_class, DirectionSet, SamplerConfig};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub state_dim: usize,
    pub classes: usize,
    /// Hidden widths of the lift `phi`; `None` feeds inputs directly, which
    /// requires `input_dim == state_dim`.
    pub lift_hidden: Option<Vec<usize>>,
    pub dynamics_hidden: Vec<usize>,
    /// Glorot gain of the dynamics layers.
    pub dynamics_gain: f64,
    pub iacnn: Option<IacnnShape>,
    pub delta: f64,
    pub knee: f64,
    pub beta: f64,
    pub rho: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            state_dim: 2,
            classes: 2,
            lift_hidden: None,
            dynamics_hidden: vec![32, 32],
            dynamics_gain: 1.0,
            iacnn: None,
            delta: 0.5,
            knee: 0.1,
            beta: 0.85,
            rho: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.state_dim == 0 || self.classes < 2 {
            return Err(Error::Config("model needs positive dimensions and at least 2 classes".into()));
        }
        if self.lift_hidden.is_none() && self.input_dim != self.state_dim {
            return Err(Error::Config(format!(
                "identity lift needs input_dim == state_dim, got {} and {}",
                self.input_dim, self.state_dim
            )));
        }
        if let Some(shape) = &self.iacnn {
            shape.validate()?;
            if shape.input_dim != self.state_dim {
                return Err(Error::Config("IACNN input_dim must equal state_dim".into()));
            }
        }
        Ok(())
    }
}

/// Every learnable piece of the classifier. The anchor matrix doubles as
/// the frozen FC weights `C_psi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub lift: Option<Mlp>,
    pub dynamics: Mlp,
    pub head: LyapunovHead,
}

/// A [`ModelBundle`] on a tape.
#[derive(Debug)]
pub struct BoundBundle {
    pub lift: Option<BoundMlp>,
    pub dynamics: BoundMlp,
    pub head: BoundHead,
    pub c_psi: Var,
}

impl BoundBundle {
    /// Tracked variables in the order of [`ModelBundle::params_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.lift.as_ref().map(|l| l.vars()).unwrap_or_default();
        v.extend(self.dynamics.vars());
        v.extend(self.head.vars());
        v
    }

    pub fn lift_inputs(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &self.lift {
            Some(l) => l.forward(tape, x),
            None => Ok(x),
        }
    }
}

impl ModelBundle {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let anchors = AnchorSet::build(cfg.classes, cfg.state_dim, derive_seed(seed, 10))?;
        Self::with_anchors(cfg, anchors, seed)
    }

    pub fn with_anchors(cfg: &ModelConfig, anchors: AnchorSet, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(derive_seed(seed, 11));
        let lift = match &cfg.lift_hidden {
            Some(hidden) => {
                let mut sizes = vec![cfg.input_dim];
                sizes.extend(hidden);
                sizes.push(cfg.state_dim);
                Some(Mlp::new(&sizes, Activation::Tanh, Activation::Identity, 1.0, &mut rng)?)
            }
            None => None,
        };
        let mut sizes = vec![cfg.state_dim];
        sizes.extend(&cfg.dynamics_hidden);
        sizes.push(cfg.state_dim);
        let dynamics = Mlp::new(&sizes, Activation::Tanh, Activation::Identity, cfg.dynamics_gain, &mut rng)?;
        let shape = cfg.iacnn.clone().unwrap_or_else(|| IacnnShape::desk(cfg.state_dim));
        let iacnn = Iacnn::new(shape, &mut rng)?;
        let head = LyapunovHead::new(iacnn, anchors, cfg.delta, cfg.knee, cfg.beta, cfg.rho)?;
        Ok(Self { lift, dynamics, head })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.lift.as_ref().map_or(self.state_dim(), |l| l.input_dim())
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.lift.as_ref().map(|l| l.named_params("lift")).unwrap_or_default();
        out.extend(self.dynamics.named_params("dynamics"));
        out.extend(self.head.iacnn.named_params("iacnn"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.lift.as_mut().map(|l| l.params_mut()).unwrap_or_default();
        out.extend(self.dynamics.params_mut());
        out.extend(self.head.iacnn.params_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundBundle {
        let lift = self.lift.as_ref().map(|l| l.bind(tape, track));
        let dynamics = self.dynamics.bind(tape, track);
        let head = self.head.bind(tape, track);
        let c_psi = tape.constant(self.head.anchors.c_psi());
        BoundBundle {
            lift,
            dynamics,
            head,
            c_psi,
        }
    }

    /// Plain lift of one input row.
    pub fn lift_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.lift {
            Some(l) => l.eval(x),
            None => Ok(x.to_vec()),
        }
    }
}

/// Lift followed by a tape-recorded RK4 solve, sampled at `samples + 1` times.
pub fn forward_trajectory(tape: &mut Tape, bound: &BoundBundle, x: Var, solver: &SolverConfig, samples: usize) -> Result<TapeTrajectory> {
    let SolverConfig::Rk4Fixed { steps, horizon } = *solver else {
        return Err(Error::Config("the differentiable pipeline needs a fixed-step solver".into()));
    };
    let h0 = bound.lift_inputs(tape, x)?;
    rk4_integrate(tape, &bound.dynamics, h0, horizon, steps, samples)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Initial learning rate `eta1`.
    pub lr: f64,
    /// Iteration count `N1`.
    pub iterations: usize,
    /// Counterexample ascent step `eta2`.
    pub eta2: f64,
    /// Refinement iterations `N2`.
    pub refine_steps: usize,
    /// Cap `n` on boundary points per class.
    pub boundary_samples: usize,
    pub directions_per_pair: usize,
    pub direction_scale: f64,
    /// Trajectory sample count `Gamma_t`.
    pub time_samples: usize,
    pub solver: SolverConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Fraction of `N1` after which the learning rate is multiplied by `decay`.
    pub milestone: f64,
    pub decay: f64,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            iterations: 600,
            eta2: 1.2,
            refine_steps: 5,
            boundary_samples: 64,
            directions_per_pair: 20,
            direction_scale: 0.5,
            time_samples: 5,
            solver: SolverConfig::training(),
            batch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            milestone: 0.7,
            decay: 0.1,
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.sampler.validate()?;
        if !matches!(self.solver, SolverConfig::Rk4Fixed { .. }) {
            return Err(Error::Config("training needs the rk4-fixed solver".into()));
        }
        if !(self.lr > 0.0) || !(self.eta2 > 0.0) {
            return Err(Error::Config("lr and eta2 must be positive".into()));
        }
        if self.batch_size == 0 || self.time_samples == 0 || self.boundary_samples == 0 {
            return Err(Error::Config("batch size, time samples and boundary samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.milestone) || !(self.decay > 0.0) {
            return Err(Error::Config("milestone must lie in [0, 1] and decay must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based iteration `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let milestone = (self.milestone * self.iterations as f64).floor() as usize;
        if step >= milestone {
            self.lr * self.decay
        } else {
            self.lr
        }
    }
}

/// Bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[&Tensor], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.rows(), t.cols());
        Self {
            m: shapes.iter().map(zeros).collect(),
            v: shapes.iter().map(zeros).collect(),
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

pub fn adam_update(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[k].shape() {
            return Err(Error::Contract(format!("adam: shape mismatch for parameter {k}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, (x, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            *x -= lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Projected gradient ascent on the consistency residual inside
/// `{W_class <= rho}`: `N2` steps of `h <- Proj(h + eta2 grad_h l_con)`.
/// Parameters are held fixed; the result carries no gradient history.
pub fn counterexample_refine<F: TapeField + ?Sized>(
    head: &LyapunovHead,
    field_of: &dyn Fn(&mut Tape) -> Box<F>,
    shaping: &ShapingFunction,
    points: &Tensor,
    class: usize,
    steps: usize,
    eta2: f64,
) -> Result<Tensor> {
    let mut h = points.clone();
    if h.rows() == 0 {
        return Ok(h);
    }
    for _ in 0..steps {
        let mut tape = Tape::new();
        let bound = head.bind(&mut tape, false);
        let field = field_of(&mut tape);
        let hv = tape.param(h.clone());
        let l = consistency_residual(&mut tape, &bound, field.as_ref(), shaping, hv, class)?;
        let s = tape.sum(l)?;
        let g = tape.backward(s)?.wrt(hv);
        for (x, gi) in h.data_mut().iter_mut().zip(g.data()) {
            *x += eta2 * gi;
        }
        if !h.is_finite() {
            return Err(Error::Contract("counterexample refinement produced non-finite points".into()));
        }
        h = project_class(head, class, &h, head.rho)?;
    }
    Ok(h)
}

/// Per-step log entry. The CSV columns are [`TrainMetrics::CSV_HEADER`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub step: usize,
    pub loss_total: f64,
    pub loss_cla: f64,
    pub loss_fc: f64,
    pub loss_con_mean: f64,
    pub loss_con_max: f64,
    pub loss_sep: f64,
    pub acc_w_head: f64,
    pub acc_fc_head: f64,
    pub lr: f64,
    /// Batch average of the per-example consistency sum (the term weighted by `lambda2`).
    pub loss_con_sum: f64,
    pub grad_norm: f64,
    pub boundary_points: usize,
}

impl TrainMetrics {
    pub const CSV_HEADER: &'static str =
        "step,loss_total,loss_cla,loss_fc,loss_con_mean,loss_con_max,loss_sep,acc_w_head,acc_fc_head,lr";

    /// Shortest round-trip formatting, so equal runs give equal bytes.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.loss_total,
            self.loss_cla,
            self.loss_fc,
            self.loss_con_mean,
            self.loss_con_max,
            self.loss_sep,
            self.acc_w_head,
            self.acc_fc_head,
            self.lr
        )
    }
}

pub fn metrics_csv(rows: &[TrainMetrics]) -> String {
    let mut out = String::from(TrainMetrics::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn stack_rows(parts: &[&Tensor], cols: usize) -> Result<Tensor> {
    let rows: usize = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, cols, data)
}

fn take_rows(t: &Tensor, n: usize) -> Result<Tensor> {
    let n = n.min(t.rows());
    Tensor::matrix(n, t.cols(), t.data()[..n * t.cols()].to_vec())
}

/// Holds the state that persists across steps: search directions (fixed,
/// since anchors are frozen), optimizer moments and the step counter.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub loss: LossConfig,
    pub directions: Vec<DirectionSet>,
    pub adam: AdamState,
    pub step: usize,
}

impl Trainer {
    pub fn new(bundle: &mut ModelBundle, cfg: TrainConfig, loss: LossConfig) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        let directions = (0..bundle.num_classes())
            .map(|i| {
                make_directions(
                    &bundle.head.anchors,
                    i,
                    cfg.directions_per_pair,
                    cfg.direction_scale,
                    derive_seed(cfg.seed, 2),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let params = bundle.params_mut();
        let shapes: Vec<&Tensor> = params.iter().map(|p| &**p).collect();
        let adam = AdamState::new(&shapes, cfg.beta1, cfg.beta2, cfg.adam_eps);
        Ok(Self {
            cfg,
            loss,
            directions,
            adam,
            step: 0,
        })
    }

    /// Boundary set `S2` of every class under the current head. A class
    /// whose search fails entirely contributes no points this step.
    pub fn boundary_sets(&self, bundle: &ModelBundle) -> Result<Vec<Tensor>> {
        let d = bundle.state_dim();
        let sampler = SamplerConfig {
            rho: bundle.head.rho,
            ..self.cfg.sampler
        };
        (0..bundle.num_classes())
            .map(|i| match boundary_sample_class(&bundle.head, i, &self.directions[i], &sampler) {
                Ok(s) => take_rows(&s.converged_points(), self.cfg.boundary_samples),
                Err(Error::SamplerFailure { .. }) => Ok(Tensor::zeros(0, d)),
                Err(e) => Err(e),
            })
            .collect()
    }

    /// Builds the total loss for one batch on `tape` and returns its terms
    /// and the bound bundle, without updating anything.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        bundle: &ModelBundle,
        x: &Tensor,
        y: &[usize],
        s2: &[Tensor],
    ) -> Result<(crate::losses::LossTerms, BoundBundle)> {
        let classes = bundle.num_classes();
        let d = bundle.state_dim();
        let bound = bundle.bind(tape, true);
        let xv = tape.constant(x.clone());
        let traj = forward_trajectory(tape, &bound, xv, &self.cfg.solver, self.cfg.time_samples)?;

        // S1: detached trajectory samples at t_1..t_Gamma plus their refined
        // counterexamples, grouped by label.
        let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); classes];
        for &s in &traj.states[1..] {
            let v = tape.value(s);
            for (r, &label) in y.iter().enumerate() {
                by_class[label].extend_from_slice(v.row_slice(r));
            }
        }
        let dynamics = bundle.dynamics.clone();
        let field_of = move |t: &mut Tape| Box::new(dynamics.bind(t, false));
        let mut s1 = Vec::with_capacity(classes);
        for (c, data) in by_class.into_iter().enumerate() {
            let pts = Tensor::matrix(data.len() / d, d, data)?;
            let refined = counterexample_refine(
                &bundle.head,
                &field_of,
                &self.loss.shaping,
                &pts,
                c,
                self.cfg.refine_steps,
                self.cfg.eta2,
            )?;
            s1.push(if self.cfg.refine_steps == 0 {
                pts
            } else {
                stack_rows(&[&pts, &refined], d)?
            });
        }

        let inputs = LossInputs {
            h_final: traj.last(),
            labels: y,
            c_psi: bound.c_psi,
            s1: &s1,
            s2,
            beta: bundle.head.beta,
        };
        let terms = total_loss(tape, &bound.head, &bound.dynamics, &inputs, &self.loss)?;
        Ok((terms, bound))
    }

    /// One iteration: `S2`, forward solve, `S1`, loss, backward, Adam and
    /// the nonnegativity projection.
    pub fn train_step(&mut self, bundle: &mut ModelBundle, x: &Tensor, y: &[usize]) -> Result<TrainMetrics> {
        if y.is_empty() || x.rows() != y.len() {
            return Err(Error::dim("train_step", &[x.rows()], &[y.len()]));
        }
        let s2 = self.boundary_sets(bundle)?;
        let boundary_points = s2.iter().map(|t| t.rows()).sum();
        let mut tape = Tape::new();
        let (terms, bound) = self.loss_on_tape(&mut tape, bundle, x, y, &s2)?;
        let grads: Gradients = tape.backward(terms.total)?;
        let grads: Vec<Tensor> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();
        let grad_norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let lr = self.cfg.lr_at(self.step);
        let loss_total = tape.value(terms.total).item();
        {
            let mut params = bundle.params_mut();
            adam_update(&mut params, &grads, &mut self.adam, lr)?;
        }
        bundle.head.iacnn.project_nonneg();
        let row = TrainMetrics {
            step: self.step,
            loss_total,
            loss_cla: terms.cla,
            loss_fc: terms.fc,
            loss_con_mean: terms.con_mean,
            loss_con_max: terms.con_max,
            loss_sep: terms.sep_sum,
            acc_w_head: terms.acc_w,
            acc_fc_head: terms.acc_fc,
            lr,
            loss_con_sum: terms.con_sum,
            grad_norm,
            boundary_points,
        };
        self.step += 1;
        Ok(row)
    }
}

/// Runs `cfg.iterations` steps on shuffled mini-batches (a fresh
/// permutation per pass over the data), calling `on_step` after each.
pub fn train_loop<C>(bundle: &mut ModelBundle, train: &Dataset, cfg: TrainConfig, loss: LossConfig, mut on_step: C) -> Result<Vec<TrainMetrics>>
where
    C: FnMut(&TrainMetrics, &ModelBundle) -> Result<()>,
{
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if train.dim() != bundle.input_dim() {
        return Err(Error::dim("train_loop", &[train.dim()], &[bundle.input_dim()]));
    }
    let mut trainer = Trainer::new(bundle, cfg, loss)?;
    let mut rng = seeded(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch = train.subset(&idx);
        let row = trainer.train_step(bundle, &batch.x, &batch.y)?;
        on_step(&row, bundle)?;
        history.push(row);
    }
    Ok(history)
}

/// Settings for fitting a Lyapunov head to a fixed, known vector field by
/// minimizing the consistency residual alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZubovFitConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Sampling box for the residual points.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub seed: u64,
    pub milestone: f64,
    pub decay: f64,
    pub shaping: ShapingFunction,
    /// Reset the Adam moments every this many steps (0 disables). The fresh,
    /// sign-like steps after a reset are what revive a side of `V` that a
    /// tilted `g` has pushed into the flat part of the outer activation.
    #[serde(default)]
    pub restart_every: usize,
}

/// Trains only the head's IACNN on `mean l_con` over points drawn uniformly
/// from the box, for class 0. Returns the loss history.
pub fn fit_consistency<F: TapeField + ?Sized>(head: &mut LyapunovHead, field: &F, cfg: &ZubovFitConfig) -> Result<Vec<f64>> {
    let d = head.anchors.dim();
    if cfg.lower.len() != d || cfg.upper.len() != d {
        return Err(Error::dim("fit_consistency", &[cfg.lower.len(), cfg.upper.len()], &[d]));
    }
    if cfg.lower.iter().zip(&cfg.upper).any(|(a, b)| !(a < b)) || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("invalid Zubov fit config".into()));
    }
    let mut rng = seeded(derive_seed(cfg.seed, 3));
    let shapes: Vec<Tensor> = head.iacnn.params_mut().into_iter().map(|p| p.clone()).collect();
    let mut adam = AdamState::new(&shapes.iter().collect::<Vec<_>>(), 0.9, 0.999, 1e-8);
    let milestone = (cfg.milestone * cfg.iterations as f64).floor() as usize;
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let data: Vec<f64> = (0..cfg.batch_size * d)
            .map(|k| rng.random_range(cfg.lower[k % d]..cfg.upper[k % d]))
            .collect();
        let pts = Tensor::matrix(cfg.batch_size, d, data)?;
        let mut tape = Tape::new();
        let bound = head.bind(&mut tape, true);
        let h = tape.constant(pts);
        let l = consistency_residual(&mut tape, &bound, field, &cfg.shaping, h, 0)?;
        let s = tape.sum(l)?;
        let mean = tape.scale(s, 1.0 / cfg.batch_size as f64)?;
        let grads = tape.backward(mean)?;
        let grads: Vec<Tensor> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();
        let lr = if it >= milestone { cfg.lr * cfg.decay } else { cfg.lr };
        if cfg.restart_every > 0 && it > 0 && it % cfg.restart_every == 0 {
            adam = AdamState::new(&shapes.iter().collect::<Vec<_>>(), 0.9, 0.999, 1e-8);
        }
        let mut params = head.iacnn.params_mut();
        adam_update(&mut params, &grads, &mut adam, lr)?;
        head.iacnn.project_nonneg();
        history.push(tape.value(mean).item());
    }
    Ok(history)
}
