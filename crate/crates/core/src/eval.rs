//! Robustness harness: noise corruption and white-box gradient attacks,
//! with accuracy and stability metrics per scenario.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{cla_loss, consistency_residual, level_matrix, output_probs, output_probs_values, LossConfig};
use crate::nets::LevelFunction;
use crate::ode::{dopri5_integrate, SolverConfig};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{Tape, Tensor};
use crate::train::{forward_trajectory, ModelBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Bim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity radius.
    pub epsilon: f64,
    #[serde(default = "default_attack_steps")]
    pub steps: usize,
    /// Per-step magnitude; `None` means `epsilon / 8`.
    #[serde(default)]
    pub step_size: Option<f64>,
}

fn default_attack_steps() -> usize {
    10
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            steps: 10,
            step_size: None,
        }
    }

    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 8.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || self.steps == 0 || self.step_size.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config(format!("invalid attack config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Uniform,
    Salt,
}

/// Adds noise to every coordinate (or, for salt, replaces coordinates by a
/// random face of the domain box with probability `magnitude`).
pub fn corrupt(x: &Tensor, kind: NoiseKind, magnitude: f64, domain: &[(f64, f64)], seed: u64) -> Result<Tensor> {
    if !(magnitude >= 0.0) {
        return Err(Error::Config(format!("noise magnitude must be nonnegative, got {magnitude}")));
    }
    if domain.len() != x.cols() {
        return Err(Error::dim("corrupt", &[domain.len()], &[x.cols()]));
    }
    let mut out = x.clone();
    if magnitude == 0.0 {
        return Ok(out);
    }
    let mut rng = seeded(seed);
    let d = x.cols();
    match kind {
        NoiseKind::Gaussian => {
            let g = Normal::new(0.0, magnitude).expect("magnitude checked");
            for v in out.data_mut() {
                *v += g.sample(&mut rng);
            }
        }
        NoiseKind::Uniform => {
            for v in out.data_mut() {
                *v += rng.random_range(-magnitude..=magnitude);
            }
        }
        NoiseKind::Salt => {
            let p = magnitude.min(1.0);
            for (k, v) in out.data_mut().iter_mut().enumerate() {
                if rng.random_bool(p) {
                    let (lo, hi) = domain[k % d];
                    *v = if rng.random_bool(0.5) { lo } else { hi };
                }
            }
        }
    }
    Ok(out)
}

fn clip(x: &mut Tensor, origin: &Tensor, eps: f64, domain: &[(f64, f64)]) {
    let d = x.cols();
    let orig = origin.data();
    for (k, v) in x.data_mut().iter_mut().enumerate() {
        let (lo, hi) = domain[k % d];
        *v = v.clamp(orig[k] - eps, orig[k] + eps).clamp(lo, hi);
    }
}

/// Gradient of the W-head classification loss with respect to the inputs,
/// through lift, RK4 and the head.
pub fn input_gradient(bundle: &ModelBundle, x: &Tensor, y: &[usize], solver: &SolverConfig, loss: &LossConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape, false);
    let xv = tape.param(x.clone());
    let traj = forward_trajectory(&mut tape, &bound, xv, solver, 1)?;
    let w = level_matrix(&mut tape, &bound.head, traj.last(), None)?;
    let p = output_probs(&mut tape, w, loss)?;
    let l = cla_loss(&mut tape, p, y)?;
    Ok(tape.backward(l)?.wrt(xv))
}

/// FGSM, PGD (random start) or BIM on a batch; every output row stays
/// within `epsilon` of its input in L-infinity and inside `domain`.
pub fn attack(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &[usize],
    cfg: &AttackConfig,
    solver: &SolverConfig,
    loss: &LossConfig,
    domain: &[(f64, f64)],
    seed: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    if domain.len() != x.cols() {
        return Err(Error::dim("attack", &[domain.len()], &[x.cols()]));
    }
    let mut adv = x.clone();
    if cfg.epsilon == 0.0 {
        return Ok(adv);
    }
    let (steps, size) = match cfg.kind {
        AttackKind::Fgsm => (1, cfg.epsilon),
        AttackKind::Pgd | AttackKind::Bim => (cfg.steps, cfg.step()),
    };
    if cfg.kind == AttackKind::Pgd {
        let mut rng = seeded(seed);
        for v in adv.data_mut() {
            *v += rng.random_range(-cfg.epsilon..=cfg.epsilon);
        }
        clip(&mut adv, x, cfg.epsilon, domain);
    }
    for _ in 0..steps {
        let g = input_gradient(bundle, &adv, y, solver, loss)?;
        for (v, gi) in adv.data_mut().iter_mut().zip(g.data()) {
            if *gi > 0.0 {
                *v += size;
            } else if *gi < 0.0 {
                *v -= size;
            }
        }
        clip(&mut adv, x, cfg.epsilon, domain);
    }
    Ok(adv)
}

/// Outcome of running the evaluation solver on a batch.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub w_head: Vec<usize>,
    pub fc_head: Vec<usize>,
    /// States at the sample times, one tensor per time (`t_1..t_K`).
    pub samples: Vec<Tensor>,
    pub final_states: Tensor,
    /// `W_k(h(T))`, one row per point.
    pub levels: Tensor,
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

/// Lift, adaptive solve, and both heads. `samples` uniformly spaced times
/// `t_k = k T / samples`, `k = 1..samples`, are recorded.
pub fn predict(bundle: &ModelBundle, x: &Tensor, solver: &SolverConfig, loss: &LossConfig, samples: usize) -> Result<Predictions> {
    let horizon = solver.horizon();
    let times: Vec<f64> = (1..=samples.max(1))
        .map(|k| if k == samples.max(1) { horizon } else { horizon * k as f64 / samples as f64 })
        .collect();
    let n = x.rows();
    let d = bundle.state_dim();
    let mut per_time: Vec<Vec<f64>> = vec![Vec::with_capacity(n * d); times.len()];
    for r in 0..n {
        let h0 = bundle.lift_point(x.row_slice(r))?;
        let states = match solver {
            SolverConfig::Dopri5Adaptive { .. } => dopri5_integrate(&bundle.dynamics, &h0, solver, &times)?.states,
            SolverConfig::Rk4Fixed { .. } => {
                let mut tape = Tape::new();
                let bound = bundle.bind(&mut tape, false);
                let xv = tape.constant(Tensor::row(x.row_slice(r))?);
                let tr = forward_trajectory(&mut tape, &bound, xv, solver, samples.max(1))?;
                tr.states[1..].iter().map(|s| tape.value(*s).data().to_vec()).collect()
            }
        };
        for (k, s) in states.iter().enumerate() {
            per_time[k].extend_from_slice(s);
        }
    }
    let samples: Vec<Tensor> = per_time
        .into_iter()
        .map(|data| Tensor::matrix(n, d, data))
        .collect::<Result<_>>()?;
    let final_states = samples.last().expect("at least one sample").clone();
    let l = bundle.num_classes();
    let mut levels = Tensor::zeros(n, l);
    for k in 0..l {
        for (r, w) in bundle.head.level_values(&final_states, k)?.into_iter().enumerate() {
            levels.set(r, k, w);
        }
    }
    let logits = final_states.matmul(&bundle.head.anchors.c_psi())?;
    let w_head = (0..n).map(|r| argmax(&output_probs_values(levels.row_slice(r), loss))).collect();
    let fc_head = (0..n).map(|r| argmax(logits.row_slice(r))).collect();
    Ok(Predictions {
        w_head,
        fc_head,
        samples,
        final_states,
        levels,
    })
}

/// Fraction of correctly classified points ending inside `{W_y <= rho}`
/// whose sampled trajectory stays inside at every sample time. Returns
/// `(rate, eligible)`; the rate is 1 when nothing is eligible.
pub fn containment_rate(bundle: &ModelBundle, pred: &Predictions, y: &[usize]) -> Result<(f64, usize)> {
    let rho = bundle.head.rho;
    let l = bundle.num_classes();
    let mut eligible = 0;
    let mut contained = 0;
    let mut per_class_levels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(pred.samples.len());
    for s in &pred.samples {
        per_class_levels.push((0..l).map(|k| bundle.head.level_values(s, k)).collect::<Result<_>>()?);
    }
    for (r, &label) in y.iter().enumerate() {
        if pred.w_head[r] != label || pred.levels.get(r, label) > rho {
            continue;
        }
        eligible += 1;
        if per_class_levels.iter().all(|lv| lv[label][r] <= rho) {
            contained += 1;
        }
    }
    let rate = if eligible == 0 { 1.0 } else { contained as f64 / eligible as f64 };
    Ok((rate, eligible))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScenarioKind {
    Noise { noise: NoiseKind, magnitude: f64 },
    Attack(AttackConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub accuracy: f64,
    pub accuracy_fc: f64,
    pub per_class: Vec<f64>,
    pub residual_mean: f64,
    pub residual_max: f64,
    pub containment: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "scenario,accuracy,accuracy_fc,residual_mean,residual_max,containment,per_class";

    pub fn csv_row(&self) -> String {
        let per: Vec<String> = self.per_class.iter().map(|v| v.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{}",
            self.scenario,
            self.accuracy,
            self.accuracy_fc,
            self.residual_mean,
            self.residual_max,
            self.containment,
            per.join(";")
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Solver for predictions.
    pub solver: SolverConfig,
    /// Differentiable solver the attacks backpropagate through.
    pub attack_solver: SolverConfig,
    pub time_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::evaluation(),
            attack_solver: SolverConfig::training(),
            time_samples: 5,
            seed: 0,
        }
    }
}

fn row_for(name: &str, bundle: &ModelBundle, x: &Tensor, y: &[usize], cfg: &EvalConfig, loss: &LossConfig) -> Result<MetricsRow> {
    let pred = predict(bundle, x, &cfg.solver, loss, cfg.time_samples)?;
    let l = bundle.num_classes();
    let n = y.len().max(1) as f64;
    let mut hits = vec![0usize; l];
    let mut totals = vec![0usize; l];
    let mut fc_hits = 0;
    for (r, &label) in y.iter().enumerate() {
        totals[label] += 1;
        hits[label] += usize::from(pred.w_head[r] == label);
        fc_hits += usize::from(pred.fc_head[r] == label);
    }
    let per_class = hits
        .iter()
        .zip(&totals)
        .map(|(h, t)| if *t == 0 { 0.0 } else { *h as f64 / *t as f64 })
        .collect();

    // Residual along the sampled trajectories, under each point's label.
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut count = 0usize;
    let d = bundle.state_dim();
    for class in 0..l {
        let rows: Vec<usize> = (0..y.len()).filter(|&r| y[r] == class).collect();
        if rows.is_empty() {
            continue;
        }
        let mut data = Vec::with_capacity(rows.len() * pred.samples.len() * d);
        for s in &pred.samples {
            for &r in &rows {
                data.extend_from_slice(s.row_slice(r));
            }
        }
        let pts = Tensor::matrix(data.len() / d, d, data)?;
        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape, false);
        let h = tape.constant(pts);
        let lc = consistency_residual(&mut tape, &bound.head, &bound.dynamics, &loss.shaping, h, class)?;
        for v in tape.value(lc).data() {
            sum += v;
            max = max.max(*v);
            count += 1;
        }
    }
    let (containment, _) = containment_rate(bundle, &pred, y)?;
    Ok(MetricsRow {
        scenario: name.to_string(),
        accuracy: hits.iter().sum::<usize>() as f64 / n,
        accuracy_fc: fc_hits as f64 / n,
        per_class,
        residual_mean: if count > 0 { sum / count as f64 } else { 0.0 },
        residual_max: max,
        containment,
    })
}

/// Clean row followed by one row per scenario, in input order. Scenario
/// names must be unique and must not be `clean`.
pub fn evaluate(
    bundle: &ModelBundle,
    test: &Dataset,
    domain: &[(f64, f64)],
    scenarios: &[Scenario],
    cfg: &EvalConfig,
    loss: &LossConfig,
) -> Result<Vec<MetricsRow>> {
    let mut seen = std::collections::BTreeSet::new();
    seen.insert("clean");
    for s in scenarios {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate scenario name {:?}", s.name)));
        }
    }
    let mut rows = vec![row_for("clean", bundle, &test.x, &test.y, cfg, loss)?];
    for (k, s) in scenarios.iter().enumerate() {
        let seed = derive_seed(cfg.seed, 100 + k as u64);
        let x = match &s.kind {
            ScenarioKind::Noise { noise, magnitude } => corrupt(&test.x, *noise, *magnitude, domain, seed)?,
            ScenarioKind::Attack(a) => attack(bundle, &test.x, &test.y, a, &cfg.attack_solver, loss, domain, seed)?,
        };
        rows.push(row_for(&s.name, bundle, &x, &test.y, cfg, loss)?);
    }
    Ok(rows)
}

/// The default scenario grid: three noise types and the three attacks at
/// `epsilon in {0.05, 0.1, 0.2}`.
pub fn default_scenarios() -> Vec<Scenario> {
    let mut out = vec![
        Scenario {
            name: "gaussian-0.1".into(),
            kind: ScenarioKind::Noise {
                noise: NoiseKind::Gaussian,
                magnitude: 0.1,
            },
        },
        Scenario {
            name: "uniform-0.1".into(),
            kind: ScenarioKind::Noise {
                noise: NoiseKind::Uniform,
                magnitude: 0.1,
            },
        },
        Scenario {
            name: "salt-0.05".into(),
            kind: ScenarioKind::Noise {
                noise: NoiseKind::Salt,
                magnitude: 0.05,
            },
        },
    ];
    for eps in [0.05, 0.1, 0.2] {
        for (kind, tag) in [(AttackKind::Fgsm, "fgsm"), (AttackKind::Pgd, "pgd"), (AttackKind::Bim, "bim")] {
            out.push(Scenario {
                name: format!("{tag}-{eps}"),
                kind: ScenarioKind::Attack(AttackConfig::new(kind, eps)),
            });
        }
    }
    out
}
