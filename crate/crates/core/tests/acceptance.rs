//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Run with `cargo test --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::StandardNormal;
use zubov::checkpoint::Checkpoint;
use zubov::config::RunConfig;
use zubov::data::{generate_splits, DatasetSpec};
use zubov::eval::{evaluate, AttackConfig, AttackKind, EvalConfig, MetricsRow, Scenario, ScenarioKind};
use zubov::losses::{consistency_residual, total_loss, LossConfig, LossInputs, ShapingFunction};
use zubov::nets::{AnchorSet, Iacnn, IacnnShape, LevelFunction, LyapunovHead, QuadraticPotential};
use zubov::ode::{KnownField, SolverConfig};
use zubov::rng::{derive_seed, seeded};
use zubov::sampler::{boundary_sample_class, DirectionSet, SamplerConfig};
use zubov::tensor::{Tape, Tensor};
use zubov::train::{fit_consistency, forward_trajectory, train_loop, ModelBundle, ModelConfig, TrainConfig, ZubovFitConfig};
use zubov::verify::{
    containment_check, convexity_suite, overlap_check, roa_compare, separability_bound, separability_mc,
    separability_suite, GridSpec, ORACLE_EPS, ORACLE_T_MAX, SEPARABILITY_CASES,
};

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

struct Suite {
    lines: Vec<Line>,
    /// Substring selecting which criteria run; `None` runs all.
    filter: Option<String>,
}

impl Suite {
    fn record(&mut self, name: &'static str, pass: bool, detail: String, elapsed: Duration) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {detail} [{:.1}s]", elapsed.as_secs_f64());
        self.lines.push(Line { name, pass, detail, elapsed });
    }

    fn selected(&self, name: &str) -> bool {
        self.filter.as_deref().map_or(true, |f| name.contains(f))
    }

    /// Runs `f`, which returns (pass, detail); errors count as failures.
    fn run(&mut self, name: &'static str, budget: Duration, f: impl FnOnce() -> zubov::Result<(bool, String)>) {
        if !self.selected(name) {
            return;
        }
        let t = Instant::now();
        let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let elapsed = t.elapsed();
        let in_time = elapsed <= budget;
        let detail = if in_time {
            detail
        } else {
            format!("{detail}; over the {:.0}s budget", budget.as_secs_f64())
        };
        self.record(name, pass && in_time, detail, elapsed);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// `V = |x|^2 / 2` solves the Zubov equation for `x' = -x` with
/// `Phi = |x|^2`, so the residual must vanish to round-off.
fn analytic_zubov() -> zubov::Result<(bool, String)> {
    let anchors = AnchorSet::custom(Tensor::zeros(1, 1))?;
    let head = QuadraticPotential::new(anchors, 0.5);
    let field = KnownField::LinearDecay { dim: 1 };
    let xs: Vec<f64> = (0..101).map(|k| -3.0 + 0.06 * k as f64).collect();
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::column(&xs)?);
    let r = consistency_residual(&mut tape, &head, &field, &ShapingFunction::SquaredDistance { scale: 1.0 }, h, 0)?;
    let worst = tape.value(r).data().iter().map(|v| v.sqrt()).fold(0.0, f64::max);
    Ok((worst <= 1e-12, format!("max |residual| = {worst:.3e} (<= 1e-12)")))
}

fn scalar_head(d: usize, delta: f64) -> zubov::Result<LyapunovHead> {
    let anchors = AnchorSet::custom(Tensor::zeros(1, d))?;
    let shape = IacnnShape {
        input_dim: d,
        z_widths: vec![32, 32, 1],
        u_widths: vec![32, 32, 0],
    };
    let iacnn = Iacnn::new(shape, &mut seeded(5))?;
    LyapunovHead::new(iacnn, anchors, delta, 0.1, 0.85, 0.9)
}

fn fit_config(box_half: f64, d: usize, iterations: usize, kappa: f64) -> ZubovFitConfig {
    ZubovFitConfig {
        iterations,
        batch_size: 256,
        lr: 1e-2,
        lower: vec![-box_half; d],
        upper: vec![box_half; d],
        seed: 1,
        milestone: 0.7,
        decay: 0.1,
        shaping: ShapingFunction::SquaredDistance { scale: kappa },
        restart_every: 100,
    }
}

/// `x' = -x + x^3` has region of attraction `(-1, 1)`; the learned
/// `{W < rho}` interval must end within 0.1 of both endpoints.
fn recovery_1d() -> zubov::Result<(bool, String)> {
    let mut head = scalar_head(1, 0.5)?;
    fit_consistency(&mut head, &KnownField::Cubic, &fit_config(1.1, 1, 16000, 1.0))?;
    let xs: Vec<f64> = (0..4001).map(|k| -2.0 + 0.001 * k as f64).collect();
    let w = head.level_values(&Tensor::column(&xs)?, 0)?;
    let rho = head.rho;
    let right = xs.iter().zip(&w).filter(|(x, _)| **x > 0.0).find(|(_, w)| **w >= rho).map(|(x, _)| *x);
    let left = xs.iter().zip(&w).rev().filter(|(x, _)| **x < 0.0).find(|(_, w)| **w >= rho).map(|(x, _)| *x);
    let (Some(l), Some(r)) = (left, right) else {
        return Ok((false, format!("level set is unbounded on [-2, 2]: left {left:?}, right {right:?}")));
    };
    let pass = (l + 1.0).abs() <= 0.1 && (r - 1.0).abs() <= 0.1;
    Ok((pass, format!("boundary [{l:.3}, {r:.3}] vs [-1, 1] (tol 0.1)")))
}

fn vdp_alignment() -> zubov::Result<(bool, String)> {
    let field = KnownField::ReversedVanDerPol { mu: 1.0 };
    let mut head = scalar_head(2, 0.01)?;
    fit_consistency(&mut head, &field, &fit_config(2.0, 2, 10000, 0.2))?;
    let grid = GridSpec::square(-3.0, 3.0, 2, 101);
    let roa = roa_compare(&field, &head, &grid, head.rho, ORACLE_T_MAX, ORACLE_EPS)?;
    let iou = roa.iou(0);
    Ok((iou >= 0.85, format!("IoU {iou:.4} (>= 0.85), {} oracle cells failed", roa.failed_cells)))
}

fn convexity() -> zubov::Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (k, d) in [1usize, 2, 3, 4].into_iter().enumerate() {
        let shape = IacnnShape {
            input_dim: d,
            z_widths: vec![16, 16, 1],
            u_widths: vec![8, 8, 0],
        };
        let seed = derive_seed(41, k as u64);
        let mut net = Iacnn::new(shape, &mut seeded(seed))?;
        // Scramble every weight, negative entries included, then project.
        let mut rng = seeded(derive_seed(seed, 1));
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
        }
        net.project_nonneg();
        let report = convexity_suite(&net, 10_000, seed);
        worst = worst.max(report.statistic);
        pass &= report.pass;
    }
    Ok((pass, format!("max violation {worst:.3e} over 4 x 1e4 probes (<= 1e-9)")))
}

fn separability_headline() -> zubov::Result<(bool, String)> {
    let trial = separability_mc(2, 2, 1, 100_000, 7)?;
    let target = 4.0 / 9.0;
    let gap = (trial.empirical - target).abs();
    Ok((
        gap <= 0.02,
        format!("P(N=2, M=2, d=1) = {:.4} +- {:.4}, target 4/9 +- 0.02", trial.empirical, trial.std_error),
    ))
}

fn separability_grid() -> zubov::Result<(bool, String)> {
    let rows = separability_suite(&SEPARABILITY_CASES, 100_000, 11)?;
    let mut pass = rows.iter().all(|(_, r)| r.pass);
    let mut parts = Vec::new();
    for (t, _) in &rows {
        if t.d > t.n {
            pass &= t.empirical == 1.0 && separability_bound(t.n, t.m, t.d) == 1.0;
        }
        parts.push(format!("({},{},{}) {:.3}>={:.3}", t.n, t.m, t.d, t.empirical, t.bound));
    }
    Ok((pass, parts.join(", ")))
}

/// `W = 1 - exp(-|x|^2)` crosses 0.9 at radius `sqrt(ln 10)`.
fn sampler_circle() -> zubov::Result<(bool, String)> {
    let head = QuadraticPotential::new(AnchorSet::custom(Tensor::zeros(1, 2))?, 1.0);
    let dirs = DirectionSet::circle(64)?;
    let cfg = SamplerConfig {
        rho: 0.9,
        eps: 1e-4,
        max_iters: 60,
        ..SamplerConfig::default()
    };
    let out = boundary_sample_class(&head, 0, &dirs, &cfg)?;
    let w = head.level_values(&out.points, 0)?;
    let werr = w.iter().map(|v| (v - 0.9).abs()).fold(0.0, f64::max);
    let r_true = 10f64.ln().sqrt();
    let rerr = out.lengths.iter().map(|s| (s - r_true).abs()).fold(0.0, f64::max);
    let pass = out.converged_count() == 64 && werr <= 1e-4;
    Ok((
        pass,
        format!(
            "{}/64 rays in <= {} iterations, max |W - rho| {werr:.2e} (<= 1e-4), max |s - sqrt(ln 10)| {rerr:.2e}",
            out.converged_count(),
            out.iterations.iter().max().copied().unwrap_or(0)
        ),
    ))
}

fn small_model() -> ModelConfig {
    ModelConfig {
        lift_hidden: Some(vec![4]),
        dynamics_hidden: vec![5],
        iacnn: Some(IacnnShape {
            input_dim: 2,
            z_widths: vec![5, 5, 1],
            u_widths: vec![4, 4, 0],
        }),
        ..ModelConfig::default()
    }
}

struct GradCase {
    x: Tensor,
    y: Vec<usize>,
    s1: Vec<Tensor>,
    s2: Vec<Tensor>,
}

const GRAD_SOLVER: SolverConfig = SolverConfig::Rk4Fixed { steps: 8, horizon: 2.0 };

/// Total loss with `S1`, `S2` held fixed; returns the value and, when
/// asked, gradients for every parameter tensor followed by the input.
fn loss_with_grads(bundle: &ModelBundle, case: &GradCase, cfg: &LossConfig, grads: bool) -> zubov::Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape, grads);
    let x = if grads { tape.param(case.x.clone()) } else { tape.constant(case.x.clone()) };
    let traj = forward_trajectory(&mut tape, &bound, x, &GRAD_SOLVER, 2)?;
    let inputs = LossInputs {
        h_final: traj.last(),
        labels: &case.y,
        c_psi: bound.c_psi,
        s1: &case.s1,
        s2: &case.s2,
        beta: bundle.head.beta,
    };
    let terms = total_loss(&mut tape, &bound.head, &bound.dynamics, &inputs, cfg)?;
    let value = tape.value(terms.total).item();
    if !grads {
        return Ok((value, Vec::new()));
    }
    let g = tape.backward(terms.total)?;
    let mut out: Vec<Tensor> = bound.vars().into_iter().map(|v| g.wrt(v)).collect();
    out.push(g.wrt(x));
    Ok((value, out))
}

fn normal_tensor(rng: &mut zubov::rng::Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Reverse-mode gradients against central differences on 100 random small
/// models, every parameter group and every input entry.
fn gradient_integrity() -> zubov::Result<(bool, String)> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-3;
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for case_seed in 0..100u64 {
        let mut rng = seeded(derive_seed(500, case_seed));
        let mut bundle = ModelBundle::new(&small_model(), case_seed)?;
        let nonneg: Vec<bool> = bundle.named_params().iter().map(|(n, _)| n.ends_with(".z_weight")).collect();
        for (p, keep_positive) in bundle.params_mut().into_iter().zip(nonneg) {
            let noise = normal_tensor(&mut rng, 1, p.len(), 0.3);
            for (v, n) in p.data_mut().iter_mut().zip(noise.data()) {
                // Constrained weights stay strictly inside the feasible set
                // so that both difference probes are admissible.
                *v = if keep_positive { v.abs() + n.abs() + 0.01 } else { *v + n };
            }
        }
        let case = GradCase {
            x: normal_tensor(&mut rng, 4, 2, 1.0),
            y: vec![0, 1, 0, 1],
            s1: (0..2).map(|_| normal_tensor(&mut rng, 3, 2, 1.0)).collect(),
            s2: (0..2).map(|_| normal_tensor(&mut rng, 3, 2, 1.0)).collect(),
        };
        let (_, grads) = loss_with_grads(&bundle, &case, &cfg, true)?;
        let groups = grads.len() - 1;
        for (g, grad) in grads.iter().enumerate() {
            let entries: Vec<usize> = if g == groups {
                (0..grad.len()).collect()
            } else {
                (0..2).map(|_| rng.random_range(0..grad.len())).collect()
            };
            for k in entries {
                let eval_at = |delta: f64| -> zubov::Result<f64> {
                    if g == groups {
                        let mut shifted = GradCase { x: case.x.clone(), y: case.y.clone(), s1: case.s1.clone(), s2: case.s2.clone() };
                        shifted.x.data_mut()[k] += delta;
                        Ok(loss_with_grads(&bundle, &shifted, &cfg, false)?.0)
                    } else {
                        let mut b = bundle.clone();
                        b.params_mut()[g].data_mut()[k] += delta;
                        Ok(loss_with_grads(&b, &case, &cfg, false)?.0)
                    }
                };
                let fd = (eval_at(H)? - eval_at(-H)?) / (2.0 * H);
                let ad = grad.data()[k];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(FLOOR);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:.2e} over {checked} entries (<= 1e-4)")))
}

struct MoonsOutcome {
    clean: MetricsRow,
    pgd: MetricsRow,
    bundle: ModelBundle,
}

fn moons_run(weighted: bool) -> zubov::Result<(MoonsOutcome, zubov::data::Splits, LossConfig)> {
    let splits = generate_splits(&DatasetSpec::moons(1000, 0.1, 7))?;
    let mut bundle = ModelBundle::new(&ModelConfig::default(), 1)?;
    let loss = if weighted {
        LossConfig::default()
    } else {
        LossConfig {
            lambda2: 0.0,
            lambda3: 0.0,
            ..LossConfig::default()
        }
    };
    let cfg = TrainConfig {
        iterations: 1500,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    train_loop(&mut bundle, &splits.train, cfg, loss, |_, _| Ok(()))?;
    let scenarios = vec![Scenario {
        name: "pgd".into(),
        kind: ScenarioKind::Attack(AttackConfig::new(AttackKind::Pgd, 0.1)),
    }];
    let mut rows = evaluate(&bundle, &splits.test, &splits.domain, &scenarios, &EvalConfig::default(), &loss)?;
    let pgd = rows.pop().expect("pgd row");
    let clean = rows.pop().expect("clean row");
    Ok((MoonsOutcome { clean, pgd, bundle }, splits, loss))
}

fn moons(suite: &mut Suite) {
    if !suite.selected("moons") {
        return;
    }
    let t = Instant::now();
    let full = moons_run(true);
    let base = moons_run(false);
    let elapsed = t.elapsed();
    let (full, splits, loss) = match full {
        Ok(v) => v,
        Err(e) => {
            suite.record("moons", false, format!("error: {e}"), elapsed);
            return;
        }
    };
    let budget_note = if elapsed <= secs(900) { "" } else { "; over the 900s budget" };
    let in_time = elapsed <= secs(900);
    let acc = full.clean.accuracy;
    suite.record("moons clean accuracy", acc >= 0.95 && in_time, format!("{acc:.4} (>= 0.95){budget_note}"), elapsed);
    match base {
        Ok((base, _, _)) => {
            let margin = full.pgd.accuracy - base.pgd.accuracy;
            suite.record(
                "moons PGD margin over baseline",
                margin >= 0.05,
                format!("{:.4} vs {:.4}, margin {margin:+.4} (>= +0.05)", full.pgd.accuracy, base.pgd.accuracy),
                elapsed,
            );
        }
        Err(e) => suite.record("moons PGD margin over baseline", false, format!("baseline error: {e}"), elapsed),
    }
    let t = Instant::now();
    match overlap_check(&full.bundle.head, &GridSpec::square(-3.0, 3.0, 2, 101), full.bundle.head.rho) {
        Ok(r) => suite.record(
            "moons sublevel overlap",
            r.pass,
            format!("{:.4} (<= 0.01) at rho {}", r.statistic, full.bundle.head.rho),
            t.elapsed(),
        ),
        Err(e) => suite.record("moons sublevel overlap", false, format!("error: {e}"), t.elapsed()),
    }
    let t = Instant::now();
    match containment_check(&full.bundle, &splits.test, &EvalConfig::default().solver, &loss, 5) {
        Ok(r) => suite.record("moons containment", r.pass, format!("{:.4} (>= 0.95)", r.statistic), t.elapsed()),
        Err(e) => suite.record("moons containment", false, format!("error: {e}"), t.elapsed()),
    }
}

/// Two identical short runs must give identical checkpoint bytes and metrics.
fn determinism() -> zubov::Result<(bool, String)> {
    let run = || -> zubov::Result<(Vec<u8>, String)> {
        let mut cfg = RunConfig::default();
        cfg.set_seed(13);
        let splits = generate_splits(&cfg.dataset)?;
        let mut bundle = ModelBundle::new(&cfg.model, cfg.seed)?;
        train_loop(&mut bundle, &splits.train, cfg.train, cfg.loss, |_, _| Ok(()))?;
        let rows = evaluate(&bundle, &splits.test, &splits.domain, &cfg.scenarios, &cfg.eval, &cfg.loss)?;
        let csv: String = rows.iter().map(|r| r.csv_row() + "\n").collect();
        Ok((Checkpoint::capture(&cfg, &bundle, cfg.train.iterations).to_bytes(), csv))
    };
    let (a_bytes, a_csv) = run()?;
    let (b_bytes, b_csv) = run()?;
    let pass = a_bytes == b_bytes && a_csv == b_csv;
    Ok((pass, format!("checkpoint {} bytes, metrics {} bytes, identical: {pass}", a_bytes.len(), a_csv.len())))
}

fn main() -> ExitCode {
    // `cargo test --test acceptance -- <substring>` runs matching criteria only.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut suite = Suite { lines: Vec::new(), filter };
    suite.run("analytic Zubov residual", secs(1), analytic_zubov);
    suite.run("sampler on the analytic circle", secs(5), sampler_circle);
    suite.run("IACNN convexity", secs(60), convexity);
    suite.run("gradient integrity", secs(300), gradient_integrity);
    suite.run("separability at N=2, M=2, d=1", secs(60), separability_headline);
    suite.run("separability lower bound grid", secs(120), separability_grid);
    suite.run("1D region recovery", secs(120), recovery_1d);
    suite.run("Van der Pol region alignment", secs(600), vdp_alignment);
    suite.run("determinism", secs(300), determinism);
    moons(&mut suite);

    let failed: Vec<&Line> = suite.lines.iter().filter(|l| !l.pass).collect();
    let total: f64 = suite.lines.iter().map(|l| l.elapsed.as_secs_f64()).sum();
    println!(
        "acceptance: {} passed, {} failed, {total:.0}s",
        suite.lines.len() - failed.len(),
        failed.len()
    );
    for l in &failed {
        println!("  failed: {} ({})", l.name, l.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
