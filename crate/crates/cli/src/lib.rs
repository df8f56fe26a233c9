//! Command-line front end: training, evaluation, certification, proposition
//! checks, boundary sampling and SVG plots.
//!
//! Exit status is 0 on success, 1 on a runtime failure or a failed check,
//! and 2 on a usage error.

pub mod svg;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use zubov::checkpoint::Checkpoint;
use zubov::config::RunConfig;
use zubov::data::{generate_splits, DatasetKind};
use zubov::eval::{evaluate, predict, MetricsRow};
use zubov::nets::{Iacnn, IacnnShape};
use zubov::ode::KnownField;
use zubov::rng::{derive_seed, seeded};
use zubov::sampler::{boundary_sample_class, make_directions, DirectionSet, SamplerConfig};
use zubov::tensor::Tensor;
use zubov::train::{metrics_csv, train_loop, ModelBundle};
use zubov::verify::{
    containment_check, convexity_suite, overlap_check, roa_compare, separability_suite, Comparison,
    PropositionReport, RoaGrid, ALIGNMENT_MIN, ORACLE_EPS, ORACLE_T_MAX, SEPARABILITY_CASES,
};
use zubov::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "zubov", version, about = "Neural ODE classifiers with convex Zubov Lyapunov certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.json and metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on clean and corrupted test data; writes eval.csv.
    Eval(ModelArgs),
    /// Compare learned regions with a simulation oracle; writes reports.json and roa.json.
    Certify(ModelArgs),
    /// Run the proposition suites; writes reports.json.
    Verify(VerifyArgs),
    /// Sample every class's rho level set along rays; writes boundary.csv.
    SampleBoundary(SampleArgs),
    /// Render regions, level sets and trajectories; writes regions.svg.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory (defaults to the config's output, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid resolution per axis for region checks and plots.
    #[arg(long)]
    grid: Option<usize>,
    /// Sublevel threshold, overriding the model's.
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Checkpoint whose network and regions are checked; without it only the
    /// model-free suites run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo trials per separability case.
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directions per class (evenly spaced on the circle in 2D).
    #[arg(long, default_value_t = 64)]
    directions: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test trajectories to draw.
    #[arg(long, default_value_t = 24)]
    trajectories: usize,
    /// Overlay the simulation-oracle region boundaries (dashed).
    #[arg(long)]
    oracle: bool,
    #[command(flatten)]
    common: Common,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Certify(a) => certify(a),
        Command::Verify(a) => verify(a),
        Command::SampleBoundary(a) => sample_boundary(a),
        Command::Plot(a) => plot(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s.into_bytes()
}

struct Loaded {
    config: RunConfig,
    bundle: ModelBundle,
}

fn load(path: &Path, common: &Common) -> Result<Loaded> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let mut bundle = ckpt.restore()?;
    let mut config = ckpt.config;
    if let Some(rho) = common.rho {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("--rho must lie in (0, 1), got {rho}")));
        }
        bundle.head.rho = rho;
        config.model.rho = rho;
    }
    if let Some(res) = common.grid {
        config.grid.resolution = res;
        config.grid.validate()?;
    }
    Ok(Loaded { config, bundle })
}

fn train(a: TrainArgs) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_json(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    if let Some(rho) = a.common.rho {
        cfg.model.rho = rho;
    }
    if let Some(res) = a.common.grid {
        cfg.grid.resolution = res;
    }
    cfg.validate()?;
    let dir = out_dir(&a.common, &cfg);
    let splits = generate_splits(&cfg.dataset)?;
    let mut bundle = ModelBundle::new(&cfg.model, cfg.seed)?;
    let every = (cfg.train.iterations / 20).max(1);
    let log = train_loop(&mut bundle, &splits.train, cfg.train, cfg.loss, |m, _| {
        if m.step % every == 0 || m.step + 1 == cfg.train.iterations {
            println!(
                "step {:>5}  loss {:.4}  acc(W) {:.3}  acc(FC) {:.3}",
                m.step, m.loss_total, m.acc_w_head, m.acc_fc_head
            );
        }
        Ok(())
    })?;
    let ckpt = Checkpoint::capture(&cfg, &bundle, cfg.train.iterations);
    write_file(&dir, "checkpoint.json", &ckpt.to_bytes())?;
    write_file(&dir, "metrics.csv", metrics_csv(&log).as_bytes())?;
    Ok(true)
}

fn eval_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(MetricsRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn eval(a: ModelArgs) -> Result<bool> {
    let Loaded { config, bundle } = load(&a.checkpoint, &a.common)?;
    let splits = generate_splits(&config.dataset)?;
    let rows = evaluate(&bundle, &splits.test, &splits.domain, &config.scenarios, &config.eval, &config.loss)?;
    for r in &rows {
        println!("{:<14} acc {:.4}  containment {:.4}", r.scenario, r.accuracy, r.containment);
    }
    write_file(&out_dir(&a.common, &config), "eval.csv", eval_csv(&rows).as_bytes())?;
    Ok(true)
}

/// The generating field of a system dataset, when the state is the raw input.
fn known_field(cfg: &RunConfig) -> Option<KnownField> {
    if cfg.model.lift_hidden.is_some() {
        return None;
    }
    match cfg.dataset.kind {
        DatasetKind::System1d => Some(KnownField::Cubic),
        DatasetKind::SystemVdp => Some(KnownField::ReversedVanDerPol { mu: 1.0 }),
        _ => None,
    }
}

fn oracle_grid(loaded: &Loaded) -> Result<RoaGrid> {
    let Loaded { config, bundle } = loaded;
    let rho = bundle.head.rho;
    match known_field(config) {
        Some(f) => roa_compare(&f, &bundle.head, &config.grid, rho, ORACLE_T_MAX, ORACLE_EPS),
        None => roa_compare(&bundle.dynamics, &bundle.head, &config.grid, rho, ORACLE_T_MAX, ORACLE_EPS),
    }
}

fn print_reports(reports: &[PropositionReport]) {
    for r in reports {
        let op = match r.comparison {
            Comparison::AtMost => "<=",
            Comparison::AtLeast => ">=",
        };
        let tag = if r.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:<24} {:.6} {op} {}", r.tag, r.statistic, r.tolerance);
    }
}

fn certify(a: ModelArgs) -> Result<bool> {
    let loaded = load(&a.checkpoint, &a.common)?;
    let roa = oracle_grid(&loaded)?;
    let classes = loaded.bundle.num_classes();
    let ious: Vec<f64> = (0..classes).map(|k| roa.iou(k)).collect();
    let mean = ious.iter().sum::<f64>() / classes as f64;
    let mut reports = vec![PropositionReport::new("alignment", mean, ALIGNMENT_MIN, Comparison::AtLeast)];
    for (k, iou) in ious.iter().enumerate() {
        println!("class {k}: IoU {iou:.4}");
    }
    reports.push(overlap_check(&loaded.bundle.head, &loaded.config.grid, loaded.bundle.head.rho)?);
    print_reports(&reports);
    let dir = out_dir(&a.common, &loaded.config);
    write_file(&dir, "roa.json", &to_json(&roa))?;
    write_file(&dir, "reports.json", &to_json(&reports))?;
    Ok(reports.iter().all(|r| r.pass))
}

/// Random projected networks stand in when no checkpoint is given.
fn random_projected_iacnn(d: usize, seed: u64) -> Result<Iacnn> {
    use rand::Rng as _;
    let mut net = Iacnn::new(IacnnShape::desk(d), &mut seeded(seed))?;
    let mut rng = seeded(derive_seed(seed, 1));
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    net.project_nonneg();
    Ok(net)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let mut reports = Vec::new();
    for (trial, mut report) in separability_suite(&SEPARABILITY_CASES, a.trials, a.seed)? {
        report.tag = format!("separability N={} M={} d={}", trial.n, trial.m, trial.d);
        reports.push(report);
    }
    let dir;
    match &a.checkpoint {
        Some(path) => {
            let loaded = load(path, &a.common)?;
            let Loaded { config, bundle } = &loaded;
            reports.push(convexity_suite(&bundle.head.iacnn, 10_000, a.seed));
            reports.push(overlap_check(&bundle.head, &config.grid, bundle.head.rho)?);
            let splits = generate_splits(&config.dataset)?;
            reports.push(containment_check(
                bundle,
                &splits.test,
                &config.eval.solver,
                &config.loss,
                config.train.time_samples,
            )?);
            let roa = oracle_grid(&loaded)?;
            let l = bundle.num_classes();
            let mean = (0..l).map(|k| roa.iou(k)).sum::<f64>() / l as f64;
            reports.push(PropositionReport::new("alignment", mean, ALIGNMENT_MIN, Comparison::AtLeast));
            dir = out_dir(&a.common, config);
        }
        None => {
            for d in [1, 2, 3] {
                let mut r = convexity_suite(&random_projected_iacnn(d, derive_seed(a.seed, d as u64))?, 10_000, a.seed);
                r.tag = format!("convexity d={d}");
                reports.push(r);
            }
            dir = a.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
        }
    }
    print_reports(&reports);
    write_file(&dir, "reports.json", &to_json(&reports))?;
    Ok(reports.iter().all(|r| r.pass))
}

fn sample_boundary(a: SampleArgs) -> Result<bool> {
    let Loaded { config, bundle } = load(&a.checkpoint, &a.common)?;
    let d = bundle.state_dim();
    let sampler = SamplerConfig {
        rho: bundle.head.rho,
        ..config.train.sampler
    };
    let mut csv = String::from("class,direction,converged,iterations,residual");
    for j in 0..d {
        csv.push_str(&format!(",h{j}"));
    }
    csv.push('\n');
    for class in 0..bundle.num_classes() {
        let dirs = if d == 2 {
            DirectionSet::circle(a.directions)?
        } else {
            make_directions(
                &bundle.head.anchors,
                class,
                config.train.directions_per_pair,
                config.train.direction_scale,
                derive_seed(config.seed, 2),
            )?
        };
        let out = boundary_sample_class(&bundle.head, class, &dirs, &sampler)?;
        println!("class {class}: {}/{} rays converged", out.converged_count(), dirs.len());
        for k in 0..dirs.len() {
            csv.push_str(&format!(
                "{class},{k},{},{},{}",
                out.converged[k], out.iterations[k], out.residuals[k]
            ));
            for v in out.points.row_slice(k) {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
    }
    write_file(&out_dir(&a.common, &config), "boundary.csv", csv.as_bytes())?;
    Ok(true)
}

fn plot(a: PlotArgs) -> Result<bool> {
    let loaded = load(&a.checkpoint, &a.common)?;
    let Loaded { config, bundle } = &loaded;
    let mut scene = svg::Scene::from_head(&bundle.head, &config.grid, bundle.head.rho)?;
    if a.oracle {
        scene.oracle = Some(oracle_grid(&loaded)?.oracle);
    }
    if a.trajectories > 0 {
        let splits = generate_splits(&config.dataset)?;
        let n = a.trajectories.min(splits.test.len());
        let rows: Vec<Vec<f64>> = (0..n).map(|r| splits.test.x.row_slice(r).to_vec()).collect();
        let x = Tensor::from_rows(&rows)?;
        let pred = predict(bundle, &x, &config.eval.solver, &config.loss, 40)?;
        for (r, row) in rows.iter().enumerate() {
            let h0 = bundle.lift_point(row)?;
            let mut line = vec![[h0[0], h0[1]]];
            line.extend(pred.samples.iter().map(|s| [s.get(r, 0), s.get(r, 1)]));
            scene.trajectories.push(line);
        }
    }
    let svg = svg::render(&scene)?;
    write_file(&out_dir(&a.common, config), "regions.svg", svg.as_bytes())?;
    Ok(true)
}
