//! Statistical checks of the structural guarantees: convex separability of
//! random point sets, alignment of learned regions with a simulation oracle,
//! non-overlap, trajectory containment and convexity of the network.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{containment_rate, predict};
use crate::losses::LossConfig;
use crate::nets::{Iacnn, LevelFunction};
use crate::ode::{dopri5_integrate, flow_to_convergence, Field, SolverConfig};
use crate::rng::{derive_seed, seeded};
use crate::tensor::{softplus, Tensor};
use crate::train::ModelBundle;

/// Distance below which a query counts as inside a hull.
pub const HULL_TOL: f64 = 1e-9;
/// Simulation oracle settings for region labels.
pub const ORACLE_T_MAX: f64 = 200.0;
pub const ORACLE_EPS: f64 = 0.05;
pub const CONVEXITY_TOL: f64 = 1e-9;
pub const OVERLAP_TOL: f64 = 0.01;
pub const CONTAINMENT_MIN: f64 = 0.95;
pub const ALIGNMENT_MIN: f64 = 0.85;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

/// One pass/fail line of a verification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub tag: String,
    pub pass: bool,
    pub statistic: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
}

impl PropositionReport {
    pub fn new(tag: &str, statistic: f64, tolerance: f64, comparison: Comparison) -> Self {
        let pass = match comparison {
            Comparison::AtMost => statistic <= tolerance,
            Comparison::AtLeast => statistic >= tolerance,
        };
        Self {
            tag: tag.to_string(),
            pass,
            statistic,
            tolerance,
            comparison,
        }
    }
}

// ---------------------------------------------------------------------------
// Convex hull membership (Wolfe's minimum-norm point)

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HullQuery {
    pub inside: bool,
    pub distance: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizer of `|sum mu_k p_k|` subject to `sum mu_k = 1` over the affine hull
/// of the selected points, or `None` when they are affinely dependent.
fn affine_minimizer(p: &[Vec<f64>], s: &[usize], scale: f64) -> Option<Vec<f64>> {
    let k = s.len();
    let n = k + 1;
    let mut a = vec![0.0; n * (n + 1)];
    for i in 0..k {
        for j in 0..k {
            a[i * (n + 1) + j] = dot(&p[s[i]], &p[s[j]]);
        }
        a[i * (n + 1) + k] = 1.0;
        a[k * (n + 1) + i] = 1.0;
    }
    a[k * (n + 1) + n] = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x * (n + 1) + col].abs().total_cmp(&a[y * (n + 1) + col].abs()))
            .expect("nonempty range");
        if a[piv * (n + 1) + col].abs() <= 1e-13 * scale.max(1.0) {
            return None;
        }
        if piv != col {
            for j in 0..=n {
                a.swap(piv * (n + 1) + j, col * (n + 1) + j);
            }
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * (n + 1) + col] / a[col * (n + 1) + col];
            if f != 0.0 {
                for j in col..=n {
                    a[r * (n + 1) + j] -= f * a[col * (n + 1) + j];
                }
            }
        }
    }
    Some((0..k).map(|i| a[i * (n + 1) + n] / a[i * (n + 1) + i]).collect())
}

/// Point of minimum Euclidean norm in the convex hull of `p`.
pub fn min_norm_point(p: &[Vec<f64>]) -> Vec<f64> {
    assert!(!p.is_empty(), "min_norm_point needs at least one point");
    let scale = p.iter().map(|v| dot(v, v)).fold(0.0, f64::max);
    let combine = |s: &[usize], lam: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; p[0].len()];
        for (&i, &l) in s.iter().zip(lam) {
            for (xj, pj) in x.iter_mut().zip(&p[i]) {
                *xj += l * pj;
            }
        }
        x
    };
    let first = (0..p.len())
        .min_by(|&a, &b| dot(&p[a], &p[a]).total_cmp(&dot(&p[b], &p[b])))
        .expect("nonempty");
    let mut s = vec![first];
    let mut lam = vec![1.0];
    let mut x = p[first].clone();
    for _ in 0..(50 * p.len() + 100) {
        let xx = dot(&x, &x);
        if xx <= 1e-30 * scale.max(1e-300) {
            break;
        }
        let (j, xpj) = (0..p.len())
            .map(|i| (i, dot(&x, &p[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if xx - xpj <= 1e-12 * scale || s.contains(&j) {
            break;
        }
        s.push(j);
        lam.push(0.0);
        let mut stalled = false;
        for _ in 0..=s.len() {
            let Some(mu) = affine_minimizer(p, &s, scale) else {
                stalled = true;
                break;
            };
            if mu.iter().all(|&m| m > 1e-12) {
                lam = mu;
                break;
            }
            let mut theta = 1.0f64;
            for (l, m) in lam.iter().zip(&mu) {
                if *m <= 1e-12 && l - m > 0.0 {
                    theta = theta.min(l / (l - m));
                }
            }
            for (l, m) in lam.iter_mut().zip(&mu) {
                *l += theta * (m - *l);
            }
            let keep: Vec<bool> = lam.iter().map(|&l| l > 1e-12).collect();
            let mut k = 0;
            s.retain(|_| {
                k += 1;
                keep[k - 1]
            });
            lam.retain(|&l| l > 1e-12);
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
        }
        if stalled {
            break;
        }
        x = combine(&s, &lam);
    }
    x
}

/// Whether `y` lies in the convex hull of the rows of `points`.
pub fn hull_membership(points: &Tensor, y: &[f64], tol: f64) -> Result<HullQuery> {
    if points.rows() == 0 {
        return Err(Error::Contract("hull_membership needs at least one point".into()));
    }
    if points.cols() != y.len() {
        return Err(Error::dim("hull_membership", points.shape(), &[1, y.len()]));
    }
    let shifted: Vec<Vec<f64>> = (0..points.rows())
        .map(|r| points.row_slice(r).iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    let x = min_norm_point(&shifted);
    let distance = dot(&x, &x).sqrt();
    Ok(HullQuery {
        inside: distance <= tol,
        distance,
    })
}

// ---------------------------------------------------------------------------
// Convex separability of random samples

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityTrial {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub trials: usize,
    pub successes: usize,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error of `empirical`.
    pub std_error: f64,
}

/// `(1 - ((N-1)/(N+1))^d)^M`, or 1 when `d >= N + 1`.
pub fn separability_bound(n: usize, m: usize, d: usize) -> f64 {
    if d > n {
        return 1.0;
    }
    let r = (n as f64 - 1.0) / (n as f64 + 1.0);
    (1.0 - r.powi(d as i32)).powi(m as i32)
}

/// Draws `X1` (N points) and `X2` (M points) uniformly in `[-1, 1]^d` and
/// counts trials where no point of `X2` falls in the convex hull of `X1`.
pub fn separability_mc(n: usize, m: usize, d: usize, trials: usize, seed: u64) -> Result<SeparabilityTrial> {
    if trials == 0 || n == 0 || d == 0 {
        return Err(Error::Config("separability_mc needs trials, N and d >= 1".into()));
    }
    let mut successes = 0;
    for t in 0..trials {
        let mut rng = seeded(derive_seed(seed, t as u64));
        let x1: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x1 = Tensor::matrix(n, d, x1)?;
        let mut separated = true;
        for _ in 0..m {
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            // A coordinate outside the bounding box separates cheaply; the hull
            // test settles the rest.
            let outside_box = (0..d).any(|j| {
                let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    let v = x1.get(r, j);
                    (lo.min(v), hi.max(v))
                });
                y[j] < lo || y[j] > hi
            });
            if !outside_box && hull_membership(&x1, &y, HULL_TOL)?.inside {
                separated = false;
                break;
            }
        }
        if separated {
            successes += 1;
        }
    }
    let p = successes as f64 / trials as f64;
    Ok(SeparabilityTrial {
        n,
        m,
        d,
        trials,
        successes,
        empirical: p,
        bound: separability_bound(n, m, d),
        std_error: (p * (1.0 - p) / trials as f64).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// Region comparison against a simulation oracle

/// A regular grid with the same resolution on every axis; cells are ordered
/// with the last coordinate varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub resolution: usize,
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, dim: usize, resolution: usize) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
            resolution,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::Config("grid bounds must be nonempty and of equal length".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(a, b)| !(a < b)) {
            return Err(Error::Config("grid lower bounds must be below upper bounds".into()));
        }
        if self.resolution < 2 {
            return Err(Error::Config("grid resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.resolution.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of grid node `k` along axis `axis`.
    pub fn coordinate(&self, axis: usize, k: usize) -> f64 {
        let step = (self.upper[axis] - self.lower[axis]) / (self.resolution - 1) as f64;
        self.lower[axis] + step * k as f64
    }

    pub fn points(&self) -> Result<Tensor> {
        self.validate()?;
        let d = self.dim();
        let n = self.len();
        let mut data = Vec::with_capacity(n * d);
        for cell in 0..n {
            let mut rem = cell;
            let mut idx = vec![0; d];
            for axis in (0..d).rev() {
                idx[axis] = rem % self.resolution;
                rem /= self.resolution;
            }
            data.extend(idx.iter().enumerate().map(|(axis, &k)| self.coordinate(axis, k)));
        }
        Tensor::matrix(n, d, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaGrid {
    pub spec: GridSpec,
    pub rho: f64,
    /// Anchor each cell flows to under the dynamics, if any.
    pub oracle: Vec<Option<usize>>,
    /// `argmin_i W_i` when that minimum is below `rho`.
    pub learned: Vec<Option<usize>>,
    /// Cells whose simulation failed (divergence or step underflow).
    pub failed_cells: usize,
}

impl RoaGrid {
    /// Intersection over union of the oracle and learned regions of `class`;
    /// 1 when both are empty.
    pub fn iou(&self, class: usize) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (o, l) in self.oracle.iter().zip(&self.learned) {
            let (a, b) = (*o == Some(class), *l == Some(class));
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn disagreement(&self) -> f64 {
        let diff = self.oracle.iter().zip(&self.learned).filter(|(o, l)| o != l).count();
        diff as f64 / self.oracle.len().max(1) as f64
    }

    pub fn classes(&self) -> usize {
        self.oracle
            .iter()
            .chain(&self.learned)
            .flatten()
            .map(|&c| c + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Learned labels: `argmin_i W_i(x)` when below `rho`.
pub fn learned_labels<H: LevelFunction + ?Sized>(head: &H, points: &Tensor, rho: f64) -> Result<Vec<Option<usize>>> {
    let levels: Vec<Vec<f64>> = (0..head.num_classes())
        .map(|k| head.level_values(points, k))
        .collect::<Result<_>>()?;
    Ok((0..points.rows())
        .map(|r| {
            let (best, w) = levels
                .iter()
                .enumerate()
                .map(|(k, lv)| (k, lv[r]))
                .min_by(|a, b| a.1.total_cmp(&b.1))?;
            (w < rho).then_some(best)
        })
        .collect())
}

/// Oracle labels by forward simulation; failed cells are labeled `None` and
/// counted.
pub fn oracle_labels<F: Field + ?Sized>(
    field: &F,
    anchors: &[Vec<f64>],
    points: &Tensor,
    t_max: f64,
    eps_conv: f64,
) -> Result<(Vec<Option<usize>>, usize)> {
    let mut failed = 0;
    let mut out = Vec::with_capacity(points.rows());
    for r in 0..points.rows() {
        match flow_to_convergence(field, points.row_slice(r), anchors, t_max, eps_conv) {
            Ok(label) => out.push(label),
            Err(Error::Divergence { .. } | Error::Stiffness { .. }) => {
                failed += 1;
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, failed))
}

/// Labels every grid cell with the oracle and the learned sublevel sets.
pub fn roa_compare<F: Field + ?Sized, H: LevelFunction + ?Sized>(
    field: &F,
    head: &H,
    grid: &GridSpec,
    rho: f64,
    t_max: f64,
    eps_conv: f64,
) -> Result<RoaGrid> {
    if grid.dim() != head.dim() || field.dim() != head.dim() {
        return Err(Error::dim("roa_compare", &[grid.dim(), field.dim()], &[head.dim()]));
    }
    let points = grid.points()?;
    let anchors: Vec<Vec<f64>> = (0..head.num_classes()).map(|k| head.anchor_point(k)).collect();
    let (oracle, failed_cells) = oracle_labels(field, &anchors, &points, t_max, eps_conv)?;
    let learned = learned_labels(head, &points, rho)?;
    Ok(RoaGrid {
        spec: grid.clone(),
        rho,
        oracle,
        learned,
        failed_cells,
    })
}

/// Mean per-class IoU of a learned bundle against its own dynamics.
pub fn alignment_check(bundle: &ModelBundle, grid: &GridSpec) -> Result<(PropositionReport, RoaGrid)> {
    let roa = roa_compare(&bundle.dynamics, &bundle.head, grid, bundle.head.rho, ORACLE_T_MAX, ORACLE_EPS)?;
    let l = bundle.num_classes();
    let mean = (0..l).map(|k| roa.iou(k)).sum::<f64>() / l as f64;
    Ok((PropositionReport::new("alignment", mean, ALIGNMENT_MIN, Comparison::AtLeast), roa))
}

// ---------------------------------------------------------------------------
// Non-overlap, containment, convexity

/// Fraction of grid cells inside the `rho`-sublevel sets of two or more
/// classes.
pub fn overlap_fraction<H: LevelFunction + ?Sized>(head: &H, grid: &GridSpec, rho: f64) -> Result<f64> {
    let points = grid.points()?;
    let levels: Vec<Vec<f64>> = (0..head.num_classes())
        .map(|k| head.level_values(&points, k))
        .collect::<Result<_>>()?;
    let shared = (0..points.rows())
        .filter(|&r| levels.iter().filter(|lv| lv[r] < rho).count() >= 2)
        .count();
    Ok(shared as f64 / points.rows() as f64)
}

pub fn overlap_check<H: LevelFunction + ?Sized>(head: &H, grid: &GridSpec, rho: f64) -> Result<PropositionReport> {
    let frac = overlap_fraction(head, grid, rho)?;
    Ok(PropositionReport::new("non-overlap", frac, OVERLAP_TOL, Comparison::AtMost))
}

/// Containment over a test set, sampling each trajectory at `4 * gamma_t`
/// evenly spaced times.
pub fn containment_check(
    bundle: &ModelBundle,
    test: &Dataset,
    solver: &SolverConfig,
    loss: &LossConfig,
    gamma_t: usize,
) -> Result<PropositionReport> {
    let pred = predict(bundle, &test.x, solver, loss, 4 * gamma_t.max(1))?;
    let (rate, _) = containment_rate(bundle, &pred, &test.y)?;
    Ok(PropositionReport::new("containment", rate, CONTAINMENT_MIN, Comparison::AtLeast))
}

/// Containment for a known field: among starts whose final state is closest
/// (in `W`) to their label's anchor and inside its `rho`-sublevel set, the
/// fraction that stay inside at all `samples` times. Returns `(rate, eligible)`.
pub fn field_containment<F: Field + ?Sized, H: LevelFunction + ?Sized>(
    field: &F,
    head: &H,
    starts: &Tensor,
    labels: &[usize],
    rho: f64,
    solver: &SolverConfig,
    samples: usize,
) -> Result<(f64, usize)> {
    let horizon = solver.horizon();
    let times: Vec<f64> = (1..=samples.max(1)).map(|k| horizon * k as f64 / samples.max(1) as f64).collect();
    let (mut eligible, mut contained) = (0, 0);
    for (r, &label) in labels.iter().enumerate() {
        let traj = dopri5_integrate(field, starts.row_slice(r), solver, &times)?;
        let states = Tensor::from_rows(&traj.states)?;
        let levels: Vec<Vec<f64>> = (0..head.num_classes())
            .map(|k| head.level_values(&states, k))
            .collect::<Result<_>>()?;
        let last = states.rows() - 1;
        let best = (0..levels.len())
            .min_by(|&a, &b| levels[a][last].total_cmp(&levels[b][last]))
            .expect("at least one class");
        if best != label || levels[label][last] > rho {
            continue;
        }
        eligible += 1;
        if levels[label].iter().all(|&w| w <= rho) {
            contained += 1;
        }
    }
    let rate = if eligible == 0 { 1.0 } else { contained as f64 / eligible as f64 };
    Ok((rate, eligible))
}

/// Plain-loop `g(x, c)`. It skips the nonnegativity contract on purpose, so
/// the suite can see what a violated constraint does to convexity.
pub fn iacnn_direct(net: &Iacnn, x: &[f64], c: &[f64]) -> f64 {
    fn softmax(v: &mut [f64]) {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for e in v.iter_mut() {
            *e = (*e - m).exp();
            s += *e;
        }
        v.iter_mut().for_each(|e| *e /= s);
    }
    fn affine(u: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
        let mut out: Vec<f64> = match b {
            Some(b) => b.data().to_vec(),
            None => vec![0.0; w.cols()],
        };
        for (i, ui) in u.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += ui * w.get(i, j);
            }
        }
        out
    }
    let mut u = c.to_vec();
    let mut z = x.to_vec();
    for l in &net.layers {
        let mut zg = affine(&u, &l.z_gate_weight, Some(&l.z_gate_bias));
        softmax(&mut zg);
        let mut xg = affine(&u, &l.x_gate_weight, Some(&l.x_gate_bias));
        softmax(&mut xg);
        let gz: Vec<f64> = z.iter().zip(&zg).map(|(a, b)| a * b).collect();
        let gx: Vec<f64> = x.iter().zip(&xg).map(|(a, b)| a * b).collect();
        let pre_z = affine(&gz, &l.z_weight, None);
        let pre_x = affine(&gx, &l.x_weight, None);
        let ctx = affine(&u, &l.u_weight, Some(&l.bias));
        z = (0..ctx.len()).map(|j| softplus(pre_z[j] + pre_x[j] + ctx[j])).collect();
        if let Some((w, b)) = &l.context {
            u = affine(&u, w, Some(b)).into_iter().map(f64::tanh).collect();
        }
    }
    z[0]
}

/// Largest midpoint-convexity violation `g((x+x')/2) - (g(x)+g(x'))/2` over
/// random triples with `x, x'` in `[-3, 3]^d` and `c` in `[-1, 1]^d`.
pub fn max_convexity_violation(net: &Iacnn, samples: usize, seed: u64) -> f64 {
    let d = net.input_dim();
    let mut rng = seeded(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let gap = iacnn_direct(net, &mid, &c) - 0.5 * (iacnn_direct(net, &x, &c) + iacnn_direct(net, &y, &c));
        worst = worst.max(gap);
    }
    worst
}

pub fn convexity_suite(net: &Iacnn, samples: usize, seed: u64) -> PropositionReport {
    let worst = max_convexity_violation(net, samples, seed).max(0.0);
    PropositionReport::new("convexity", worst, CONVEXITY_TOL, Comparison::AtMost)
}

/// Separability reports over a grid of `(N, M, d)` cases: each passes when the
/// empirical probability is at least the bound minus three standard errors.
pub fn separability_suite(cases: &[(usize, usize, usize)], trials: usize, seed: u64) -> Result<Vec<(SeparabilityTrial, PropositionReport)>> {
    cases
        .iter()
        .enumerate()
        .map(|(k, &(n, m, d))| {
            let t = separability_mc(n, m, d, trials, derive_seed(seed, k as u64))?;
            let margin = t.empirical - t.bound + 3.0 * t.std_error;
            let tag = format!("separability N={n} M={m} d={d}");
            let report = PropositionReport::new(&tag, margin, 0.0, Comparison::AtLeast);
            Ok((t, report))
        })
        .collect()
}

/// The default `(N, M, d)` grid, including two cases with `d >= N + 1`.
pub const SEPARABILITY_CASES: [(usize, usize, usize); 6] = [(2, 2, 1), (5, 3, 2), (10, 5, 2), (5, 5, 8), (3, 4, 4), (8, 8, 3)];
