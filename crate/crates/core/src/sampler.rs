//! Boundary sampling on level sets of radially increasing functions.
//!
//! Rays leave an anchor `c` along unit directions `q`. Each ray keeps a
//! cumulative length `s` and a signed step `a`; after every move the step
//! keeps its length while the ray stays on the same side of the level
//! `rho`, and halves with a sign flip once it crosses. The resulting
//! bracket-and-bisect converges for any `W` that increases along the ray.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{AnchorSet, LevelFunction};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;

/// Unit search directions, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    dirs: Tensor,
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return None;
    }
    for x in &mut v {
        *x /= n;
    }
    Some(v)
}

impl DirectionSet {
    /// Normalizes every row; zero rows are rejected.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let normed = rows
            .iter()
            .map(|r| unit(r.clone()).ok_or_else(|| Error::Contract("zero search direction".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dirs: Tensor::from_rows(&normed)?,
        })
    }

    /// `m` directions spread evenly on the unit circle, starting at angle 0.
    pub fn circle(m: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / m as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
        Self::from_rows(&rows)
    }

    pub fn len(&self) -> usize {
        self.dirs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.dirs.cols()
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        self.dirs.row_slice(k)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.dirs
    }
}

/// Directions from anchor `class` toward every other anchor, each followed
/// by `rand_per_pair` perturbed copies `normalize(q + u r)` with `r` a
/// random unit vector and `u ~ U[0, scale_max]`.
pub fn make_directions(anchors: &AnchorSet, class: usize, rand_per_pair: usize, scale_max: f64, seed: u64) -> Result<DirectionSet> {
    let l = anchors.len();
    if l < 2 {
        return Err(Error::Config(format!("directions need at least two anchors, got {l}")));
    }
    if class >= l {
        return Err(Error::Contract(format!("class {class} out of range for {l} anchors")));
    }
    if !(scale_max >= 0.0) {
        return Err(Error::Config(format!("scale_max must be nonnegative, got {scale_max}")));
    }
    let d = anchors.dim();
    let ci = anchors.point(class);
    let mut rng = seeded(derive_seed(seed, class as u64));
    let mut rows = Vec::with_capacity((l - 1) * (1 + rand_per_pair));
    for j in (0..l).filter(|&j| j != class) {
        let diff = anchors.point(j).iter().zip(ci).map(|(a, b)| a - b).collect();
        let q = unit(diff).ok_or(Error::DegenerateDirection { from: class, to: j })?;
        for _ in 0..rand_per_pair {
            let r = loop {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                if let Some(r) = unit(g) {
                    break r;
                }
            };
            let u = rng.random_range(0.0..=scale_max);
            let pert = q.iter().zip(&r).map(|(a, b)| a + u * b).collect();
            // u <= scale_max < 1 keeps the sum away from zero; larger scales
            // can cancel, in which case the unperturbed direction is reused.
            rows.push(unit(pert).unwrap_or_else(|| q.clone()));
        }
        rows.insert(rows.len() - rand_per_pair, q);
    }
    Ok(DirectionSet {
        dirs: Tensor::from_rows(&rows)?,
    })
}

/// How the step factor is derived from the mask and the current step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingRule {
    /// `(|M + sign(a)| + 2) / 4`: keep, or halve on reversal.
    #[default]
    SignOfStep,
    /// `(|M + a| + 2) / 4` with the raw step, as literally written in the
    /// original listing. Only matches [`ScalingRule::SignOfStep`] while `|a| = 1`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub rho: f64,
    /// Convergence tolerance on `W`.
    pub eps: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    pub rule: ScalingRule,
    /// Double the step while a ray has not yet crossed the level, so far
    /// boundaries are bracketed in logarithmically many moves.
    pub expand: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rho: 0.9,
            eps: 1e-4,
            max_iters: 100,
            initial_step: 1.0,
            rule: ScalingRule::SignOfStep,
            expand: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.eps > 0.0) || self.max_iters == 0 || !(self.initial_step > 0.0) {
            return Err(Error::Config(format!("invalid sampler config {self:?}")));
        }
        Ok(())
    }
}

/// One ray's search state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayState {
    pub length: f64,
    pub step: f64,
    pub mask: i8,
    pub reversed: bool,
}

fn mask_of(w: f64, rho: f64, eps: f64) -> i8 {
    if w < rho - eps {
        1
    } else if w > rho + eps {
        -1
    } else {
        0
    }
}

fn signum(a: f64) -> f64 {
    if a < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Step update `a <- |a| * Gamma * M`, optionally doubling before the
/// first reversal.
pub fn update_step(a: f64, mask: i8, rule: ScalingRule, expand_now: bool) -> f64 {
    let m = f64::from(mask);
    let gamma = match rule {
        ScalingRule::SignOfStep => ((m + signum(a)).abs() + 2.0) / 4.0,
        ScalingRule::Literal => ((m + a).abs() + 2.0) / 4.0,
    };
    let next = a.abs() * gamma * m;
    if expand_now && mask == 1 && a > 0.0 {
        2.0 * next
    } else {
        next
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySamples {
    /// Final point on every ray (`m x d`), converged or not.
    pub points: Tensor,
    pub lengths: Vec<f64>,
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    /// Iteration at which each ray converged, or `max_iters`.
    pub iterations: Vec<usize>,
}

impl BoundarySamples {
    /// Rows of `points` whose rays converged, in direction order.
    pub fn converged_points(&self) -> Tensor {
        let d = self.points.cols();
        let mut data = Vec::new();
        for (k, ok) in self.converged.iter().enumerate() {
            if *ok {
                data.extend_from_slice(self.points.row_slice(k));
            }
        }
        let n = data.len() / d.max(1);
        Tensor::matrix(n, d, data).expect("rows copied from a finite tensor")
    }

    pub fn converged_count(&self) -> usize {
        self.converged.iter().filter(|c| **c).count()
    }
}

fn ray_points(c: &[f64], dirs: &DirectionSet, rays: &[usize], lengths: &[f64]) -> Result<Tensor> {
    let d = c.len();
    let mut data = Vec::with_capacity(rays.len() * d);
    for &k in rays {
        let q = dirs.direction(k);
        data.extend(c.iter().zip(q).map(|(ci, qi)| ci + lengths[k] * qi));
    }
    Tensor::matrix(rays.len(), d, data)
}

/// Parallel ray search for `W(c + s q) = rho` along every direction.
///
/// `level` evaluates `W` on a batch of points (one row each); only
/// function values are used. Fails only if no ray converges.
pub fn boundary_sample<F>(mut level: F, c: &[f64], dirs: &DirectionSet, cfg: &SamplerConfig) -> Result<BoundarySamples>
where
    F: FnMut(&Tensor) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if dirs.dim() != c.len() {
        return Err(Error::dim("boundary_sample", &[dirs.dim()], &[c.len()]));
    }
    let m = dirs.len();
    let mut state = vec![
        RayState {
            length: 0.0,
            step: cfg.initial_step,
            mask: 1,
            reversed: false,
        };
        m
    ];
    let mut residuals = vec![f64::INFINITY; m];
    let mut converged = vec![false; m];
    let mut iterations = vec![cfg.max_iters; m];
    let mut active: Vec<usize> = (0..m).collect();
    let mut lengths = vec![0.0; m];

    for iter in 1..=cfg.max_iters {
        if active.is_empty() {
            break;
        }
        for &k in &active {
            state[k].length += state[k].step;
            lengths[k] = state[k].length;
        }
        let pts = ray_points(c, dirs, &active, &lengths)?;
        let w = level(&pts)?;
        if w.len() != active.len() {
            return Err(Error::dim("boundary_sample", &[w.len()], &[active.len()]));
        }
        let mut still = Vec::with_capacity(active.len());
        for (&k, &wk) in active.iter().zip(&w) {
            let st = &mut state[k];
            residuals[k] = (wk - cfg.rho).abs();
            st.mask = mask_of(wk, cfg.rho, cfg.eps);
            if st.mask == 0 {
                converged[k] = true;
                iterations[k] = iter;
                continue;
            }
            let expand_now = cfg.expand && !st.reversed;
            let next = update_step(st.step, st.mask, cfg.rule, expand_now);
            if signum(next) != signum(st.step) {
                st.reversed = true;
            }
            st.step = next;
            still.push(k);
        }
        active = still;
    }

    if !converged.iter().any(|c| *c) {
        let worst = residuals.iter().cloned().fold(0.0, f64::max);
        return Err(Error::SamplerFailure { worst });
    }
    let all: Vec<usize> = (0..m).collect();
    Ok(BoundarySamples {
        points: ray_points(c, dirs, &all, &lengths)?,
        lengths,
        residuals,
        converged,
        iterations,
    })
}

/// [`boundary_sample`] on class `class` of a level function.
pub fn boundary_sample_class<L: LevelFunction + ?Sized>(head: &L, class: usize, dirs: &DirectionSet, cfg: &SamplerConfig) -> Result<BoundarySamples> {
    let c = head.anchor_point(class);
    boundary_sample(|pts| head.level_values(pts, class), &c, dirs, cfg)
}

/// Bisection steps used by [`project_into_proa`]; enough to shrink the
/// segment parameter below `1e-15`.
pub const PROJECTION_STEPS: usize = 52;

/// Moves each row of `points` with `W > rho` back along the segment toward
/// `c` to the level-`rho` crossing, keeping the inner end of the final
/// bracket so that `W <= rho` holds for the result. Rows already inside are
/// returned unchanged.
pub fn project_into_proa<F>(mut level: F, c: &[f64], points: &Tensor, rho: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Vec<f64>>,
{
    if points.cols() != c.len() {
        return Err(Error::dim("project_into_proa", points.shape(), &[1, c.len()]));
    }
    let d = c.len();
    let w0 = level(points)?;
    let outside: Vec<usize> = (0..points.rows()).filter(|&r| w0[r] > rho).collect();
    let mut out = points.clone();
    if outside.is_empty() {
        return Ok(out);
    }
    let mut lo = vec![0.0; outside.len()];
    let mut hi = vec![1.0; outside.len()];
    let at = |r: usize, t: f64, pts: &Tensor| -> Vec<f64> {
        pts.row_slice(r).iter().zip(c).map(|(x, ci)| ci + t * (x - ci)).collect()
    };
    for _ in 0..PROJECTION_STEPS {
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut data = Vec::with_capacity(outside.len() * d);
        for (j, &r) in outside.iter().enumerate() {
            data.extend(at(r, mid[j], points));
        }
        let w = level(&Tensor::matrix(outside.len(), d, data)?)?;
        for j in 0..outside.len() {
            if w[j] <= rho {
                lo[j] = mid[j];
            } else {
                hi[j] = mid[j];
            }
        }
    }
    for (j, &r) in outside.iter().enumerate() {
        let p = at(r, lo[j], points);
        for (k, v) in p.into_iter().enumerate() {
            out.set(r, k, v);
        }
    }
    Ok(out)
}

/// [`project_into_proa`] on class `class` of a level function.
pub fn project_class<L: LevelFunction + ?Sized>(head: &L, class: usize, points: &Tensor, rho: f64) -> Result<Tensor> {
    let c = head.anchor_point(class);
    project_into_proa(|pts| head.level_values(pts, class), &c, points, rho)
}
