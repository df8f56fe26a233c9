//! Browser bindings for three interactive demos: the parallel ray sampler
//! on a random convex potential, the Van der Pol attraction region, and
//! the convex-separability Monte Carlo.

use rand::Rng as _;
use wasm_bindgen::prelude::*;
use zubov::nets::{AnchorSet, Iacnn, IacnnShape, LevelFunction, LyapunovHead};
use zubov::ode::{flow_to_convergence, KnownField};
use zubov::rng::{derive_seed, seeded};
use zubov::sampler::{boundary_sample_class, DirectionSet, SamplerConfig};
use zubov::tensor::Tensor;
use zubov::verify::{separability_mc, GridSpec};

fn js_err(e: zubov::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A Lyapunov head on one anchor at the origin whose IACNN weights are drawn
/// at random and projected, so its level sets are convex but not round.
pub fn random_head(seed: u64) -> zubov::Result<LyapunovHead> {
    let shape = IacnnShape {
        input_dim: 2,
        z_widths: vec![16, 16, 1],
        u_widths: vec![8, 8, 0],
    };
    let mut net = Iacnn::new(shape, &mut seeded(seed))?;
    let mut rng = seeded(derive_seed(seed, 1));
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    net.project_nonneg();
    LyapunovHead::new(net, AnchorSet::custom(Tensor::zeros(1, 2))?, 0.5, 0.1, 0.85, 0.9)
}

/// Level values `W` of the random head on a `resolution^2` grid over
/// `[-extent, extent]^2`, row-major with `y` fastest.
#[wasm_bindgen]
pub fn potential_grid(seed: u64, extent: f64, resolution: usize) -> Result<Vec<f64>, JsError> {
    let head = random_head(seed).map_err(js_err)?;
    let points = GridSpec::square(-extent, extent, 2, resolution).points().map_err(js_err)?;
    head.level_values(&points, 0).map_err(js_err)
}

/// Runs the ray sampler on the random head. Returns `[x, y, iterations,
/// converged]` per direction, flattened.
#[wasm_bindgen]
pub fn sample_boundary(seed: u64, rho: f64, directions: usize) -> Result<Vec<f64>, JsError> {
    let head = random_head(seed).map_err(js_err)?;
    let cfg = SamplerConfig {
        rho,
        ..SamplerConfig::default()
    };
    cfg.validate().map_err(js_err)?;
    let dirs = DirectionSet::circle(directions).map_err(js_err)?;
    let out = boundary_sample_class(&head, 0, &dirs, &cfg).map_err(js_err)?;
    let mut flat = Vec::with_capacity(4 * directions);
    for k in 0..directions {
        let p = out.points.row_slice(k);
        flat.extend([p[0], p[1], out.iterations[k] as f64, f64::from(u8::from(out.converged[k]))]);
    }
    Ok(flat)
}

/// Simulation labels of the time-reversed Van der Pol field on a
/// `resolution^2` grid over `[-extent, extent]^2`: 1 where the flow reaches
/// the origin within `t_max`, else 0.
#[wasm_bindgen]
pub fn vdp_region(mu: f64, extent: f64, resolution: usize, t_max: f64) -> Result<Vec<u8>, JsError> {
    let field = KnownField::ReversedVanDerPol { mu };
    let points = GridSpec::square(-extent, extent, 2, resolution).points().map_err(js_err)?;
    let origin = vec![vec![0.0, 0.0]];
    let mut out = Vec::with_capacity(points.rows());
    for r in 0..points.rows() {
        let label = match flow_to_convergence(&field, points.row_slice(r), &origin, t_max, 0.05) {
            Ok(l) => l.is_some(),
            Err(_) => false,
        };
        out.push(u8::from(label));
    }
    Ok(out)
}

/// `[empirical, bound, std_error]` for random clouds of `n` and `m` points
/// in `[-1, 1]^d`.
#[wasm_bindgen]
pub fn separability(n: usize, m: usize, d: usize, trials: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let t = separability_mc(n, m, d, trials, seed).map_err(js_err)?;
    Ok(vec![t.empirical, t.bound, t.std_error])
}
