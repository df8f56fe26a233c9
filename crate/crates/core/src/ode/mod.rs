//! Time integration of `h' = f(h)`.
//!
//! Training differentiates through fixed-step RK4 recorded on a [`Tape`];
//! evaluation and certification use adaptive Dormand–Prince on plain
//! `f64` states.
//!
//! [`Tape`]: crate::tensor::Tape

mod dopri5;
mod field;
mod rk4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dopri5::{dopri5_drive, Step};
pub use field::{eval_batch, Field, KnownField, TapeField};
pub use rk4::{rk4_integrate, TapeTrajectory, DIVERGENCE_NORM};

/// Tolerance used by [`flow_to_convergence`]; tighter than evaluation so
/// that the oracle is not the weakest link.
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SolverConfig {
    Rk4Fixed { steps: usize, horizon: f64 },
    Dopri5Adaptive { abs_tol: f64, rel_tol: f64, horizon: f64 },
}

impl SolverConfig {
    /// Fixed-step training solver: 40 steps over `T = 10`.
    pub fn training() -> Self {
        SolverConfig::Rk4Fixed {
            steps: 40,
            horizon: 10.0,
        }
    }

    /// Adaptive evaluation solver at tolerance `1e-3` over `T = 10`.
    pub fn evaluation() -> Self {
        SolverConfig::Dopri5Adaptive {
            abs_tol: 1e-3,
            rel_tol: 1e-3,
            horizon: 10.0,
        }
    }

    pub fn horizon(&self) -> f64 {
        match *self {
            SolverConfig::Rk4Fixed { horizon, .. } | SolverConfig::Dopri5Adaptive { horizon, .. } => horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SolverConfig::Rk4Fixed { steps, horizon } => steps >= 1 && horizon > 0.0,
            SolverConfig::Dopri5Adaptive {
                abs_tol,
                rel_tol,
                horizon,
            } => abs_tol > 0.0 && rel_tol > 0.0 && horizon > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver config {self:?}")))
        }
    }
}

/// Sampled solution of an initial value problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Adaptive integration with dense output at `times` (ascending, within
/// `[0, T]`). An empty `times` samples only `0` and `T`.
pub fn dopri5_integrate<F: Field + ?Sized>(field: &F, h0: &[f64], cfg: &SolverConfig, times: &[f64]) -> Result<Trajectory> {
    cfg.validate()?;
    let SolverConfig::Dopri5Adaptive {
        abs_tol,
        rel_tol,
        horizon,
    } = *cfg
    else {
        return Err(Error::Config("dopri5_integrate needs an adaptive solver config".into()));
    };
    let grid: Vec<f64> = if times.is_empty() { vec![0.0, horizon] } else { times.to_vec() };
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid[0] < 0.0 || *grid.last().unwrap() > horizon {
        return Err(Error::Config(format!("sample times must ascend within [0, {horizon}]")));
    }
    let mut states = Vec::with_capacity(grid.len());
    let mut next = 0;
    while next < grid.len() && grid[next] == 0.0 {
        states.push(h0.to_vec());
        next += 1;
    }
    let (_, y_end) = dopri5_drive(field, h0, horizon, abs_tol, rel_tol, |step| {
        while next < grid.len() && grid[next] <= step.t1 {
            let t = grid[next];
            states.push(if t == step.t1 { step.y1.to_vec() } else { step.interpolate(t) });
            next += 1;
        }
        true
    })?;
    // Round-off can leave the final sample one ulp past the last step.
    while states.len() < grid.len() {
        states.push(y_end.clone());
    }
    Ok(Trajectory { times: grid, states })
}

/// Brute-force basin oracle: integrates from `h0` until the state is
/// within `eps_conv` of some anchor row (returns its index) or `t_max`
/// elapses (returns `None`). Escape to infinity also yields `None`.
pub fn flow_to_convergence<F: Field + ?Sized>(
    field: &F,
    h0: &[f64],
    anchors: &[Vec<f64>],
    t_max: f64,
    eps_conv: f64,
) -> Result<Option<usize>> {
    if !(t_max > 0.0) {
        return Err(Error::Config(format!("t_max must be positive, got {t_max}")));
    }
    let hit = |y: &[f64]| {
        anchors.iter().position(|c| {
            let d2: f64 = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() <= eps_conv
        })
    };
    if let Some(i) = hit(h0) {
        return Ok(Some(i));
    }
    let mut found = None;
    let run = dopri5_drive(field, h0, t_max, ORACLE_TOL, ORACLE_TOL, |step| {
        found = hit(step.y1);
        found.is_none()
    });
    match run {
        Ok(_) => Ok(found),
        Err(Error::Divergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotation() -> impl Field {
        struct Rot;
        impl Field for Rot {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, h: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![-h[1], h[0]])
            }
        }
        Rot
    }

    fn adaptive(tol: f64, horizon: f64) -> SolverConfig {
        SolverConfig::Dopri5Adaptive {
            abs_tol: tol,
            rel_tol: tol,
            horizon,
        }
    }

    #[test]
    fn decay_within_tolerance() {
        let f = KnownField::LinearDecay { dim: 1 };
        let tr = dopri5_integrate(&f, &[1.0], &adaptive(1e-3, 1.0), &[]).unwrap();
        assert!((tr.last()[0] - (-1f64).exp()).abs() <= 1e-3);
    }

    #[test]
    fn tighter_tolerance_is_more_accurate() {
        let f = KnownField::LinearDecay { dim: 1 };
        let exact = (-1f64).exp();
        let loose = (dopri5_integrate(&f, &[1.0], &adaptive(1e-3, 1.0), &[]).unwrap().last()[0] - exact).abs();
        let tight = (dopri5_integrate(&f, &[1.0], &adaptive(1e-6, 1.0), &[]).unwrap().last()[0] - exact).abs();
        assert!(loose >= 10.0 * tight, "loose {loose:e} tight {tight:e}");
    }

    #[test]
    fn rotation_preserves_norm() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let tr = dopri5_integrate(&rotation(), &[1.0, 0.0], &adaptive(1e-6, 10.0), &times).unwrap();
        assert_eq!(tr.times, times);
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let n = (s[0] * s[0] + s[1] * s[1]).sqrt();
            assert!((n - 1.0).abs() < 1e-4, "t={t} norm={n}");
            assert!((s[0] - t.cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn cubic_basin() {
        let f = KnownField::Cubic;
        let origin = vec![vec![0.0]];
        assert_eq!(flow_to_convergence(&f, &[0.5], &origin, 50.0, 1e-3).unwrap(), Some(0));
        assert_eq!(flow_to_convergence(&f, &[-0.9], &origin, 50.0, 1e-3).unwrap(), Some(0));
        assert_eq!(flow_to_convergence(&f, &[1.5], &origin, 50.0, 1e-3).unwrap(), None);
        assert_eq!(flow_to_convergence(&f, &[0.0], &origin, 50.0, 1e-3).unwrap(), Some(0));
    }

    #[test]
    fn equilibrium_is_immediate() {
        let f = KnownField::ReversedVanDerPol { mu: 1.0 };
        let anchors = vec![vec![5.0, 5.0], vec![0.0, 0.0]];
        assert_eq!(flow_to_convergence(&f, &[0.0, 0.0], &anchors, 1.0, 1e-9).unwrap(), Some(1));
    }

    #[test]
    fn vdp_basin_inside_and_outside() {
        let f = KnownField::ReversedVanDerPol { mu: 1.0 };
        let origin = vec![vec![0.0, 0.0]];
        assert_eq!(flow_to_convergence(&f, &[1.0, 1.0], &origin, 200.0, 1e-2).unwrap(), Some(0));
        assert_eq!(flow_to_convergence(&f, &[2.5, 2.5], &origin, 200.0, 1e-2).unwrap(), None);
    }

    #[test]
    fn config_validation_and_serde() {
        assert!(SolverConfig::training().validate().is_ok());
        assert!(adaptive(0.0, 1.0).validate().is_err());
        let json = serde_json::to_string(&SolverConfig::evaluation()).unwrap();
        assert!(json.contains("dopri5-adaptive"));
        let back: SolverConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, SolverConfig::evaluation());
    }
}
