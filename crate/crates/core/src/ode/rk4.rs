use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

use super::field::TapeField;

/// States above this norm abort the integration.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Trajectory whose states are tape nodes (`B x d` each).
#[derive(Clone, Debug)]
pub struct TapeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Var>,
}

impl TapeTrajectory {
    pub fn last(&self) -> Var {
        *self.states.last().expect("trajectory holds at least the initial state")
    }
}

pub(crate) fn check_divergence(data: &[f64], cols: usize, step: usize) -> Result<()> {
    for row in data.chunks(cols.max(1)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step, norm });
        }
    }
    Ok(())
}

/// Classic four-stage Runge–Kutta over `[0, horizon]` with every stage on
/// the tape. Returns the states at `samples + 1` equally spaced times
/// (including `t = 0`); `steps` must be a multiple of `samples`.
pub fn rk4_integrate<F: TapeField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    h0: Var,
    horizon: f64,
    steps: usize,
    samples: usize,
) -> Result<TapeTrajectory> {
    if steps == 0 || samples == 0 || steps % samples != 0 {
        return Err(Error::Config(format!(
            "rk4 needs steps ({steps}) to be a positive multiple of samples ({samples})"
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let dt = horizon / steps as f64;
    let per_sample = steps / samples;
    let cols = tape.shape(h0).1;
    let mut times = vec![0.0];
    let mut states = vec![h0];
    let mut h = h0;
    for step in 1..=steps {
        let k1 = field.apply(tape, h)?;
        let s = tape.scale(k1, 0.5 * dt)?;
        let p = tape.add(h, s)?;
        let k2 = field.apply(tape, p)?;
        let s = tape.scale(k2, 0.5 * dt)?;
        let p = tape.add(h, s)?;
        let k3 = field.apply(tape, p)?;
        let s = tape.scale(k3, dt)?;
        let p = tape.add(h, s)?;
        let k4 = field.apply(tape, p)?;
        // h + dt/6 (k1 + 2 k2 + 2 k3 + k4)
        let mid = tape.add(k2, k3)?;
        let mid = tape.scale(mid, 2.0)?;
        let ends = tape.add(k1, k4)?;
        let incr = tape.add(mid, ends)?;
        let incr = tape.scale(incr, dt / 6.0)?;
        h = tape.add(h, incr)?;
        check_divergence(tape.value(h).data(), cols, step)?;
        if step % per_sample == 0 {
            times.push(if step == steps { horizon } else { step as f64 * dt });
            states.push(h);
        }
    }
    Ok(TapeTrajectory { times, states })
}
