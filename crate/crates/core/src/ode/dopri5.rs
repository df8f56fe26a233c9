use crate::error::{Error, Result};

use super::field::Field;
use super::rk4::DIVERGENCE_NORM;

// Dormand–Prince 5(4) tableau; the fields are autonomous so the nodes
// c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Fifth-order minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI controller (Hairer, Norsett & Wanner, II.4).
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 1_000_000;
const ESCAPE_NORM: f64 = 1e3;

/// An accepted step, with enough data for cubic Hermite dense output.
#[derive(Clone, Debug)]
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

impl Step<'_> {
    /// Cubic Hermite interpolant at `t` in `[t0, t1]`.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.y1.to_vec();
        }
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.y0.len())
            .map(|k| h00 * self.y0[k] + h10 * h * self.f0[k] + h01 * self.y1[k] + h11 * h * self.f1[k])
            .collect()
    }
}

fn axpy(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for k in 0..y.len() {
        let mut acc = 0.0;
        for (c, v) in terms {
            acc += c * v[k];
        }
        out[k] = y[k] + h * acc;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rms_scaled(v: &[f64], y: &[f64], atol: f64, rtol: f64) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter()
        .zip(y)
        .map(|(e, s)| {
            let sc = atol + rtol * s.abs();
            (e / sc) * (e / sc)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Starting step from the two-evaluation heuristic of Hairer et al.
fn initial_step<F: Field + ?Sized>(field: &F, y0: &[f64], f0: &[f64], atol: f64, rtol: f64, span: f64) -> Result<f64> {
    let d0 = rms_scaled(y0, y0, atol, rtol);
    let d1 = rms_scaled(f0, y0, atol, rtol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let f1 = field.eval(&y1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y0, atol, rtol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Adaptive Dormand–Prince integration of `y' = f(y)` from `t = 0` to
/// `t_end`, calling `on_step` after every accepted step. The callback
/// returns `false` to stop early. Returns the final time and state.
pub fn dopri5_drive<F, C>(
    field: &F,
    y0: &[f64],
    t_end: f64,
    atol: f64,
    rtol: f64,
    mut on_step: C,
) -> Result<(f64, Vec<f64>)>
where
    F: Field + ?Sized,
    C: FnMut(&Step<'_>) -> bool,
{
    if !(atol > 0.0) || !(rtol > 0.0) {
        return Err(Error::Config(format!("tolerances must be positive, got {atol}, {rtol}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {t_end}")));
    }
    let d = y0.len();
    if d != field.dim() {
        return Err(Error::dim("dopri5", &[d], &[field.dim()]));
    }
    let mut t = 0.0;
    let mut y = y0.to_vec();
    let mut k1 = field.eval(&y)?;
    let mut h = initial_step(field, &y, &k1, atol, rtol, t_end)?;
    let mut err_prev: f64 = 1e-4;
    let mut stage = vec![0.0; d];
    let mut y_new = vec![0.0; d];
    let mut err = vec![0.0; d];
    let mut scale_ref = vec![0.0; d];
    let mut accepted = 0usize;
    let mut last_reject = false;
    let mut stopped = false;

    for _ in 0..MAX_STEPS {
        if t >= t_end {
            break;
        }
        if t + h > t_end {
            h = t_end - t;
        }
        if h < 1e-12 * t.abs().max(1.0) {
            // Step collapse while the state is already huge is a
            // finite-time blow-up rather than stiffness.
            let n = norm(&y);
            if n > ESCAPE_NORM {
                return Err(Error::Divergence { step: accepted, norm: n });
            }
            return Err(Error::Stiffness { t, step: h });
        }
        axpy(&mut stage, &y, h, &[(A21, &k1)]);
        let k2 = field.eval(&stage)?;
        axpy(&mut stage, &y, h, &[(A31, &k1), (A32, &k2)]);
        let k3 = field.eval(&stage)?;
        axpy(&mut stage, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        let k4 = field.eval(&stage)?;
        axpy(&mut stage, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        let k5 = field.eval(&stage)?;
        axpy(&mut stage, &y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let k6 = field.eval(&stage)?;
        axpy(&mut y_new, &y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = field.eval(&y_new)?;
        for k in 0..d {
            err[k] = h * (E1 * k1[k] + E3 * k3[k] + E4 * k4[k] + E5 * k5[k] + E6 * k6[k] + E7 * k7[k]);
            scale_ref[k] = y[k].abs().max(y_new[k].abs());
        }
        let en = rms_scaled(&err, &scale_ref, atol, rtol);
        if !en.is_finite() {
            // Treat a non-finite estimate as a rejection with maximal shrink.
            h *= FAC_MIN;
            last_reject = true;
            continue;
        }
        if en <= 1.0 {
            let stop = {
                let step = Step {
                    t0: t,
                    t1: t + h,
                    y0: &y,
                    y1: &y_new,
                    f0: &k1,
                    f1: &k7,
                };
                !on_step(&step)
            };
            t += h;
            std::mem::swap(&mut y, &mut y_new);
            k1 = k7;
            accepted += 1;
            let n = norm(&y);
            if !n.is_finite() || n > DIVERGENCE_NORM {
                return Err(Error::Divergence { step: accepted, norm: n });
            }
            if stop {
                stopped = true;
                break;
            }
            let en = en.max(1e-10);
            let mut fac = SAFETY * en.powf(-ALPHA) * err_prev.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_reject {
                fac = fac.min(1.0);
            }
            err_prev = en;
            h *= fac;
            last_reject = false;
        } else {
            h *= (SAFETY * en.powf(-0.2)).max(FAC_MIN);
            last_reject = true;
        }
    }
    if !stopped && t < t_end {
        return Err(Error::Stiffness { t, step: h });
    }
    Ok((t, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::KnownField;

    #[test]
    fn decay_with_tight_tolerance() {
        let f = KnownField::LinearDecay { dim: 1 };
        let (t, y) = dopri5_drive(&f, &[1.0], 1.0, 1e-10, 1e-10, |_| true).unwrap();
        assert_eq!(t, 1.0);
        assert!((y[0] - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn hermite_is_exact_at_endpoints() {
        let s = Step {
            t0: 0.0,
            t1: 2.0,
            y0: &[1.0],
            y1: &[3.0],
            f0: &[0.5],
            f1: &[-1.0],
        };
        assert_eq!(s.interpolate(0.0), vec![1.0]);
        assert_eq!(s.interpolate(2.0), vec![3.0]);
    }

    #[test]
    fn early_stop() {
        let f = KnownField::LinearDecay { dim: 2 };
        let mut n = 0;
        let (t, _) = dopri5_drive(&f, &[1.0, 1.0], 100.0, 1e-6, 1e-6, |_| {
            n += 1;
            n < 3
        })
        .unwrap();
        assert_eq!(n, 3);
        assert!(t < 100.0);
    }
}
