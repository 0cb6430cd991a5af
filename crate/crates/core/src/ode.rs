//! Adaptive Dormand–Prince 5(4) integrator for small real systems.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integration settings. The error test is `|err_i| ≤ atol + rtol·|y_i|`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            atol: 1e-9,
            rtol: 1e-9,
            max_steps: 1_000_000,
        }
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1`, returning `y(t1)`.
/// `h` carries the step-size guess in and the last accepted step out.
pub fn dopri5<const N: usize>(
    f: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t1: f64,
    y0: [f64; N],
    h: &mut f64,
    tol: Tolerance,
) -> Result<[f64; N]> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y0);
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut step = h.abs().min(span.abs()).max(1e-12 * span.abs()) * dir;
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y);
    let mut steps = 0;
    while (t1 - t) * dir > 0.0 {
        if steps >= tol.max_steps {
            return Err(Error::NotConverged {
                what: "adaptive ODE integration (step limit)".into(),
                change: (t1 - t).abs(),
                tolerance: 0.0,
            });
        }
        steps += 1;
        if (t + step - t1) * dir > 0.0 {
            step = t1 - t;
        }
        for s in 1..7 {
            let mut ys = y;
            for (i, v) in ys.iter_mut().enumerate() {
                for (j, kj) in k.iter().enumerate().take(s) {
                    *v += step * A[s][j] * kj[i];
                }
            }
            k[s] = f(t + C[s] * step, &ys);
        }
        let mut y5 = y;
        let mut err: f64 = 0.0;
        for i in 0..N {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            y5[i] += step * d5;
            let scale = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((step * (d5 - d4)).abs() / scale);
        }
        if !err.is_finite() {
            return Err(Error::NotConverged {
                what: "adaptive ODE integration (non-finite state)".into(),
                change: f64::NAN,
                tolerance: tol.atol,
            });
        }
        if err <= 1.0 {
            t += step;
            y = y5;
            // First-same-as-last: the seventh stage is f at the new point.
            k[0] = k[6];
            *h = step.abs();
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        step *= factor;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64; 1]| [-2.0 * y[0]];
        let mut h = 0.1;
        let y = dopri5(&f, 0.0, 3.0, [1.0], &mut h, Tolerance::default()).unwrap();
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_backward() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let mut h = 0.1;
        let fwd = dopri5(&f, 0.0, 10.0, [1.0, 0.0], &mut h, Tolerance::default()).unwrap();
        assert!((fwd[0] - 10f64.cos()).abs() < 1e-8);
        let back = dopri5(&f, 10.0, 0.0, fwd, &mut h, Tolerance::default()).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-8 && back[1].abs() < 1e-8);
    }
}
