//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.
//!
//! The integrator only advances the state; the caller sees every accepted
//! step through a callback and decides whether to continue. Steps whose
//! stages produce non-finite values are rejected and retried with a smaller
//! step.

/// Control returned by the step observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on `|h|`; keeps accepted nodes dense enough for
    /// interpolation.
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-300,
            h_max: 0.02,
            h_min: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeOutcome {
    /// Reached the end of the interval.
    Completed {
        steps: usize,
    },
    /// The observer asked to stop.
    Stopped {
        steps: usize,
    },
    /// Step size fell below `h_min` at the given abscissa.
    StepUnderflow {
        t: f64,
    },
    MaxSteps {
        t: f64,
    },
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Error weights: 5th-order minus embedded 4th-order.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += c * k[i];
        }
    }
    out
}

fn finite<const N: usize>(v: &[f64; N]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `observe(t, y, dy)` is called after each accepted step with the new state
/// and its derivative.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    h0: f64,
    tol: &Tolerances,
    mut observe: O,
) -> OdeOutcome
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N], &[f64; N]) -> Flow,
{
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = h0.abs().min(tol.h_max).max(tol.h_min) * dir;
    let mut steps = 0usize;
    let mut prev_err: f64 = 1e-4;

    while (t1 - t) * dir > 0.0 {
        if steps >= tol.max_steps {
            return OdeOutcome::MaxSteps { t };
        }
        let last = (t + h - t1) * dir >= 0.0;
        if last {
            h = t1 - t;
        }

        let k2 = f(t + C2 * h, &axpy(&y, &[(h * A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, &[(h * A31, &k1), (h * A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, &[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(
                &y,
                &[
                    (h * A51, &k1),
                    (h * A52, &k2),
                    (h * A53, &k3),
                    (h * A54, &k4),
                ],
            ),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                &[
                    (h * A61, &k1),
                    (h * A62, &k2),
                    (h * A63, &k3),
                    (h * A64, &k4),
                    (h * A65, &k5),
                ],
            ),
        );
        let y_new = axpy(
            &y,
            &[
                (h * B1, &k1),
                (h * B3, &k3),
                (h * B4, &k4),
                (h * B5, &k5),
                (h * B6, &k6),
            ],
        );
        let t_new = if last { t1 } else { t + h };
        let k7 = f(t_new, &y_new);

        let ok = finite(&y_new) && finite(&k7);
        let mut err = f64::INFINITY;
        if ok {
            let mut acc = 0.0;
            for i in 0..N {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                acc += (e / sc).powi(2);
            }
            err = (acc / N as f64).sqrt();
        }

        if err <= 1.0 {
            t = t_new;
            y = y_new;
            k1 = k7;
            steps += 1;
            if observe(t, &y, &k1) == Flow::Stop {
                return OdeOutcome::Stopped { steps };
            }
            // PI step-size controller.
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.7 / 5.0) * prev_err.powf(0.4 / 5.0)).clamp(0.2, 5.0)
            };
            prev_err = err.max(1e-4);
            h = (h.abs() * fac).min(tol.h_max) * dir;
        } else {
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.25
            };
            h *= fac;
            if h.abs() < tol.h_min {
                return OdeOutcome::StepUnderflow { t };
            }
        }
    }
    OdeOutcome::Completed { steps }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_backwards() {
        // y' = -y from t = 0 to t = -3 gives y = e^3.
        let tol = Tolerances {
            rtol: 1e-10,
            h_max: 0.5,
            ..Default::default()
        };
        let mut last = [0.0];
        let out = integrate(
            |_, y| [-y[0]],
            0.0,
            [1.0],
            -3.0,
            0.1,
            &tol,
            |_, y, _| {
                last = *y;
                Flow::Continue
            },
        );
        assert!(matches!(out, OdeOutcome::Completed { .. }));
        assert!((last[0] - 3f64.exp()).abs() < 1e-8 * 3f64.exp());
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let tol = Tolerances {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.1,
            ..Default::default()
        };
        let mut last = [0.0, 0.0];
        integrate(
            |_, y| [y[1], -y[0]],
            0.0,
            [1.0, 0.0],
            10.0,
            0.01,
            &tol,
            |_, y, _| {
                last = *y;
                Flow::Continue
            },
        );
        assert!((last[0] - 10f64.cos()).abs() < 1e-8);
        assert!((last[1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn observer_can_stop() {
        let mut n = 0;
        let out = integrate(
            |_, y| [y[0]],
            0.0,
            [1.0],
            1.0,
            0.01,
            &Tolerances::default(),
            |_, _, _| {
                n += 1;
                if n == 3 {
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            },
        );
        assert_eq!(out, OdeOutcome::Stopped { steps: 3 });
    }

    #[test]
    fn non_finite_rhs_underflows() {
        let out = integrate(
            |t, y| if t > 0.5 { [f64::NAN] } else { [y[0]] },
            0.0,
            [1.0],
            1.0,
            0.01,
            &Tolerances::default(),
            |_, _, _| Flow::Continue,
        );
        match out {
            OdeOutcome::StepUnderflow { t } => assert!((t - 0.5).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
    }
}
