//! Fixed-step explicit integrators over small fixed-size state vectors.
//!
//! All steppers evaluate in a fixed order, so identical inputs give
//! bit-identical outputs on any IEEE-754 platform.

use serde::{Deserialize, Serialize};

/// Explicit scheme used for every fixed-step integration in the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

/// One classical Runge-Kutta step of size `h` from time `t`.
pub fn rk4_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2));
    let k4 = f(t + h, &axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

pub fn euler_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    axpy(y, h, &f(t, y))
}

/// Integrates `f` over `[t0, t0 + span]` in `steps` equal substeps.
///
/// Returns `Err(last_finite_state, time)` as soon as a substep produces a
/// non-finite component.
pub fn integrate<const N: usize, F>(
    scheme: Scheme,
    f: &F,
    t0: f64,
    y0: &[f64; N],
    span: f64,
    steps: usize,
) -> Result<[f64; N], ([f64; N], f64)>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let steps = steps.max(1);
    let h = span / steps as f64;
    let mut y = *y0;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let next = match scheme {
            Scheme::Rk4 => rk4_step(f, t, &y, h),
            Scheme::Euler => euler_step(f, t, &y, h),
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err((y, t));
        }
        y = next;
    }
    Ok(y)
}

/// Number of equal substeps needed so that each is at most `span / min_divisions`
/// and no larger than `max_h` (when given).
pub(crate) fn substeps(span: f64, min_divisions: usize, max_h: Option<f64>) -> usize {
    let mut n = min_divisions.max(1);
    if let Some(h) = max_h {
        if h > 0.0 {
            n = n.max((span / h - 1e-9).ceil() as usize);
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let f = |_t: f64, y: &[f64; 1]| [-y[0]];
        let y = integrate(Scheme::Rk4, &f, 0.0, &[1.0], 1.0, 100).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn divergence_reports_last_finite_state() {
        let f = |_t: f64, y: &[f64; 1]| [y[0] * y[0] * 1e200];
        let err = integrate(Scheme::Euler, &f, 0.0, &[1e100], 1.0, 4).unwrap_err();
        assert!(err.0[0].is_finite());
    }

    #[test]
    fn substep_count_respects_both_limits() {
        assert_eq!(substeps(0.1, 10, None), 10);
        assert_eq!(substeps(0.1, 10, Some(0.001)), 100);
        assert_eq!(substeps(0.1, 20, Some(0.5)), 20);
    }
}
