//! Indexes of temporal correspondence between a leader and a follower trace.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VpError};
use crate::trace::Trace;

/// Shortest trace accepted by [`relative_phase`].
pub const MIN_PHASE_SAMPLES: usize = 64;
/// Samples at each end of a phase series that are edge-affected.
pub const PHASE_EDGE: usize = 32;
/// Default cross-covariance search window (seconds).
pub const DEFAULT_MAX_LAG: f64 = 2.0;

fn check_pair(a: &Trace, b: &Trace) -> Result<()> {
    if a.len() != b.len() {
        return Err(VpError::InvalidInput(format!("trace lengths differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn rms(leader: &Trace, follower: &Trace) -> Result<f64> {
    check_pair(leader, follower)?;
    let n = leader.len() as f64;
    let ss: f64 = leader.x().iter().zip(follower.x()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / n).sqrt())
}

/// Largest absolute position difference.
pub fn max_abs_error(leader: &Trace, follower: &Trace) -> Result<f64> {
    check_pair(leader, follower)?;
    Ok(leader.x().iter().zip(follower.x()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// `sgn` with `sgn(0) = 0`.
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Relative position error of one sample: signed when both move the same way.
pub fn rpe_sample(x1: f64, x2: f64, v1: f64, v2: f64) -> f64 {
    let s1 = sgn(v1);
    if s1 == sgn(v2) && s1 != 0.0 {
        (x1 - x2) * s1
    } else {
        (x1 - x2).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpeSeries {
    pub values: Vec<f64>,
    pub mean: f64,
}

/// Positive values mean the follower is behind the leader.
pub fn rpe(leader: &Trace, follower: &Trace) -> Result<RpeSeries> {
    check_pair(leader, follower)?;
    let v1 = leader.velocities();
    let v2 = follower.velocities();
    let values: Vec<f64> = (0..leader.len())
        .map(|i| rpe_sample(leader.x()[i], follower.x()[i], v1[i], v2[i]))
        .collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(RpeSeries { values, mean })
}

/// Mean resultant length `|(1/n) sum exp(i dphi_k)|` of the relative phase.
///
/// Note the naming: this is what the mirror-game literature reports as
/// "circular variance", although the conventional circular variance is one
/// minus this quantity. 1 means perfect phase locking.
pub fn circular_variance(rel_phase: &[f64]) -> Result<f64> {
    if rel_phase.is_empty() {
        return Err(VpError::InsufficientData { needed: 1, got: 0 });
    }
    let (mut c, mut s) = (0.0, 0.0);
    for &p in rel_phase {
        c += p.cos();
        s += p.sin();
    }
    let n = rel_phase.len() as f64;
    Ok(((c / n).powi(2) + (s / n).powi(2)).sqrt().min(1.0))
}

/// Lag (seconds) maximizing the cross-covariance of the mean-removed
/// positions; positive when `x2` trails `x1`. Ties go to the smaller |lag|.
pub fn time_lag(x1: &Trace, x2: &Trace, max_lag: f64) -> Result<f64> {
    check_pair(x1, x2)?;
    let period = x1.period();
    let duration = period * x1.len() as f64;
    if !(max_lag >= 0.0) || max_lag > duration / 4.0 + 1e-12 {
        return Err(VpError::InvalidInput(format!(
            "max lag {max_lag} s must be within [0, duration/4 = {}]",
            duration / 4.0
        )));
    }
    let a = demean(x1.x());
    let b = demean(x2.x());
    let n = a.len() as isize;
    let max_k = (max_lag / period + 1e-9).floor() as isize;
    let cov = |k: isize| -> f64 {
        let mut acc = 0.0;
        let (start, end) = if k >= 0 { (0, n - k) } else { (-k, n) };
        for i in start..end {
            acc += a[i as usize] * b[(i + k) as usize];
        }
        acc / n as f64
    };
    let mut best_k = 0isize;
    let mut best = cov(0);
    for m in 1..=max_k {
        for k in [m, -m] {
            let c = cov(k);
            if c > best {
                best = c;
                best_k = k;
            }
        }
    }
    Ok(best_k as f64 * period)
}

fn demean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

/// Instantaneous phase of the analytic signal of the mean-removed series
/// (FFT-based discrete Hilbert transform).
pub fn analytic_phase(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < MIN_PHASE_SAMPLES {
        return Err(VpError::InsufficientData { needed: MIN_PHASE_SAMPLES, got: n });
    }
    let mut buf: Vec<Complex<f64>> = demean(x).into_iter().map(|v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *c *= w;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    Ok(buf.iter().map(|c| c.im.atan2(c.re)).collect())
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(d: f64) -> f64 {
    let w = d.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Relative phase series; samples within [`PHASE_EDGE`] of either end are
/// affected by the transform's edge effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativePhase {
    pub values: Vec<f64>,
    pub edge: usize,
}

impl RelativePhase {
    pub fn interior(&self) -> &[f64] {
        let n = self.values.len();
        if n > 2 * self.edge {
            &self.values[self.edge..n - self.edge]
        } else {
            &self.values
        }
    }
}

/// `phi_1 - phi_2` per sample; positive when `x2` lags `x1`.
pub fn relative_phase(x1: &Trace, x2: &Trace) -> Result<RelativePhase> {
    check_pair(x1, x2)?;
    let p1 = analytic_phase(x1.x())?;
    let p2 = analytic_phase(x2.x())?;
    let values = p1.iter().zip(&p2).map(|(a, b)| wrap_angle(a - b)).collect();
    Ok(RelativePhase { values, edge: PHASE_EDGE })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rms: f64,
    pub rpe_mean: f64,
    /// Mean resultant length over the interior relative-phase samples.
    pub cv: f64,
    pub tl_seconds: f64,
    pub max_abs_error: f64,
    pub rel_phase_series: RelativePhase,
}

impl MetricsReport {
    /// Fraction of interior relative-phase samples that are positive.
    pub fn positive_phase_fraction(&self) -> f64 {
        let inner = self.rel_phase_series.interior();
        inner.iter().filter(|&&p| p > 0.0).count() as f64 / inner.len() as f64
    }
}

pub fn report(leader: &Trace, follower: &Trace, max_lag: f64) -> Result<MetricsReport> {
    let phase = relative_phase(leader, follower)?;
    let max_lag = max_lag.min(leader.period() * leader.len() as f64 / 4.0);
    Ok(MetricsReport {
        rms: rms(leader, follower)?,
        rpe_mean: rpe(leader, follower)?.mean,
        cv: circular_variance(phase.interior())?,
        tl_seconds: time_lag(leader, follower, max_lag)?,
        max_abs_error: max_abs_error(leader, follower)?,
        rel_phase_series: phase,
    })
}

/// Named columns of indexes rendered as an aligned table (rows RPE, CV, TL, RMS).
pub fn render_table(columns: &[(String, Option<&MetricsReport>)]) -> String {
    let mut out = String::new();
    let width = columns.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(10);
    let _ = write!(out, "{:<6}", "");
    for (name, _) in columns {
        let _ = write!(out, " {name:>width$}");
    }
    out.push('\n');
    type Getter = fn(&MetricsReport) -> f64;
    let rows: [(&str, Getter); 4] = [
        ("RPE", |r| r.rpe_mean),
        ("CV", |r| r.cv),
        ("TL", |r| r.tl_seconds),
        ("RMS", |r| r.rms),
    ];
    for (label, get) in rows {
        let _ = write!(out, "{label:<6}");
        for (_, rep) in columns {
            match rep {
                Some(r) => {
                    let _ = write!(out, " {:>width$.4}", get(r));
                }
                None => {
                    let _ = write!(out, " {:>width$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Machine-readable summary (no phase series) as one JSON object.
pub fn report_document(name: &str, r: &MetricsReport) -> serde_json::Value {
    serde_json::json!({
        "model": name,
        "RPE": r.rpe_mean,
        "CV": r.cv,
        "TL": r.tl_seconds,
        "RMS": r.rms,
        "max_abs_error": r.max_abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(period: f64, n: usize, freq: f64, shift: f64) -> Trace {
        let x = (0..n).map(|k| (2.0 * PI * freq * (k as f64 * period - shift)).sin()).collect();
        Trace::from_positions(period, x, None).unwrap()
    }

    fn traj(x: Vec<f64>, v: Vec<f64>) -> Trace {
        Trace::from_positions(0.1, x, Some(v)).unwrap()
    }

    #[test]
    fn rms_examples() {
        let a = sine(0.03, 100, 0.25, 0.0);
        assert_eq!(rms(&a, &a).unwrap(), 0.0);
        let off: Vec<f64> = a.x().iter().map(|v| v - 0.3).collect();
        let b = Trace::from_positions(0.03, off, None).unwrap();
        assert!((rms(&a, &b).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rms_matches_two_pass_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xa: Vec<f64> = (0..500).map(|_| rng.random_range(-0.5..0.5)).collect();
        let xb: Vec<f64> = (0..500).map(|_| rng.random_range(-0.5..0.5)).collect();
        // independent route: squared differences collected first, then averaged
        let sq: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| (a - b).powi(2)).collect();
        let mut mean = 0.0;
        for (k, s) in sq.iter().enumerate() {
            mean += (s - mean) / (k + 1) as f64;
        }
        let a = Trace::from_positions(0.1, xa, None).unwrap();
        let b = Trace::from_positions(0.1, xb, None).unwrap();
        assert!((rms(&a, &b).unwrap() - mean.sqrt()).abs() < 1e-12);
        assert_eq!(rms(&a, &b).unwrap(), rms(&b, &a).unwrap());
    }

    #[test]
    fn rpe_examples() {
        // both moving right, leader ahead
        assert!(rpe_sample(0.3, 0.1, 1.0, 0.5) > 0.0);
        assert!((rpe_sample(0.3, 0.1, 1.0, 0.5) - 0.2).abs() < 1e-15);
        // opposite directions -> absolute branch
        assert!((rpe_sample(0.0, 0.2, 1.0, -1.0) - 0.2).abs() < 1e-15);
        assert!((rpe_sample(0.2, 0.0, -1.0, 1.0) - 0.2).abs() < 1e-15);
        // zero velocity -> absolute branch
        assert!((rpe_sample(0.1, 0.3, 0.0, 0.0) - 0.2).abs() < 1e-15);
        assert!((rpe_sample(0.1, 0.3, 0.0, 1.0) - 0.2).abs() < 1e-15);
        // moving left with the leader ahead (more negative) also counts positive
        assert!((rpe_sample(-0.3, -0.1, -1.0, -1.0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rpe_is_directional() {
        let a = traj(vec![0.3, 0.4], vec![1.0, 1.0]);
        let b = traj(vec![0.1, 0.2], vec![1.0, 1.0]);
        let ab = rpe(&a, &b).unwrap().mean;
        let ba = rpe(&b, &a).unwrap().mean;
        assert!((ab - 0.2).abs() < 1e-12);
        assert!((ba + 0.2).abs() < 1e-12);
    }

    #[test]
    fn circular_variance_examples() {
        assert!((circular_variance(&[0.7; 10]).unwrap() - 1.0).abs() < 1e-15);
        let n = 12;
        let uniform: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        assert!(circular_variance(&uniform).unwrap() < 1e-12);
        let mut half = vec![0.0; 50];
        half.extend(vec![PI / 2.0; 50]);
        // |(1 + i)/2| evaluated directly
        let direct = ((0.5f64).powi(2) + (0.5f64).powi(2)).sqrt();
        assert!((circular_variance(&half).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 2f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn time_lag_examples() {
        let period = 0.03;
        let n = 2000;
        let a = sine(period, n, 0.25, 0.0);
        assert_eq!(time_lag(&a, &a, 2.0).unwrap(), 0.0);
        let b = sine(period, n, 0.25, 0.3);
        let lag = time_lag(&a, &b, 2.0).unwrap();
        assert!((lag - 0.3).abs() <= period + 1e-12, "{lag}");
        let neg = Trace::from_positions(period, a.x().iter().map(|v| -v).collect(), None).unwrap();
        let lag = time_lag(&a, &neg, 2.5).unwrap();
        assert!((lag.abs() - 2.0).abs() <= period + 1e-12, "{lag}");
        assert!(time_lag(&a, &a, 100.0).is_err());
    }

    #[test]
    fn time_lag_is_antisymmetric() {
        let a = sine(0.03, 1500, 0.25, 0.0);
        let b = sine(0.03, 1500, 0.25, 0.45);
        assert_eq!(time_lag(&a, &b, 1.5).unwrap(), -time_lag(&b, &a, 1.5).unwrap());
    }

    #[test]
    fn relative_phase_examples() {
        let a = sine(0.03, 2000, 0.25, 0.0);
        let same = relative_phase(&a, &a).unwrap();
        assert!(same.interior().iter().all(|p| p.abs() < 1e-6));
        // sin(wt - pi/4): shift by (pi/4)/w seconds
        let shift = 0.25 * PI / (2.0 * PI * 0.25);
        let b = sine(0.03, 2000, 0.25, shift);
        let rp = relative_phase(&a, &b).unwrap();
        assert!(rp.interior().iter().all(|p| (p - PI / 4.0).abs() < 0.05));
        let swapped = relative_phase(&b, &a).unwrap();
        for (p, q) in rp.interior().iter().zip(swapped.interior()) {
            assert!((p + q).abs() < 1e-9);
        }
    }

    #[test]
    fn short_traces_rejected() {
        let a = sine(0.03, 63, 0.25, 0.0);
        assert!(matches!(relative_phase(&a, &a), Err(VpError::InsufficientData { needed: 64, got: 63 })));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn table_has_one_column_per_model() {
        let a = sine(0.03, 400, 0.25, 0.0);
        let b = sine(0.03, 400, 0.25, 0.1);
        let r = report(&a, &b, 1.0).unwrap();
        let t = render_table(&[("OPC".into(), Some(&r)), ("JKE".into(), None)]);
        assert!(t.lines().next().unwrap().contains("OPC"));
        assert_eq!(t.lines().count(), 5);
        assert!(t.contains('-'));
    }

    proptest! {
        #[test]
        fn cv_invariant_under_common_rotation(
            phases in prop::collection::vec(-PI..PI, 1..80),
            rot in -PI..PI,
        ) {
            let rotated: Vec<f64> = phases.iter().map(|p| p + rot).collect();
            let a = circular_variance(&phases).unwrap();
            let b = circular_variance(&rotated).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn rms_is_symmetric(
            xs in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 1..60),
        ) {
            let a = Trace::from_positions(0.1, xs.iter().map(|p| p.0).collect(), None).unwrap();
            let b = Trace::from_positions(0.1, xs.iter().map(|p| p.1).collect(), None).unwrap();
            prop_assert_eq!(rms(&a, &b).unwrap(), rms(&b, &a).unwrap());
        }
    }
}
