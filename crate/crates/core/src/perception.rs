//! Sampled acquisition of the partner: low-pass filtering, velocity
//! estimation by differencing, and one-interval-ahead prediction.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, VpError};

/// Half-width of the arena; positions live in `[-ARENA_HALF, ARENA_HALF]`.
pub const ARENA_HALF: f64 = 0.5;
/// Arena (string) length.
pub const ARENA_LENGTH: f64 = 1.0;
pub const DEFAULT_SMOOTHING: f64 = 0.6;

/// What the controller knows about the partner at tick `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub t: f64,
    pub r_p: f64,
    pub r_v_hat: f64,
    /// Predicted position at the next tick.
    pub r_p_hat_next: f64,
}

impl ReferenceSample {
    /// Reference evolving along the prediction after `tau` seconds into the interval.
    pub fn position_at(&self, tau: f64) -> f64 {
        self.r_p + self.r_v_hat * tau
    }
}

/// First-order exponential smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub y_prev: f64,
    pub alpha_f: f64,
}

impl FilterState {
    pub fn new(alpha_f: f64, initial: f64) -> Result<Self> {
        if !(alpha_f > 0.0 && alpha_f <= 1.0) {
            return Err(VpError::InvalidInput(format!("smoothing factor must be in (0, 1], got {alpha_f}")));
        }
        ensure_finite("filter initial value", &[initial])?;
        Ok(Self { y_prev: initial, alpha_f })
    }
}

/// `y = alpha_f * sample + (1 - alpha_f) * y_prev`.
pub fn low_pass(fs: FilterState, sample: f64) -> Result<(FilterState, f64)> {
    if !(fs.alpha_f > 0.0 && fs.alpha_f <= 1.0) {
        return Err(VpError::InvalidInput(format!("smoothing factor must be in (0, 1], got {}", fs.alpha_f)));
    }
    ensure_finite("filter sample", &[sample])?;
    let y = fs.alpha_f * sample + (1.0 - fs.alpha_f) * fs.y_prev;
    Ok((FilterState { y_prev: y, alpha_f: fs.alpha_f }, y))
}

pub fn estimate_velocity(r_p_prev: f64, r_p_cur: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(VpError::InvalidInput(format!("sampling period must be > 0, got {period}")));
    }
    ensure_finite("positions", &[r_p_prev, r_p_cur])?;
    Ok((r_p_cur - r_p_prev) / period)
}

pub fn predict_position(r_p_k: f64, r_v_hat: f64, dt_into_interval: f64, period: f64) -> Result<f64> {
    if !(0.0..=period).contains(&dt_into_interval) {
        return Err(VpError::InvalidInput(format!(
            "prediction offset {dt_into_interval} outside [0, {period}]"
        )));
    }
    Ok(r_p_k + r_v_hat * dt_into_interval)
}

/// Stateful perception block owned by one session.
///
/// Samples are clamped to the arena, smoothed, and differenced. A missing
/// sample holds the previous position and reports zero velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perception {
    period: f64,
    filter: Option<FilterState>,
    alpha_f: f64,
    prev_filtered: Option<f64>,
    pub clamp_count: u64,
    pub dropout_count: u64,
}

impl Perception {
    pub fn new(period: f64, alpha_f: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(VpError::InvalidInput(format!("sampling period must be > 0, got {period}")));
        }
        // validates alpha_f
        FilterState::new(alpha_f, 0.0)?;
        Ok(Self { period, filter: None, alpha_f, prev_filtered: None, clamp_count: 0, dropout_count: 0 })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Processes the sample detected at tick time `t` (`None` when nothing arrived).
    pub fn observe(&mut self, t: f64, sample: Option<f64>) -> Result<ReferenceSample> {
        let (r_p, r_v_hat) = match sample {
            Some(raw) => {
                ensure_finite("partner position", &[raw])?;
                let clamped = raw.clamp(-ARENA_HALF, ARENA_HALF);
                if clamped != raw {
                    self.clamp_count += 1;
                }
                let fs = self.filter.unwrap_or(FilterState { y_prev: clamped, alpha_f: self.alpha_f });
                let (fs, filtered) = low_pass(fs, clamped)?;
                self.filter = Some(fs);
                let v = match self.prev_filtered {
                    Some(prev) => estimate_velocity(prev, filtered, self.period)?,
                    None => 0.0,
                };
                self.prev_filtered = Some(filtered);
                (filtered, v)
            }
            None => {
                self.dropout_count += 1;
                (self.prev_filtered.unwrap_or(0.0), 0.0)
            }
        };
        let r_p_hat_next = predict_position(r_p, r_v_hat, self.period, self.period)?;
        Ok(ReferenceSample { t, r_p, r_v_hat, r_p_hat_next })
    }
}
