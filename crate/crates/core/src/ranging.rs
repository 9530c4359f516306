//! Two-way time-of-flight ranging from the challenge timestamp `t_a1`, the
//! responder's receipt timestamp `t_b1` and the initiator's receipt timestamp
//! `t_a2`.
//!
//! With one-way delays `d/(c+v)` and `d/(c-v)`, the round trip is
//! `t_a2 - t_a1 = 2dc / (c^2 - v^2)`, independent of either clock offset,
//! while `(t_b1 - t_a1) - (t_a2 - t_b1)` isolates twice the differential
//! offset up to a current term `-2dv / (c^2 - v^2)`.

use thiserror::Error;

use crate::bitcodec::{Timestamp29, TIMESTAMP_MODULUS};

/// Timestamp resolution in seconds.
pub const TIMESTAMP_RESOLUTION_S: f64 = 1e-3;

/// Nominal speed of sound in sea water.
pub const DEFAULT_SOUND_SPEED_MPS: f64 = 1500.0;

const WINDOW_S: f64 = TIMESTAMP_MODULUS as f64 / 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum RangingError {
    #[error("timestamps are out of order (round trip {0} s)")]
    InvalidOrdering(f64),
    #[error("current speed {v} m/s must be below the sound speed {c} m/s")]
    Supersonic { v: f64, c: f64 },
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("timestamp {0} s lies outside the six-day window")]
    OutOfWindow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingEstimate {
    pub distance_m: f64,
    /// Estimate of the responder's clock offset minus the initiator's.
    pub clock_offset_s: f64,
    pub round_trip_s: f64,
    /// Distance error attributable to 1 ms timestamps.
    pub quantization_bound_m: f64,
}

/// First-order inversion: `d = c * round_trip / 2`.
pub fn estimate_distance(
    t_a1: f64,
    t_b1: f64,
    t_a2: f64,
    sound_speed: f64,
) -> Result<RangingEstimate, RangingError> {
    let round_trip = t_a2 - t_a1;
    if round_trip < 0.0 || !round_trip.is_finite() {
        return Err(RangingError::InvalidOrdering(round_trip));
    }
    Ok(RangingEstimate {
        distance_m: sound_speed * round_trip / 2.0,
        clock_offset_s: ((t_b1 - t_a1) - (t_a2 - t_b1)) / 2.0,
        round_trip_s: round_trip,
        quantization_bound_m: sound_speed * TIMESTAMP_RESOLUTION_S,
    })
}

/// Exact inversion of the round trip when the along-track current is known:
/// `d = (c^2 - v^2) * round_trip / (2c)`.
pub fn estimate_distance_with_current(
    t_a1: f64,
    t_b1: f64,
    t_a2: f64,
    sound_speed: f64,
    current: f64,
) -> Result<RangingEstimate, RangingError> {
    if current.abs() >= sound_speed {
        return Err(RangingError::Supersonic {
            v: current,
            c: sound_speed,
        });
    }
    let mut est = estimate_distance(t_a1, t_b1, t_a2, sound_speed)?;
    let c2v2 = sound_speed * sound_speed - current * current;
    est.distance_m = c2v2 * est.round_trip_s / (2.0 * sound_speed);
    // remove the current term from the offset estimate
    est.clock_offset_s += est.distance_m * current / c2v2;
    Ok(est)
}

/// Places three window timestamps on a common time line. `t_a2` before `t_a1`
/// is taken as one rollover; anything needing more is rejected, as is a round
/// trip longer than half a window.
pub fn unwrap_timestamps(
    t_a1: f64,
    t_b1: f64,
    t_a2: f64,
) -> Result<(f64, f64, f64), RangingError> {
    for t in [t_a1, t_b1, t_a2] {
        if !(0.0..WINDOW_S).contains(&t) {
            return Err(RangingError::OutOfWindow(t));
        }
    }
    let t_a2 = if t_a2 < t_a1 { t_a2 + WINDOW_S } else { t_a2 };
    if t_a2 - t_a1 > WINDOW_S / 2.0 {
        return Err(RangingError::InvalidOrdering(t_a2 - t_a1 - WINDOW_S));
    }
    // t_b1 is nearest to the midpoint modulo the window
    let mid = (t_a1 + t_a2) / 2.0;
    let k = ((mid - t_b1) / WINDOW_S).round();
    Ok((t_a1, t_b1 + k * WINDOW_S, t_a2))
}

/// [`estimate_distance`] over raw window timestamps.
pub fn estimate_from_timestamps(
    t_a1: Timestamp29,
    t_b1: Timestamp29,
    t_a2: Timestamp29,
    sound_speed: f64,
) -> Result<RangingEstimate, RangingError> {
    let (a1, b1, a2) = unwrap_timestamps(t_a1.as_secs(), t_b1.as_secs(), t_a2.as_secs())?;
    estimate_distance(a1, b1, a2, sound_speed)
}

/// Forward model: true observables for a ping sent at `t0` (processing
/// delays excluded).
pub fn predict_observables(
    d: f64,
    c: f64,
    v: f64,
    delta_a: f64,
    delta_b: f64,
    t0: f64,
) -> Result<(f64, f64, f64), RangingError> {
    if v.abs() >= c {
        return Err(RangingError::Supersonic { v, c });
    }
    if d < 0.0 {
        return Err(RangingError::NegativeDistance(d));
    }
    let t1 = t0 + d / (c + v);
    let t2 = t1 + d / (c - v);
    Ok((t0 + delta_a, t1 + delta_b, t2 + delta_a))
}
