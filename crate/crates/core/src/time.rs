//! Conversions between UTC instants and window timestamps.

use chrono::{DateTime, TimeDelta, Utc};

use crate::bitcodec::{encode_timestamp, Timestamp29, MS_PER_DAY, UNIX_EPOCH_JDN, WINDOW_DAYS};

const MS_PER_DAY_I64: i64 = MS_PER_DAY as i64;

/// Chronological Julian Day Number of the UTC calendar date (changes at
/// midnight, not noon).
pub fn julian_day_number(t: DateTime<Utc>) -> i64 {
    t.timestamp_millis().div_euclid(MS_PER_DAY_I64) + UNIX_EPOCH_JDN
}

/// Index of the six-day window containing `t`.
pub fn window_index(t: DateTime<Utc>) -> i64 {
    julian_day_number(t).div_euclid(WINDOW_DAYS)
}

/// Start of window `index`.
pub fn window_start(index: i64) -> DateTime<Utc> {
    let jdn = index * WINDOW_DAYS;
    DateTime::from_timestamp_millis((jdn - UNIX_EPOCH_JDN) * MS_PER_DAY_I64)
        .expect("window start within chrono range")
}

/// Millisecond-quantised window timestamp of `t`, together with its window.
pub fn stamp(t: DateTime<Utc>) -> (Timestamp29, i64) {
    let ms = t.timestamp_millis();
    let ms_of_day = ms.rem_euclid(MS_PER_DAY_I64) as u32;
    let ts = encode_timestamp(julian_day_number(t), ms_of_day).expect("ms of day in range");
    (ts, window_index(t))
}

pub fn secs_between(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).num_microseconds().map_or_else(
        || (to - from).num_milliseconds() as f64 / 1e3,
        |us| us as f64 / 1e6,
    )
}

pub fn add_secs(t: DateTime<Utc>, secs: f64) -> DateTime<Utc> {
    t + TimeDelta::microseconds((secs * 1e6).round() as i64)
}
