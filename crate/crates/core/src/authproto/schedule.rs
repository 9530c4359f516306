use chrono::{DateTime, Utc};

use super::AuthConfig;
use crate::time::{add_secs, secs_between, window_index, window_start};

/// Moves `t` to `offset_s` past the nearest window boundary when it lies
/// within `offset_s` of that boundary; otherwise returns `t` unchanged.
pub fn defer_for_rollover(t: DateTime<Utc>, offset_s: f64) -> DateTime<Utc> {
    let index = window_index(t);
    let start = window_start(index);
    let next = window_start(index + 1);
    if secs_between(t, next) < offset_s {
        add_secs(next, offset_s)
    } else if secs_between(start, t) < offset_s {
        add_secs(start, offset_s)
    } else {
        t
    }
}

/// Periodic re-challenge timer honouring the rollover offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChallengeSchedule {
    interval_s: f64,
    offset_s: f64,
    next: DateTime<Utc>,
}

impl ChallengeSchedule {
    pub fn new(first: DateTime<Utc>, config: &AuthConfig) -> Self {
        Self {
            interval_s: config.challenge_interval_s,
            offset_s: config.rollover_offset_s,
            next: defer_for_rollover(first, config.rollover_offset_s),
        }
    }

    pub fn next_due(&self) -> DateTime<Utc> {
        self.next
    }

    /// Consumes the current slot and returns the one after it.
    pub fn advance(&mut self) -> DateTime<Utc> {
        self.next = defer_for_rollover(add_secs(self.next, self.interval_s), self.offset_s);
        self.next
    }
}
