//! Deterministic discrete-event model of an acoustic channel: devices on one
//! axis, propagation `d/(c+v)` downstream and `d/(c-v)` upstream, air time at
//! 80 bps, Bernoulli loss and independent bit errors.

mod scenario;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use chrono::{DateTime, Utc};
use rand::Rng;

use crate::authproto::tx_duration_s;
use crate::bitcodec::ClockDescriptor;
use crate::time::add_secs;

pub use scenario::{
    run_scenario, AdversaryKind, ChannelConfig, DeviceConfig, LinkMetrics, Metrics, Scenario,
    ScenarioError, SimOutput, TraceEvent,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualSea {
    pub sound_speed_mps: f64,
    /// Along-axis current, positive towards increasing position.
    pub current_mps: f64,
    pub loss_probability: f64,
    pub bit_error_rate: f64,
}

impl Default for VirtualSea {
    fn default() -> Self {
        Self {
            sound_speed_mps: 1500.0,
            current_mps: 0.0,
            loss_probability: 0.0,
            bit_error_rate: 0.0,
        }
    }
}

impl VirtualSea {
    /// Propagation delay from position `from` to position `to`.
    pub fn delay_s(&self, from: f64, to: f64) -> f64 {
        let d = (to - from).abs();
        let v = if to >= from {
            self.current_mps
        } else {
            -self.current_mps
        };
        d / (self.sound_speed_mps + v)
    }

    /// Time from start of transmission to end of reception.
    pub fn arrival_after_s(&self, bits: usize, from: f64, to: f64) -> f64 {
        tx_duration_s(bits) + self.delay_s(from, to)
    }

    /// Applies loss and bit errors to one copy of `bytes`. `None` if lost.
    pub fn impair(&self, bytes: &[u8], rng: &mut impl Rng) -> Option<Vec<u8>> {
        if self.loss_probability > 0.0 && rng.gen_bool(self.loss_probability.min(1.0)) {
            return None;
        }
        let mut out = bytes.to_vec();
        if self.bit_error_rate > 0.0 {
            let p = self.bit_error_rate.min(1.0);
            for byte in &mut out {
                for bit in 0..8 {
                    if rng.gen_bool(p) {
                        *byte ^= 1 << bit;
                    }
                }
            }
        }
        Some(out)
    }
}

/// `reported(t) = t + offset + drift * (t - sync_epoch)`, in seconds of
/// simulated time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceClock {
    pub offset_s: f64,
    pub drift_rate: f64,
    pub descriptor: ClockDescriptor,
    pub sync_epoch_s: f64,
}

impl DeviceClock {
    pub fn new(offset_s: f64, drift_rate: f64, descriptor: ClockDescriptor) -> Self {
        Self {
            offset_s,
            drift_rate,
            descriptor,
            sync_epoch_s: 0.0,
        }
    }

    pub fn reported_s(&self, t: f64) -> f64 {
        t + self.offset_s + self.drift_rate * (t - self.sync_epoch_s)
    }

    /// Reading as a UTC instant, with simulated time zero at `base`.
    pub fn now(&self, base: DateTime<Utc>, t: f64) -> DateTime<Utc> {
        add_secs(base, self.reported_s(t))
    }

    /// Steps the clock by `delta_s` at simulated time `t`.
    pub fn adjust(&mut self, t: f64, delta_s: f64) {
        self.offset_s = self.reported_s(t) + delta_s - t;
        self.sync_epoch_s = t;
    }
}

/// Simulated time in integer nanoseconds.
pub fn to_ns(t: f64) -> u64 {
    (t * 1e9).round() as u64
}

pub fn from_ns(t: u64) -> f64 {
    t as f64 / 1e9
}

/// Time-ordered queue; equal times pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    items: std::collections::HashMap<u64, E>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            items: std::collections::HashMap::new(),
            seq: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, at_ns: u64, event: E) {
        self.heap.push(Reverse((at_ns, self.seq)));
        self.items.insert(self.seq, event);
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((at, seq)) = self.heap.pop()?;
        Some((at, self.items.remove(&seq).expect("queued")))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((at, _))| *at)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
