//! Three-message mutual authentication over baseline packets.
//!
//! 1. The initiator sends `{T_A, CD_A}` encrypted under the long-term key
//!    selected by the cleartext header, flags SYN=1 ACK=0.
//! 2. A responder holding that key checks the timestamp is fresh and unused,
//!    answers with `{T_B, CD_B}` under the same key, flags SYN=1 ACK=1, and
//!    derives the session key.
//! 3. The initiator checks the near-symmetry of `T_B - T_A` and `T_A2 - T_B`,
//!    derives the same session key and obtains ranging observables.
//!
//! Inbound failures never produce a reply. They are reported as
//! [`Diagnostic`] records instead.

mod endpoint;
mod renewal;
mod schedule;
mod session;

use std::fmt;

use thiserror::Error;

use crate::bitcodec::{ClockDescriptor, CodecError, Mmsi};
use crate::cipher::CipherError;
use crate::keystore::{KeySlot, KeyStoreError};

pub use endpoint::{Endpoint, Inbound, Outgoing, REASSEMBLY_TIMEOUT_S};
pub use renewal::{renewal_frames, RenewalPayload, RENEWAL_CARGO_BYTES, RENEWAL_FRAMES};
pub use schedule::{defer_for_rollover, ChallengeSchedule};
pub use session::{
    select_key_for_packet, sync_clock_if_coarser, AuthResult, AuthSession, ClockAdjustment,
    KeyRole, RangingInputs,
};

/// Acoustic data rate of the JANUS baseline link.
pub const JANUS_BITRATE_BPS: f64 = 80.0;

/// Air time of `bits` at the baseline data rate.
pub fn tx_duration_s(bits: usize) -> f64 {
    bits as f64 / JANUS_BITRATE_BPS
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuthConfig {
    pub max_range_m: f64,
    pub sound_speed_mps: f64,
    /// Known decode plus decrypt time between end of reception and the
    /// moment a packet has been handled.
    pub processing_delay_s: f64,
    pub challenge_interval_s: f64,
    pub rollover_offset_s: f64,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            max_range_m: 10_000.0,
            sound_speed_mps: 1500.0,
            processing_delay_s: 0.1,
            challenge_interval_s: 300.0,
            rollover_offset_s: 30.0,
        }
    }
}

impl AuthConfig {
    /// Response validity window in seconds:
    /// `2 R / c + 2 p + (drift(cd_a) + drift(cd_b)) * age`.
    pub fn window_s(&self, cd_a: ClockDescriptor, cd_b: ClockDescriptor, key_age_s: f64) -> f64 {
        let drift_budget = (cd_a.drift_bound() + cd_b.drift_bound()) * key_age_s.max(0.0);
        2.0 * self.max_range_m / self.sound_speed_mps + 2.0 * self.processing_delay_s + drift_budget
    }

    /// Configuration whose window is exactly `window_s` for a fresh key:
    /// processing delay zero and the range chosen to match.
    pub fn with_window(window_s: f64) -> Self {
        let base = Self::default();
        Self {
            processing_delay_s: 0.0,
            max_range_m: window_s * base.sound_speed_mps / 2.0,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SessionState {
    Idle,
    Challenged,
    Responded,
    Established,
    Renewing,
    Failed,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::Idle => "idle",
            SessionState::Challenged => "challenged",
            SessionState::Responded => "responded",
            SessionState::Established => "established",
            SessionState::Renewing => "renewing",
            SessionState::Failed => "failed",
        };
        f.write_str(s)
    }
}

/// Own MMSI and clock class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalIdentity {
    pub mmsi: Mmsi,
    pub clock_descriptor: ClockDescriptor,
}

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("long-term key for {0} has expired")]
    KeyExpired(KeySlot),
    #[error("no long-term key for {0}")]
    NoKey(KeySlot),
    #[error("long-term key for {0} is not bound to a peer MMSI")]
    PeerUnbound(KeySlot),
    #[error("operation needs state {expected}, session is {actual}")]
    InvalidState {
        expected: &'static str,
        actual: SessionState,
    },
    #[error("no established session")]
    NoSession,
    #[error("response timing asymmetry {asymmetry_s:.3} s exceeds window {window_s:.3} s")]
    TimingAsymmetry { asymmetry_s: f64, window_s: f64 },
    #[error("challenge timestamp already used under this key; retry after 1 ms")]
    TimestampReused,
    #[error("renewal rejected: {0}")]
    RenewalRejected(&'static str),
    #[error("renewal not confirmed by the peer")]
    RenewalUnconfirmed,
    #[error(transparent)]
    Store(KeyStoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

impl From<KeyStoreError> for AuthError {
    fn from(e: KeyStoreError) -> Self {
        match e {
            KeyStoreError::Expired(slot) => AuthError::KeyExpired(slot),
            KeyStoreError::NotFound(slot) => AuthError::NoKey(slot),
            KeyStoreError::NoSession(_) => AuthError::NoSession,
            other => AuthError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    CrcFailure,
    WrongFlags,
    NoKeyMatch,
    OutOfWindow,
    Replay,
    PeerUnbound,
    AmbiguousKey,
    UnexpectedPacket,
    LateResponse,
    TimingFailure,
    RenewalRejected,
    RenewalUnconfirmed,
    ChallengeSent,
    Responded,
    Established,
    RenewalSent,
    RenewalAccepted,
    RenewalConfirmed,
}

impl DiagnosticKind {
    pub fn is_failure(self) -> bool {
        !matches!(
            self,
            DiagnosticKind::ChallengeSent
                | DiagnosticKind::Responded
                | DiagnosticKind::Established
                | DiagnosticKind::RenewalSent
                | DiagnosticKind::RenewalAccepted
                | DiagnosticKind::RenewalConfirmed
        )
    }
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Structured protocol event: what happened, in which session, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub session_id: u64,
    pub kind: DiagnosticKind,
    pub reason: String,
}

impl Diagnostic {
    pub(crate) fn new(session_id: u64, kind: DiagnosticKind, reason: impl Into<String>) -> Self {
        Self {
            session_id,
            kind,
            reason: reason.into(),
        }
    }
}
