use chrono::{DateTime, Utc};

use super::{
    tx_duration_s, AuthConfig, AuthError, Diagnostic, DiagnosticKind, LocalIdentity, Role,
    SessionState,
};
use crate::bitcodec::{
    pack_challenge, unpack_challenge, AuthAdb, BaselinePacket, ClockDescriptor, JanusHeader, Mmsi,
    Timestamp29,
};
use crate::cipher::{derive_session_key_with, KeyMaterial};
use crate::keystore::{trial_decrypt_all, KeySlot, KeyStore, LongTermKeyRecord};
use crate::ranging::{self, RangingEstimate};
use crate::time::{add_secs, secs_between, stamp};

pub(super) const BASELINE_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ephemeral {
    t_a: Option<Timestamp29>,
    cd_a: Option<ClockDescriptor>,
    t_b: Option<Timestamp29>,
    cd_b: Option<ClockDescriptor>,
}

/// Ranging observables on a common time line (seconds, anchored at the
/// challenge timestamp), with the known air time and responder turnaround
/// removed so that the two-way ranging relations hold directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingInputs {
    pub t_a1: f64,
    pub t_b1: f64,
    pub t_a2: f64,
}

impl RangingInputs {
    pub fn round_trip_s(&self) -> f64 {
        self.t_a2 - self.t_a1
    }

    /// `(T_B - T_A) - (T_A2 - T_B)` after turnaround removal.
    pub fn asymmetry_s(&self) -> f64 {
        (self.t_b1 - self.t_a1) - (self.t_a2 - self.t_b1)
    }
}

/// Outcome of a completed exchange at the initiator.
#[derive(Debug, Clone)]
pub struct AuthResult {
    pub peer: Mmsi,
    pub slot: KeySlot,
    pub session_key: KeyMaterial,
    pub peer_clock: ClockDescriptor,
    pub t_a: Timestamp29,
    pub t_b: Timestamp29,
    pub t_a2: Timestamp29,
    pub ranging: RangingInputs,
}

impl AuthResult {
    pub fn range(&self, sound_speed: f64) -> RangingEstimate {
        let r = self.ranging;
        ranging::estimate_distance(r.t_a1, r.t_b1, r.t_a2, sound_speed)
            .expect("accepted responses have a non-negative round trip")
    }

    /// Clock correction for the initiator if its clock is the coarser one.
    pub fn clock_sync(&self, local: ClockDescriptor) -> Option<ClockAdjustment> {
        let r = self.ranging;
        sync_clock_if_coarser(local, self.peer_clock, r.t_a2, r.t_b1, r.round_trip_s())
    }
}

/// Amount to add to the local clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockAdjustment {
    pub delta_s: f64,
}

/// If the local clock class is strictly coarser than the peer's, returns the
/// step that makes the local reading at `local_ref` equal the peer timestamp
/// plus half the round trip. Equal classes never synchronise.
pub fn sync_clock_if_coarser(
    local: ClockDescriptor,
    peer: ClockDescriptor,
    local_ref: f64,
    t_peer: f64,
    round_trip: f64,
) -> Option<ClockAdjustment> {
    (local.code() < peer.code()).then(|| ClockAdjustment {
        delta_s: t_peer + round_trip / 2.0 - local_ref,
    })
}

/// Which key a packet is processed under, by its SYN/ACK flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyRole {
    LongTerm(KeySlot),
    Session(Mmsi),
    ByMmsi,
}

/// Flag/key table: (1,0) and (1,1) use the long-term key of the header slot,
/// (0,1) the session key, (0,0) a key looked up by MMSI.
pub fn select_key_for_packet(
    syn: bool,
    ack: bool,
    slot: KeySlot,
    session: Option<&AuthSession>,
    store: &KeyStore,
) -> Result<KeyRole, AuthError> {
    match (syn, ack) {
        (true, _) => Ok(KeyRole::LongTerm(slot)),
        (false, true) => session
            .and_then(|s| s.peer_mmsi())
            .filter(|peer| store.lookup_session(*peer).is_some())
            .map(KeyRole::Session)
            .ok_or(AuthError::NoSession),
        (false, false) => Ok(KeyRole::ByMmsi),
    }
}

/// One authentication relationship as seen by one device.
#[derive(Debug)]
pub struct AuthSession {
    id: u64,
    role: Role,
    state: SessionState,
    local: LocalIdentity,
    slot: Option<KeySlot>,
    peer_mmsi: Option<Mmsi>,
    ephemeral: Option<Ephemeral>,
    t_a2: Option<Timestamp29>,
    session_key: Option<KeyMaterial>,
    pub(super) pending_key: Option<KeyMaterial>,
    /// Responder: the current session key has already wrapped a renewal.
    pub(super) renewed: bool,
    config: AuthConfig,
    diagnostics: Vec<Diagnostic>,
}

impl AuthSession {
    pub fn initiator(id: u64, local: LocalIdentity, slot: KeySlot, config: AuthConfig) -> Self {
        Self::new(id, Role::Initiator, local, Some(slot), config)
    }

    pub fn responder(id: u64, local: LocalIdentity, config: AuthConfig) -> Self {
        Self::new(id, Role::Responder, local, None, config)
    }

    fn new(
        id: u64,
        role: Role,
        local: LocalIdentity,
        slot: Option<KeySlot>,
        config: AuthConfig,
    ) -> Self {
        Self {
            id,
            role,
            state: SessionState::Idle,
            local,
            slot,
            peer_mmsi: None,
            ephemeral: None,
            t_a2: None,
            session_key: None,
            pending_key: None,
            renewed: false,
            config,
            diagnostics: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn slot(&self) -> Option<KeySlot> {
        self.slot
    }

    pub fn peer_mmsi(&self) -> Option<Mmsi> {
        self.peer_mmsi
    }

    pub fn local(&self) -> LocalIdentity {
        self.local
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    pub fn session_key(&self) -> Option<&KeyMaterial> {
        self.session_key.as_ref()
    }

    pub fn t_a(&self) -> Option<Timestamp29> {
        self.ephemeral.and_then(|e| e.t_a)
    }

    pub fn cd_a(&self) -> Option<ClockDescriptor> {
        self.ephemeral.and_then(|e| e.cd_a)
    }

    pub fn t_b(&self) -> Option<Timestamp29> {
        self.ephemeral.and_then(|e| e.t_b)
    }

    pub fn cd_b(&self) -> Option<ClockDescriptor> {
        self.ephemeral.and_then(|e| e.cd_b)
    }

    pub fn t_a2(&self) -> Option<Timestamp29> {
        self.t_a2
    }

    pub fn drain_diagnostics(&mut self) -> Vec<Diagnostic> {
        std::mem::take(&mut self.diagnostics)
    }

    pub(super) fn diag(&mut self, kind: DiagnosticKind, reason: impl Into<String>) {
        self.diagnostics.push(Diagnostic::new(self.id, kind, reason));
    }

    pub(super) fn set_state(&mut self, state: SessionState) {
        self.state = state;
    }

    pub(super) fn set_session_key(&mut self, key: Option<KeyMaterial>) {
        self.session_key = key;
    }

    /// Erases the ephemeral challenge and response values.
    pub fn delete_ephemeral(&mut self) {
        if let Some(e) = self.ephemeral.as_mut() {
            *e = Ephemeral {
                t_a: None,
                cd_a: None,
                t_b: None,
                cd_b: None,
            };
        }
        self.ephemeral = None;
    }

    fn header(slot: KeySlot) -> JanusHeader {
        JanusHeader::new(slot.class_user_id, slot.application_type)
    }

    fn tx_s(&self) -> f64 {
        tx_duration_s(BASELINE_BITS)
    }

    /// Step 1: encrypt the local timestamp and clock class under the slot's
    /// long-term key. Allowed from idle or failed, and from challenged to
    /// re-challenge.
    pub fn make_challenge(
        &mut self,
        now: DateTime<Utc>,
        store: &mut KeyStore,
    ) -> Result<BaselinePacket, AuthError> {
        if self.role != Role::Initiator
            || !matches!(
                self.state,
                SessionState::Idle | SessionState::Challenged | SessionState::Failed
            )
        {
            return Err(AuthError::InvalidState {
                expected: "idle initiator",
                actual: self.state,
            });
        }
        let slot = self.slot.expect("initiators are built with a slot");
        let record = store.usable_longterm(slot, now)?;
        if record.peer.is_none() {
            return Err(AuthError::PeerUnbound(slot));
        }
        let (t_a, window) = stamp(now);
        let cd_a = self.local.clock_descriptor;
        let block = record.block_cipher().encrypt_u32(pack_challenge(t_a, cd_a))?;
        // own challenges count as used so a reflected copy is refused
        if !store.replay_insert(slot, t_a, window) {
            return Err(AuthError::TimestampReused);
        }
        self.peer_mmsi = None;
        self.ephemeral = Some(Ephemeral {
            t_a: Some(t_a),
            cd_a: Some(cd_a),
            t_b: None,
            cd_b: None,
        });
        self.state = SessionState::Challenged;
        self.diag(DiagnosticKind::ChallengeSent, format!("T_A {t_a}"));
        let adb = AuthAdb {
            encrypted_block: block,
            syn: true,
            ack: false,
        };
        Ok(BaselinePacket::new(Self::header(slot), adb.to_adb()))
    }

    /// Step 2 at a responder. Returns the response packet, or `None` when the
    /// challenge is dropped (see [`drain_diagnostics`](Self::drain_diagnostics)).
    /// On success the session key is stored in `store` under the peer MMSI.
    pub fn handle_challenge(
        &mut self,
        packet: &BaselinePacket,
        now: DateTime<Utc>,
        store: &mut KeyStore,
    ) -> Option<BaselinePacket> {
        let adb = AuthAdb::from_adb(packet.adb);
        if !(adb.syn && !adb.ack) {
            self.diag(DiagnosticKind::WrongFlags, "challenge needs SYN=1 ACK=0");
            return None;
        }
        let class = packet.header.class_user_id;
        let received = add_secs(now, -self.config.processing_delay_s);
        let (t_b, window) = stamp(received);
        let cd_b = self.local.clock_descriptor;
        let tx = self.tx_s();
        let config = self.config;

        let candidates: Vec<&LongTermKeyRecord> = store
            .longterm_records()
            .filter(|r| r.slot.class_user_id == class && !r.is_expired(now))
            .collect();
        let mut rejected: Vec<(DiagnosticKind, String)> = Vec::new();
        let matches = trial_decrypt_all(candidates, adb.encrypted_block, |rec, t_a, cd_a| {
            let w = config.window_s(cd_a, cd_b, secs_between(rec.epoch, now));
            let lag = t_b.wrapping_diff_ms(t_a) as f64 / 1e3 - tx;
            if lag.abs() > w / 2.0 {
                rejected.push((
                    DiagnosticKind::OutOfWindow,
                    format!("{}: lag {lag:.3} s outside ±{:.3} s", rec.slot, w / 2.0),
                ));
                return false;
            }
            if store.replay_seen(rec.slot, t_a) {
                rejected.push((DiagnosticKind::Replay, format!("{}: T_A {t_a} reused", rec.slot)));
                return false;
            }
            true
        });

        let chosen = match matches.as_slice() {
            [] => {
                if rejected.is_empty() {
                    self.diag(DiagnosticKind::NoKeyMatch, "no key yields a legal timestamp");
                }
                for (kind, why) in rejected {
                    self.diag(kind, why);
                }
                return None;
            }
            [only] => *only,
            many => {
                let pick = many
                    .iter()
                    .find(|m| m.slot.application_type == packet.header.application_type)
                    .unwrap_or(&many[0]);
                self.diag(
                    DiagnosticKind::AmbiguousKey,
                    format!("{} keys accepted; using {}", many.len(), pick.slot),
                );
                *pick
            }
        };

        let record = store
            .lookup_longterm(chosen.slot, now)
            .expect("matched record exists")
            .record;
        let Some(peer) = record.peer else {
            self.diag(DiagnosticKind::PeerUnbound, format!("{} has no peer MMSI", chosen.slot));
            return None;
        };
        let response_block = record
            .block_cipher()
            .encrypt_u32(pack_challenge(t_b, cd_b))
            .expect("RC5-16 block");
        let key = derive_session_key_with(
            record.kdf_cipher(),
            peer,
            chosen.timestamp,
            chosen.clock_descriptor,
            self.local.mmsi,
            t_b,
            cd_b,
        );
        store.replay_insert(chosen.slot, chosen.timestamp, window);
        store.replay_insert(chosen.slot, t_b, window);
        store.record_session(peer, key, now);

        self.slot = Some(chosen.slot);
        self.peer_mmsi = Some(peer);
        self.ephemeral = Some(Ephemeral {
            t_a: Some(chosen.timestamp),
            cd_a: Some(chosen.clock_descriptor),
            t_b: Some(t_b),
            cd_b: Some(cd_b),
        });
        self.delete_ephemeral();
        self.session_key = None;
        self.state = SessionState::Responded;
        self.diag(DiagnosticKind::Responded, format!("peer {peer} via {}", chosen.slot));

        let adb = AuthAdb {
            encrypted_block: response_block,
            syn: true,
            ack: true,
        };
        Some(BaselinePacket::new(Self::header(chosen.slot), adb.to_adb()))
    }

    /// Step 3 at the initiator. `Ok(None)` means the packet was silently
    /// dropped; a timing failure is reported as an error and leaves the
    /// session waiting for a valid response.
    pub fn handle_response(
        &mut self,
        packet: &BaselinePacket,
        now: DateTime<Utc>,
        store: &mut KeyStore,
    ) -> Result<Option<AuthResult>, AuthError> {
        let adb = AuthAdb::from_adb(packet.adb);
        if !(adb.syn && adb.ack) {
            self.diag(DiagnosticKind::WrongFlags, "response needs SYN=1 ACK=1");
            return Ok(None);
        }
        if self.state != SessionState::Challenged {
            let kind = if matches!(self.state, SessionState::Established | SessionState::Renewing) {
                DiagnosticKind::LateResponse
            } else {
                DiagnosticKind::UnexpectedPacket
            };
            self.diag(kind, format!("response while {}", self.state));
            return Ok(None);
        }
        let slot = self.slot.expect("initiators are built with a slot");
        if packet.header.class_user_id != slot.class_user_id
            || packet.header.application_type != slot.application_type
        {
            self.diag(DiagnosticKind::UnexpectedPacket, "response for another key slot");
            return Ok(None);
        }
        let record = store.usable_longterm(slot, now)?;
        let peer = record.peer.ok_or(AuthError::PeerUnbound(slot))?;
        let plain = record.block_cipher().decrypt_u32(adb.encrypted_block)?;
        let Ok((t_b, cd_b)) = unpack_challenge(plain) else {
            self.diag(DiagnosticKind::NoKeyMatch, "response decrypts to an illegal timestamp");
            return Ok(None);
        };
        let eph = self.ephemeral.expect("challenged sessions hold T_A");
        let (t_a, cd_a) = (eph.t_a.expect("T_A"), eph.cd_a.expect("CD_A"));

        let pd = self.config.processing_delay_s;
        let tx = self.tx_s();
        let (t_a2, window) = stamp(add_secs(now, -pd));
        let base = t_a.as_secs();
        let inputs = RangingInputs {
            t_a1: base + tx,
            t_b1: base + t_b.wrapping_diff_ms(t_a) as f64 / 1e3,
            t_a2: base + t_a2.wrapping_diff_ms(t_a) as f64 / 1e3 - pd - tx,
        };
        let w = self
            .config
            .window_s(cd_a, cd_b, secs_between(record.epoch, now));
        let asym = inputs.asymmetry_s();
        if asym.abs() > w || inputs.round_trip_s() < 0.0 {
            self.diag(
                DiagnosticKind::TimingFailure,
                format!("asymmetry {asym:.3} s, round trip {:.3} s, window {w:.3} s", inputs.round_trip_s()),
            );
            return Err(AuthError::TimingAsymmetry {
                asymmetry_s: asym,
                window_s: w,
            });
        }
        if store.replay_seen(slot, t_b) {
            self.diag(DiagnosticKind::Replay, format!("T_B {t_b} reused"));
            return Ok(None);
        }
        let key = derive_session_key_with(
            record.kdf_cipher(),
            self.local.mmsi,
            t_a,
            cd_a,
            peer,
            t_b,
            cd_b,
        );
        store.replay_insert(slot, t_b, window);
        store.record_session(peer, key.clone(), now);
        self.ephemeral = Some(Ephemeral {
            t_b: Some(t_b),
            cd_b: Some(cd_b),
            ..eph
        });
        self.delete_ephemeral();
        self.t_a2 = Some(t_a2);
        self.peer_mmsi = Some(peer);
        self.session_key = Some(key.clone());
        self.state = SessionState::Established;
        self.diag(DiagnosticKind::Established, format!("peer {peer}, asymmetry {asym:.3} s"));
        Ok(Some(AuthResult {
            peer,
            slot,
            session_key: key,
            peer_clock: cd_b,
            t_a,
            t_b,
            t_a2,
            ranging: inputs,
        }))
    }

    /// Marks the initiator's pending challenge as lost.
    pub fn expire_challenge(&mut self) {
        if self.state == SessionState::Challenged {
            self.delete_ephemeral();
            self.state = SessionState::Failed;
        }
    }

    /// Responder side: a packet authenticated under the session key confirms
    /// the initiator holds it.
    pub fn confirm_established(&mut self, store: &KeyStore) {
        if self.state == SessionState::Responded {
            if let Some(rec) = self.peer_mmsi.and_then(|p| store.lookup_session(p)) {
                self.session_key = Some(rec.key().clone());
                self.state = SessionState::Established;
            }
        }
    }
}
