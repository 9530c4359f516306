use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use super::renewal::RENEWAL_FRAMES;
use super::session::{AuthResult, AuthSession};
use super::{AuthConfig, AuthError, Diagnostic, DiagnosticKind, LocalIdentity, SessionState};
use crate::bitcodec::{
    AuthAdb, BaselinePacket, CargoFrame, JanusHeader, Mmsi, UnicastPacket, UNICAST_BYTES,
};
use crate::cipher::KeyMaterial;
use crate::keystore::{KeySlot, KeyStore};
use crate::time::secs_between;
use crate::unicast::{receive_unicast, send_unicast, UnicastError, UnicastOutcome};

/// Renewal fragments older than this are discarded before reassembly.
pub const REASSEMBLY_TIMEOUT_S: f64 = 60.0;

/// A packet ready for the modem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outgoing {
    Baseline(BaselinePacket),
    Cargo(CargoFrame),
    Unicast(UnicastPacket),
}

impl Outgoing {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Outgoing::Baseline(p) => p.encode_bytes().expect("valid fields").to_vec(),
            Outgoing::Cargo(f) => f.encode().expect("valid fields"),
            Outgoing::Unicast(p) => p.encode().expect("valid fields").to_vec(),
        }
    }

    pub fn bits(&self) -> usize {
        match self {
            Outgoing::Baseline(_) => 64,
            Outgoing::Cargo(f) => 64 + 8 * (f.body.len() + 1),
            Outgoing::Unicast(_) => UNICAST_BYTES * 8,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Outgoing::Baseline(p) => match AuthAdb::from_adb(p.adb) {
                AuthAdb { syn: true, ack: false, .. } => "challenge",
                AuthAdb { syn: true, ack: true, .. } => "response",
                AuthAdb { syn: false, ack: true, .. } => "renewal-confirm",
                _ => "baseline",
            },
            Outgoing::Cargo(_) => "renewal-frame",
            Outgoing::Unicast(_) => "unicast",
        }
    }
}

/// What an inbound packet did at this device.
#[derive(Debug, Clone)]
pub enum Inbound {
    /// Silently discarded; the reason is in the diagnostics.
    Dropped,
    Responded { peer: Mmsi },
    Established(Box<AuthResult>),
    TimingRejected { asymmetry_s: f64, window_s: f64 },
    RenewalFragment,
    RenewalAccepted { peer: Mmsi },
    RenewalConfirmed { peer: Mmsi },
    Unicast(UnicastOutcome),
}

/// One device: identity, key store and its sessions, driven by packets and
/// commands with explicit timestamps from the device clock.
#[derive(Debug)]
pub struct Endpoint {
    identity: LocalIdentity,
    config: AuthConfig,
    store: KeyStore,
    initiators: BTreeMap<KeySlot, AuthSession>,
    responders: BTreeMap<Mmsi, AuthSession>,
    fragments: Vec<(DateTime<Utc>, CargoFrame)>,
    next_id: u64,
    diagnostics: Vec<Diagnostic>,
}

impl Endpoint {
    pub fn new(identity: LocalIdentity, config: AuthConfig, store: KeyStore) -> Self {
        Self {
            identity,
            config,
            store,
            initiators: BTreeMap::new(),
            responders: BTreeMap::new(),
            fragments: Vec::new(),
            next_id: 1,
            diagnostics: Vec::new(),
        }
    }

    pub fn identity(&self) -> LocalIdentity {
        self.identity
    }

    pub fn config(&self) -> &AuthConfig {
        &self.config
    }

    pub fn store(&self) -> &KeyStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut KeyStore {
        &mut self.store
    }

    pub fn initiator(&self, slot: KeySlot) -> Option<&AuthSession> {
        self.initiators.get(&slot)
    }

    pub fn responder(&self, peer: Mmsi) -> Option<&AuthSession> {
        self.responders.get(&peer)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &AuthSession> {
        self.initiators.values().chain(self.responders.values())
    }

    pub fn drain_diagnostics(&mut self) -> Vec<Diagnostic> {
        let mut out = std::mem::take(&mut self.diagnostics);
        for s in self.initiators.values_mut().chain(self.responders.values_mut()) {
            out.extend(s.drain_diagnostics());
        }
        out.sort_by_key(|d| d.session_id);
        out
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn drop_with(&mut self, kind: DiagnosticKind, reason: impl Into<String>) -> Inbound {
        self.diagnostics.push(Diagnostic::new(0, kind, reason));
        Inbound::Dropped
    }

    /// Emits a challenge for `slot`, creating the initiator session on first
    /// use. A pending unanswered challenge is superseded.
    pub fn start_challenge(
        &mut self,
        slot: KeySlot,
        now: DateTime<Utc>,
    ) -> Result<Outgoing, AuthError> {
        if !self.initiators.contains_key(&slot) {
            let id = self.fresh_id();
            let session = AuthSession::initiator(id, self.identity, slot, self.config);
            self.initiators.insert(slot, session);
        }
        let session = self.initiators.get_mut(&slot).expect("inserted");
        if matches!(
            session.state(),
            SessionState::Established | SessionState::Renewing
        ) {
            let id = self.next_id;
            self.next_id += 1;
            *session = AuthSession::initiator(id, self.identity, slot, self.config);
        }
        session.make_challenge(now, &mut self.store).map(Outgoing::Baseline)
    }

    /// Abandons an unanswered challenge.
    pub fn expire_challenge(&mut self, slot: KeySlot) {
        if let Some(s) = self.initiators.get_mut(&slot) {
            s.expire_challenge();
        }
    }

    /// Sends `new_key` to the peer of an established initiator session.
    pub fn start_renewal(
        &mut self,
        slot: KeySlot,
        new_key: KeyMaterial,
    ) -> Result<Vec<Outgoing>, AuthError> {
        let session = self.initiators.get_mut(&slot).ok_or(AuthError::NoSession)?;
        let frames = session.renew_longterm(new_key, &self.store)?;
        Ok(frames.into_iter().map(Outgoing::Cargo).collect())
    }

    pub fn send_unicast(&mut self, dest: Mmsi, payload: u64) -> Result<Outgoing, AuthError> {
        let header = self
            .store
            .longterm_for_peer(dest)
            .map_or(JanusHeader::new(0, 0), |r| {
                JanusHeader::new(r.slot.class_user_id, r.slot.application_type)
            });
        let packet = send_unicast(&self.store, header, dest, payload).map_err(|e| match e {
            UnicastError::NoSession(_) => AuthError::NoSession,
            UnicastError::Codec(c) => AuthError::Codec(c),
            UnicastError::Cipher(c) => AuthError::Cipher(c),
        })?;
        self.store.note_packet_used(dest)?;
        Ok(Outgoing::Unicast(packet))
    }

    /// Processes one received packet. `now` is the local clock at decode
    /// completion. Returns the outcome and any packets to transmit.
    pub fn receive(&mut self, bytes: &[u8], now: DateTime<Utc>) -> (Inbound, Vec<Outgoing>) {
        match bytes.len() {
            0..=7 => (
                self.drop_with(DiagnosticKind::CrcFailure, format!("{} byte packet", bytes.len())),
                vec![],
            ),
            8 => match BaselinePacket::decode_bytes(bytes) {
                Ok(p) => self.receive_baseline(&p, now),
                Err(e) => (self.drop_with(DiagnosticKind::CrcFailure, e.to_string()), vec![]),
            },
            _ => self.receive_cargo(bytes, now),
        }
    }

    fn receive_baseline(
        &mut self,
        packet: &BaselinePacket,
        now: DateTime<Utc>,
    ) -> (Inbound, Vec<Outgoing>) {
        let adb = AuthAdb::from_adb(packet.adb);
        let slot = match KeySlot::new(packet.header.class_user_id, packet.header.application_type) {
            Ok(s) => s,
            Err(e) => return (self.drop_with(DiagnosticKind::UnexpectedPacket, e.to_string()), vec![]),
        };
        match (adb.syn, adb.ack) {
            (true, false) => {
                let id = self.fresh_id();
                let mut session = AuthSession::responder(id, self.identity, self.config);
                match session.handle_challenge(packet, now, &mut self.store) {
                    Some(reply) => {
                        let peer = session.peer_mmsi().expect("responded sessions know the peer");
                        if let Some(mut old) = self.responders.insert(peer, session) {
                            self.diagnostics.extend(old.drain_diagnostics());
                        }
                        (Inbound::Responded { peer }, vec![Outgoing::Baseline(reply)])
                    }
                    None => {
                        self.diagnostics.extend(session.drain_diagnostics());
                        (Inbound::Dropped, vec![])
                    }
                }
            }
            (true, true) => {
                let Some(session) = self.initiators.get_mut(&slot) else {
                    return (
                        self.drop_with(DiagnosticKind::UnexpectedPacket, "response without challenge"),
                        vec![],
                    );
                };
                match session.handle_response(packet, now, &mut self.store) {
                    Ok(Some(result)) => (Inbound::Established(Box::new(result)), vec![]),
                    Ok(None) => (Inbound::Dropped, vec![]),
                    Err(AuthError::TimingAsymmetry {
                        asymmetry_s,
                        window_s,
                    }) => (
                        Inbound::TimingRejected {
                            asymmetry_s,
                            window_s,
                        },
                        vec![],
                    ),
                    Err(e) => (self.drop_with(DiagnosticKind::NoKeyMatch, e.to_string()), vec![]),
                }
            }
            (false, true) => {
                let renewing = self
                    .initiators
                    .get_mut(&slot)
                    .filter(|s| s.state() == SessionState::Renewing);
                let Some(session) = renewing else {
                    return (
                        self.drop_with(DiagnosticKind::UnexpectedPacket, "no renewal pending"),
                        vec![],
                    );
                };
                match session.handle_renewal_confirmation(packet, now, &mut self.store) {
                    Ok(()) => (
                        Inbound::RenewalConfirmed {
                            peer: session.peer_mmsi().expect("peer"),
                        },
                        vec![],
                    ),
                    Err(_) => (Inbound::Dropped, vec![]),
                }
            }
            (false, false) => (
                self.drop_with(DiagnosticKind::WrongFlags, "plain baseline packet"),
                vec![],
            ),
        }
    }

    fn receive_cargo(&mut self, bytes: &[u8], now: DateTime<Utc>) -> (Inbound, Vec<Outgoing>) {
        // cargo length 10 means unicast, and only unicast frames are 18 bytes long
        if bytes.len() == UNICAST_BYTES {
            return match UnicastPacket::decode(bytes) {
                Ok(p) => self.receive_unicast(&p),
                Err(e) => (self.drop_with(DiagnosticKind::CrcFailure, e.to_string()), vec![]),
            };
        }
        let frame = match CargoFrame::decode(bytes) {
            Ok(f) => f,
            Err(e) => return (self.drop_with(DiagnosticKind::CrcFailure, e.to_string()), vec![]),
        };
        if frame.routing_id != self.identity.mmsi.routing_id() {
            return (Inbound::Dropped, vec![]);
        }
        self.fragments
            .retain(|(at, _)| secs_between(*at, now) <= REASSEMBLY_TIMEOUT_S);
        self.fragments.push((now, frame));
        if self.fragments.len() < RENEWAL_FRAMES {
            return (Inbound::RenewalFragment, vec![]);
        }
        let frames: Vec<CargoFrame> = std::mem::take(&mut self.fragments)
            .into_iter()
            .map(|(_, f)| f)
            .collect();
        let slot = KeySlot {
            class_user_id: frames[0].header.class_user_id,
            application_type: frames[0].header.application_type,
        };
        let peer = self
            .store
            .longterm_records()
            .find(|r| r.slot == slot)
            .and_then(|r| r.peer);
        let Some(session) = peer.and_then(|p| self.responders.get_mut(&p)) else {
            return (
                self.drop_with(DiagnosticKind::RenewalRejected, "renewal without responder session"),
                vec![],
            );
        };
        match session.accept_renewal(&frames, now, &mut self.store) {
            Ok(confirm) => (
                Inbound::RenewalAccepted {
                    peer: session.peer_mmsi().expect("peer"),
                },
                vec![Outgoing::Baseline(confirm)],
            ),
            Err(_) => (Inbound::Dropped, vec![]),
        }
    }

    fn receive_unicast(&mut self, packet: &UnicastPacket) -> (Inbound, Vec<Outgoing>) {
        match receive_unicast(&self.store, packet, self.identity.mmsi) {
            Ok(outcome) => {
                if let UnicastOutcome::Delivered { sender, .. } = outcome {
                    let _ = self.store.note_packet_used(sender);
                    if let Some(s) = self.responders.get_mut(&sender) {
                        s.confirm_established(&self.store);
                    }
                }
                (Inbound::Unicast(outcome), vec![])
            }
            Err(e) => (self.drop_with(DiagnosticKind::CrcFailure, e.to_string()), vec![]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcodec::ClockDescriptor;
    use crate::keystore::LongTermKeyRecord;
    use crate::time::add_secs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SLOT: KeySlot = KeySlot {
        class_user_id: 16,
        application_type: 3,
    };

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2026-03-02T08:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    fn pair() -> (Endpoint, Endpoint) {
        let (a, b) = (Mmsi::new(244_000_010).unwrap(), Mmsi::new(244_000_020).unwrap());
        let key = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(3));
        let mk = |me: Mmsi, peer: Mmsi, cd: u8| {
            let mut store = KeyStore::new();
            store
                .insert_longterm(LongTermKeyRecord::new(SLOT, key.clone(), t0(), Some(peer)))
                .unwrap();
            let id = LocalIdentity {
                mmsi: me,
                clock_descriptor: ClockDescriptor::new(cd).unwrap(),
            };
            Endpoint::new(id, AuthConfig::default(), store)
        };
        (mk(a, b, 2), mk(b, a, 4))
    }

    /// Delivers every packet in `out` to `to`, `gap` seconds after `at`.
    fn relay(to: &mut Endpoint, out: &[Outgoing], at: DateTime<Utc>) -> Vec<(Inbound, Vec<Outgoing>)> {
        out.iter()
            .map(|o| to.receive(&o.to_bytes(), at))
            .collect()
    }

    fn establish(a: &mut Endpoint, b: &mut Endpoint) -> DateTime<Utc> {
        let ch = a.start_challenge(SLOT, t0()).unwrap();
        let tb = add_secs(t0(), 2.5);
        let (inb, reply) = b.receive(&ch.to_bytes(), tb);
        assert!(matches!(inb, Inbound::Responded { .. }));
        let ta = add_secs(tb, 1.7);
        let (inb, _) = a.receive(&reply[0].to_bytes(), ta);
        assert!(matches!(inb, Inbound::Established(_)), "{inb:?}");
        ta
    }

    #[test]
    fn full_lifecycle_over_bytes() {
        let (mut a, mut b) = pair();
        let t = establish(&mut a, &mut b);
        let (ma, mb) = (a.identity().mmsi, b.identity().mmsi);
        assert_eq!(b.responder(ma).unwrap().state(), SessionState::Responded);

        let msg = a.send_unicast(mb, 42).unwrap();
        let (inb, _) = b.receive(&msg.to_bytes(), t);
        assert!(matches!(
            inb,
            Inbound::Unicast(UnicastOutcome::Delivered { sender, payload: 42 }) if sender == ma
        ));
        assert_eq!(b.responder(ma).unwrap().state(), SessionState::Established);

        let k2 = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(8));
        let frames = a.start_renewal(SLOT, k2.clone()).unwrap();
        assert_eq!(frames.len(), 2);
        assert!(frames.iter().all(|f| f.bits() == 64 + 8 * 133));
        let results = relay(&mut b, &frames, add_secs(t, 30.0));
        assert!(matches!(results[0].0, Inbound::RenewalFragment));
        assert!(matches!(results[1].0, Inbound::RenewalAccepted { .. }));
        let confirm = &results[1].1;
        let (inb, _) = a.receive(&confirm[0].to_bytes(), add_secs(t, 40.0));
        assert!(matches!(inb, Inbound::RenewalConfirmed { .. }));
        for ep in [&a, &b] {
            let rec = ep.store().lookup_longterm(SLOT, t).unwrap().record;
            assert_eq!(rec.key(), &k2);
        }

        // the same frames again are refused
        let again = relay(&mut b, &frames, add_secs(t, 50.0));
        assert!(matches!(again[1].0, Inbound::Dropped));
        assert!(again[1].1.is_empty());
    }

    #[test]
    fn renewal_needs_established_session() {
        let (mut a, _) = pair();
        let k2 = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(8));
        assert!(matches!(a.start_renewal(SLOT, k2.clone()), Err(AuthError::NoSession)));
        a.start_challenge(SLOT, t0()).unwrap();
        assert!(matches!(a.start_renewal(SLOT, k2), Err(AuthError::NoSession)));
    }

    #[test]
    fn wrong_confirmation_keeps_old_key() {
        let (mut a, mut b) = pair();
        let t = establish(&mut a, &mut b);
        let old = a.store().lookup_longterm(SLOT, t).unwrap().record.key().clone();
        let k2 = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(9));
        a.start_renewal(SLOT, k2).unwrap();
        let bogus = BaselinePacket::new(
            JanusHeader::new(SLOT.class_user_id, SLOT.application_type),
            AuthAdb {
                encrypted_block: 0x1234_5678,
                syn: false,
                ack: true,
            }
            .to_adb(),
        );
        let (inb, _) = a.receive(&bogus.encode_bytes().unwrap(), t);
        assert!(matches!(inb, Inbound::Dropped));
        assert_eq!(a.store().lookup_longterm(SLOT, t).unwrap().record.key(), &old);
        assert!(a
            .drain_diagnostics()
            .iter()
            .any(|d| d.kind == DiagnosticKind::RenewalUnconfirmed));
    }

    #[test]
    fn corrupted_packets_are_dropped() {
        let (mut a, mut b) = pair();
        let ch = a.start_challenge(SLOT, t0()).unwrap();
        let mut bytes = ch.to_bytes();
        bytes[3] ^= 0x10;
        let (inb, out) = b.receive(&bytes, add_secs(t0(), 2.0));
        assert!(matches!(inb, Inbound::Dropped) && out.is_empty());
        assert_eq!(b.drain_diagnostics()[0].kind, DiagnosticKind::CrcFailure);
    }

    #[test]
    fn second_response_to_one_challenge_is_dropped() {
        let (mut a, mut b) = pair();
        let ch = a.start_challenge(SLOT, t0()).unwrap();
        let (_, reply) = b.receive(&ch.to_bytes(), add_secs(t0(), 2.0));
        let (first, _) = a.receive(&reply[0].to_bytes(), add_secs(t0(), 3.5));
        assert!(matches!(first, Inbound::Established(_)));
        let (second, _) = a.receive(&reply[0].to_bytes(), add_secs(t0(), 3.6));
        assert!(matches!(second, Inbound::Dropped));
    }
}
