//! Fixtures shared by the benchmarks.

use chrono::{DateTime, Utc};
use janus_auth::authproto::{AuthConfig, Endpoint, Inbound, LocalIdentity};
use janus_auth::keystore::LongTermKeyRecord;
use janus_auth::time::add_secs;
use janus_auth::{ClockDescriptor, KeyMaterial, KeySlot, KeyStore, Mmsi};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SLOT: KeySlot = KeySlot {
    class_user_id: 16,
    application_type: 3,
};

pub fn t0() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-03-02T08:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

pub fn mmsi(n: u32) -> Mmsi {
    Mmsi::new(244_000_000 + n).unwrap()
}

/// Two endpoints sharing one long-term key, bound to each other.
pub fn endpoint_pair(seed: u64) -> (Endpoint, Endpoint) {
    let key = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(seed));
    let mk = |me: Mmsi, peer: Mmsi| {
        let mut store = KeyStore::new();
        store
            .insert_longterm(LongTermKeyRecord::new(SLOT, key.clone(), t0(), Some(peer)))
            .unwrap();
        let id = LocalIdentity {
            mmsi: me,
            clock_descriptor: ClockDescriptor::new(3).unwrap(),
        };
        Endpoint::new(id, AuthConfig::default(), store)
    };
    (mk(mmsi(1), mmsi(2)), mk(mmsi(2), mmsi(1)))
}

/// Challenge, response and completion on fresh endpoints. Returns true once
/// the initiator is established.
pub fn full_authentication(seed: u64) -> bool {
    let (mut a, mut b) = endpoint_pair(seed);
    let ch = a.start_challenge(SLOT, t0()).unwrap();
    let (_, reply) = b.receive(&ch.to_bytes(), add_secs(t0(), 2.0));
    let (inb, _) = a.receive(&reply[0].to_bytes(), add_secs(t0(), 4.0));
    matches!(inb, Inbound::Established(_))
}

/// Receiver store with `n` session keys for peers `mmsi(1..=n)`, and the
/// key of peer `mmsi(1)`.
pub fn session_store(n: u32) -> (KeyStore, KeyMaterial) {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(n));
    let mut store = KeyStore::new();
    let mut first = None;
    for i in 1..=n {
        let mut k = vec![0u8; 32];
        rng.fill_bytes(&mut k);
        let key = KeyMaterial::new(k).unwrap();
        first.get_or_insert_with(|| key.clone());
        store.record_session(mmsi(i), key, t0());
    }
    (store, first.expect("n > 0"))
}
