//! Long-term keys, session keys and the per-key replay cache, with a
//! line-oriented text file format:
//!
//! ```text
//! LT <class_id> <app_type> <key_hex> <epoch_iso8601> <lifetime_days> [peer_mmsi]
//! SK <mmsi> <key_hex> <created_iso8601> <packets_used>
//! RP <class_id> <app_type> <timestamp> <window_index>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Ephemeral protocol
//! values (challenge timestamps and clock descriptors) are never stored here.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use crate::bitcodec::{unpack_challenge, ClockDescriptor, Mmsi, Timestamp29};
use crate::cipher::{KeyMaterial, Rc5, Rc5Variant};

pub const DEFAULT_LIFETIME_DAYS: u32 = 60;

/// Session keys should be renewed beyond this many packets.
pub const SESSION_PACKET_LIMIT: u64 = 10_000;

#[derive(Debug, Error)]
pub enum KeyStoreError {
    #[error("no long-term key for {0}")]
    NotFound(KeySlot),
    #[error("long-term key for {0} has expired")]
    Expired(KeySlot),
    #[error("a long-term key for {0} already exists")]
    Duplicate(KeySlot),
    #[error("no session with {0}")]
    NoSession(Mmsi),
    #[error("application type {0} exceeds 63")]
    AppType(u8),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cleartext header coordinates that select a long-term key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeySlot {
    pub class_user_id: u8,
    pub application_type: u8,
}

impl KeySlot {
    pub fn new(class_user_id: u8, application_type: u8) -> Result<Self, KeyStoreError> {
        if application_type > 63 {
            return Err(KeyStoreError::AppType(application_type));
        }
        Ok(Self {
            class_user_id,
            application_type,
        })
    }
}

impl fmt::Display for KeySlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "class {} type {}", self.class_user_id, self.application_type)
    }
}

/// Pre-shared long-term key. `peer` is the MMSI of the device the key is
/// shared with, needed to bind session keys to identities.
#[derive(Debug, Clone)]
pub struct LongTermKeyRecord {
    pub slot: KeySlot,
    key: KeyMaterial,
    pub epoch: DateTime<Utc>,
    pub lifetime_days: u32,
    pub peer: Option<Mmsi>,
    block_cipher: OnceLock<Rc5>,
    kdf_cipher: OnceLock<Rc5>,
}

impl LongTermKeyRecord {
    pub fn new(slot: KeySlot, key: KeyMaterial, epoch: DateTime<Utc>, peer: Option<Mmsi>) -> Self {
        Self {
            slot,
            key,
            epoch,
            lifetime_days: DEFAULT_LIFETIME_DAYS,
            peer,
            block_cipher: OnceLock::new(),
            kdf_cipher: OnceLock::new(),
        }
    }

    pub fn with_lifetime(mut self, days: u32) -> Self {
        self.lifetime_days = days;
        self
    }

    pub fn key(&self) -> &KeyMaterial {
        &self.key
    }

    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        now - self.epoch > chrono::TimeDelta::days(i64::from(self.lifetime_days))
    }

    /// RC5-16/255/255 keyed with this record, built on first use.
    pub fn block_cipher(&self) -> &Rc5 {
        self.block_cipher.get_or_init(|| {
            Rc5::new(Rc5Variant::RC5_16_255_255, self.key.as_bytes()).expect("key fits variant")
        })
    }

    /// RC5-64/255/255 keyed with this record, for session key derivation.
    pub fn kdf_cipher(&self) -> &Rc5 {
        self.kdf_cipher.get_or_init(|| {
            Rc5::new(Rc5Variant::RC5_64_255_255, self.key.as_bytes()).expect("key fits variant")
        })
    }
}

/// Established session key for one peer.
#[derive(Debug, Clone)]
pub struct SessionKeyRecord {
    pub peer_mmsi: Mmsi,
    key: KeyMaterial,
    pub created: DateTime<Utc>,
    pub packets_used: u64,
    mac_cipher: OnceLock<Rc5>,
    payload_cipher: OnceLock<Rc5>,
}

impl SessionKeyRecord {
    pub fn new(peer_mmsi: Mmsi, key: KeyMaterial, created: DateTime<Utc>) -> Self {
        Self {
            peer_mmsi,
            key,
            created,
            packets_used: 0,
            mac_cipher: OnceLock::new(),
            payload_cipher: OnceLock::new(),
        }
    }

    pub fn key(&self) -> &KeyMaterial {
        &self.key
    }

    pub fn needs_renewal(&self) -> bool {
        self.packets_used > SESSION_PACKET_LIMIT
    }

    /// RC5-16/255/255 under the session key: MACs and key wrapping.
    pub fn mac_cipher(&self) -> &Rc5 {
        self.mac_cipher.get_or_init(|| {
            Rc5::new(Rc5Variant::RC5_16_255_255, self.key.as_bytes()).expect("key fits variant")
        })
    }

    /// RC5-32/255/255 under the session key: unicast payloads.
    pub fn payload_cipher(&self) -> &Rc5 {
        self.payload_cipher.get_or_init(|| {
            Rc5::new(Rc5Variant::RC5_32_255_255, self.key.as_bytes()).expect("key fits variant")
        })
    }
}

/// Timestamps already accepted under one long-term key, with the window in
/// which each was seen. A value is refused again in any later window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayCache {
    seen: BTreeMap<u32, i64>,
}

impl ReplayCache {
    pub fn contains(&self, ts: Timestamp29) -> bool {
        self.seen.contains_key(&ts.value())
    }

    /// Returns false if the timestamp was already present.
    pub fn insert(&mut self, ts: Timestamp29, window: i64) -> bool {
        use std::collections::btree_map::Entry;
        match self.seen.entry(ts.value()) {
            Entry::Occupied(_) => false,
            Entry::Vacant(v) => {
                v.insert(window);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, i64)> + '_ {
        self.seen.iter().map(|(&t, &w)| (t, w))
    }
}

/// Result of [`KeyStore::lookup_longterm`]: expiry is reported, not enforced.
#[derive(Debug, Clone, Copy)]
pub struct LongTermLookup<'a> {
    pub record: &'a LongTermKeyRecord,
    pub expired: bool,
}

/// One successful trial decryption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialMatch {
    pub slot: KeySlot,
    pub timestamp: Timestamp29,
    pub clock_descriptor: ClockDescriptor,
}

/// Decrypts `ciphertext` under every record and keeps those whose plaintext
/// is a legal timestamp accepted by `validator`.
pub fn trial_decrypt_all<'a, F>(
    records: impl IntoIterator<Item = &'a LongTermKeyRecord>,
    ciphertext: u32,
    mut validator: F,
) -> Vec<TrialMatch>
where
    F: FnMut(&LongTermKeyRecord, Timestamp29, ClockDescriptor) -> bool,
{
    records
        .into_iter()
        .filter_map(|record| {
            let plain = record
                .block_cipher()
                .decrypt_u32(ciphertext)
                .expect("RC5-16 block");
            let (timestamp, clock_descriptor) = unpack_challenge(plain).ok()?;
            validator(record, timestamp, clock_descriptor).then_some(TrialMatch {
                slot: record.slot,
                timestamp,
                clock_descriptor,
            })
        })
        .collect()
}

/// Expected number of wrong keys that accept a random ciphertext, for a table
/// of `keys` entries and an acceptance window `window_ms` wide.
pub fn analytic_false_accept_rate(keys: usize, window_ms: f64) -> f64 {
    // a uniform 32-bit plaintext carries 29 timestamp bits
    keys as f64 * window_ms / (1u64 << 29) as f64
}

/// Expected number of wrong session keys whose 8-bit tag matches.
pub fn analytic_tag_collision_rate(wrong_keys: usize) -> f64 {
    wrong_keys as f64 / 256.0
}

#[derive(Debug, Clone, Default)]
pub struct KeyStore {
    longterm: BTreeMap<KeySlot, LongTermKeyRecord>,
    sessions: BTreeMap<Mmsi, SessionKeyRecord>,
    replay: BTreeMap<KeySlot, ReplayCache>,
}

impl KeyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_longterm(&mut self, record: LongTermKeyRecord) -> Result<(), KeyStoreError> {
        if self.longterm.contains_key(&record.slot) {
            return Err(KeyStoreError::Duplicate(record.slot));
        }
        self.longterm.insert(record.slot, record);
        Ok(())
    }

    /// Installs a new long-term key for the slot, starting a fresh key
    /// lifetime: the slot's replay cache is cleared.
    pub fn replace_longterm(&mut self, record: LongTermKeyRecord) {
        self.replay.remove(&record.slot);
        self.longterm.insert(record.slot, record);
    }

    pub fn lookup_longterm(
        &self,
        slot: KeySlot,
        now: DateTime<Utc>,
    ) -> Result<LongTermLookup<'_>, KeyStoreError> {
        let record = self.longterm.get(&slot).ok_or(KeyStoreError::NotFound(slot))?;
        Ok(LongTermLookup {
            record,
            expired: record.is_expired(now),
        })
    }

    /// Like [`lookup_longterm`](Self::lookup_longterm) but refuses expired keys.
    pub fn usable_longterm(
        &self,
        slot: KeySlot,
        now: DateTime<Utc>,
    ) -> Result<&LongTermKeyRecord, KeyStoreError> {
        let found = self.lookup_longterm(slot, now)?;
        if found.expired {
            return Err(KeyStoreError::Expired(slot));
        }
        Ok(found.record)
    }

    pub fn longterm_records(&self) -> impl Iterator<Item = &LongTermKeyRecord> {
        self.longterm.values()
    }

    pub fn longterm_for_peer(&self, peer: Mmsi) -> Option<&LongTermKeyRecord> {
        self.longterm.values().find(|r| r.peer == Some(peer))
    }

    pub fn replay_cache(&self, slot: KeySlot) -> Option<&ReplayCache> {
        self.replay.get(&slot)
    }

    pub fn replay_seen(&self, slot: KeySlot, ts: Timestamp29) -> bool {
        self.replay.get(&slot).is_some_and(|c| c.contains(ts))
    }

    /// Marks `ts` used under `slot`; false if it already was.
    pub fn replay_insert(&mut self, slot: KeySlot, ts: Timestamp29, window: i64) -> bool {
        self.replay.entry(slot).or_default().insert(ts, window)
    }

    /// Stores a session key, replacing any previous one for the peer.
    pub fn record_session(&mut self, peer: Mmsi, key: KeyMaterial, now: DateTime<Utc>) {
        self.sessions.insert(peer, SessionKeyRecord::new(peer, key, now));
    }

    pub fn lookup_session(&self, peer: Mmsi) -> Option<&SessionKeyRecord> {
        self.sessions.get(&peer)
    }

    pub fn remove_session(&mut self, peer: Mmsi) -> Option<SessionKeyRecord> {
        self.sessions.remove(&peer)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionKeyRecord> {
        self.sessions.values()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Counts one packet sent under the session; true once renewal is due.
    pub fn note_packet_used(&mut self, peer: Mmsi) -> Result<bool, KeyStoreError> {
        let rec = self
            .sessions
            .get_mut(&peer)
            .ok_or(KeyStoreError::NoSession(peer))?;
        rec.packets_used += 1;
        Ok(rec.needs_renewal())
    }

    pub fn to_text(&self) -> String {
        let iso = |t: &DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let mut out = String::new();
        for r in self.longterm.values() {
            let _ = write!(
                out,
                "LT {} {} {} {} {}",
                r.slot.class_user_id,
                r.slot.application_type,
                r.key.to_hex(),
                iso(&r.epoch),
                r.lifetime_days
            );
            if let Some(peer) = r.peer {
                let _ = write!(out, " {peer}");
            }
            out.push('\n');
        }
        for s in self.sessions.values() {
            let _ = writeln!(
                out,
                "SK {} {} {} {}",
                s.peer_mmsi,
                s.key.to_hex(),
                iso(&s.created),
                s.packets_used
            );
        }
        for (slot, cache) in &self.replay {
            for (ts, window) in cache.iter() {
                let _ = writeln!(
                    out,
                    "RP {} {} {} {}",
                    slot.class_user_id, slot.application_type, ts, window
                );
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, KeyStoreError> {
        let mut store = KeyStore::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| KeyStoreError::Parse { line, msg };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            let num = |i: usize, what: &str| -> Result<i64, KeyStoreError> {
                fields
                    .get(i)
                    .ok_or_else(|| err(format!("missing {what}")))?
                    .parse::<i64>()
                    .map_err(|e| err(format!("bad {what}: {e}")))
            };
            let byte = |i: usize, what: &str| -> Result<u8, KeyStoreError> {
                u8::try_from(num(i, what)?).map_err(|_| err(format!("{what} out of range")))
            };
            let slot = |store_fields: (u8, u8)| {
                KeySlot::new(store_fields.0, store_fields.1).map_err(|e| err(e.to_string()))
            };
            let key = |i: usize| -> Result<KeyMaterial, KeyStoreError> {
                KeyMaterial::from_hex(fields.get(i).ok_or_else(|| err("missing key".into()))?)
                    .map_err(|e| err(e.to_string()))
            };
            let time = |i: usize| -> Result<DateTime<Utc>, KeyStoreError> {
                let s = fields.get(i).ok_or_else(|| err("missing time".into()))?;
                DateTime::parse_from_rfc3339(s)
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|e| err(format!("bad time {s:?}: {e}")))
            };
            let mmsi = |i: usize| -> Result<Mmsi, KeyStoreError> {
                fields
                    .get(i)
                    .ok_or_else(|| err("missing mmsi".into()))?
                    .parse()
                    .map_err(|e: crate::bitcodec::CodecError| err(e.to_string()))
            };
            match fields[0] {
                "LT" if fields.len() == 6 || fields.len() == 7 => {
                    let slot = slot((byte(1, "class id")?, byte(2, "app type")?))?;
                    let peer = if fields.len() == 7 { Some(mmsi(6)?) } else { None };
                    let lifetime = u32::try_from(num(5, "lifetime")?)
                        .map_err(|_| err("lifetime out of range".into()))?;
                    let rec = LongTermKeyRecord::new(slot, key(3)?, time(4)?, peer)
                        .with_lifetime(lifetime);
                    store.insert_longterm(rec).map_err(|e| err(e.to_string()))?;
                }
                "SK" if fields.len() == 5 => {
                    let peer = mmsi(1)?;
                    let mut rec = SessionKeyRecord::new(peer, key(2)?, time(3)?);
                    rec.packets_used = u64::try_from(num(4, "packets used")?)
                        .map_err(|_| err("negative packet count".into()))?;
                    store.sessions.insert(peer, rec);
                }
                "RP" if fields.len() == 5 => {
                    let slot = slot((byte(1, "class id")?, byte(2, "app type")?))?;
                    let ts = u32::try_from(num(3, "timestamp")?)
                        .ok()
                        .and_then(|v| Timestamp29::new(v).ok())
                        .ok_or_else(|| err("timestamp out of range".into()))?;
                    store.replay_insert(slot, ts, num(4, "window")?);
                }
                other => return Err(err(format!("unrecognised record {other:?}"))),
            }
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, KeyStoreError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), KeyStoreError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t0() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2026-03-01T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    fn record(slot: KeySlot, seed: u64) -> LongTermKeyRecord {
        let key = KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(seed));
        LongTermKeyRecord::new(slot, key, t0(), Some(Mmsi::new(257_000_001).unwrap()))
    }

    #[test]
    fn insert_and_lookup() {
        let mut ks = KeyStore::new();
        let slot = KeySlot::new(9, 3).unwrap();
        ks.insert_longterm(record(slot, 1)).unwrap();
        let found = ks.lookup_longterm(slot, t0()).unwrap();
        assert_eq!(found.record.key(), record(slot, 1).key());
        assert!(!found.expired);
        assert!(matches!(
            ks.lookup_longterm(KeySlot::new(9, 4).unwrap(), t0()),
            Err(KeyStoreError::NotFound(_))
        ));
        assert!(matches!(
            ks.insert_longterm(record(slot, 2)),
            Err(KeyStoreError::Duplicate(_))
        ));
        assert!(KeySlot::new(1, 64).is_err());
    }

    #[test]
    fn expiry_after_sixty_days() {
        let mut ks = KeyStore::new();
        let slot = KeySlot::new(1, 1).unwrap();
        ks.insert_longterm(record(slot, 1)).unwrap();
        let day60 = t0() + chrono::TimeDelta::days(60);
        let day61 = t0() + chrono::TimeDelta::days(61);
        assert!(!ks.lookup_longterm(slot, day60).unwrap().expired);
        assert!(ks.lookup_longterm(slot, day61).unwrap().expired);
        assert!(matches!(
            ks.usable_longterm(slot, day61),
            Err(KeyStoreError::Expired(_))
        ));
    }

    #[test]
    fn trial_decrypt_finds_true_key() {
        let slots: Vec<KeySlot> = (0..8).map(|i| KeySlot::new(5, i).unwrap()).collect();
        let records: Vec<LongTermKeyRecord> =
            slots.iter().enumerate().map(|(i, s)| record(*s, i as u64)).collect();
        let ts = Timestamp29::new(123_456_789).unwrap();
        let cd = ClockDescriptor::new(3).unwrap();
        let ct = records[5]
            .block_cipher()
            .encrypt_u32(crate::bitcodec::pack_challenge(ts, cd))
            .unwrap();
        let hits = trial_decrypt_all(&records, ct, |_, t, _| {
            t.wrapping_diff_ms(ts).abs() <= 10_000
        });
        assert_eq!(
            hits,
            vec![TrialMatch {
                slot: slots[5],
                timestamp: ts,
                clock_descriptor: cd
            }]
        );
        assert!(trial_decrypt_all(&[], ct, |_, _, _| true).is_empty());
    }

    #[test]
    fn sessions_replace_and_coexist() {
        let mut ks = KeyStore::new();
        let a = Mmsi::new(1).unwrap();
        let b = Mmsi::new(2).unwrap();
        ks.record_session(a, KeyMaterial::new(vec![1; 32]).unwrap(), t0());
        ks.record_session(b, KeyMaterial::new(vec![2; 32]).unwrap(), t0());
        assert_eq!(ks.lookup_session(a).unwrap().key().as_bytes(), &[1; 32]);
        assert_eq!(ks.lookup_session(b).unwrap().key().as_bytes(), &[2; 32]);
        ks.record_session(a, KeyMaterial::new(vec![3; 32]).unwrap(), t0());
        assert_eq!(ks.lookup_session(a).unwrap().key().as_bytes(), &[3; 32]);
        assert_eq!(ks.session_count(), 2);
    }

    #[test]
    fn packet_counter_advises_renewal() {
        let mut ks = KeyStore::new();
        let a = Mmsi::new(1).unwrap();
        ks.record_session(a, KeyMaterial::new(vec![1; 32]).unwrap(), t0());
        for _ in 0..SESSION_PACKET_LIMIT {
            assert!(!ks.note_packet_used(a).unwrap());
        }
        assert!(ks.note_packet_used(a).unwrap());
        assert!(ks.note_packet_used(Mmsi::new(2).unwrap()).is_err());
    }

    #[test]
    fn replay_cache_survives_persistence() {
        let mut ks = KeyStore::new();
        let slot = KeySlot::new(7, 2).unwrap();
        ks.insert_longterm(record(slot, 4)).unwrap();
        ks.record_session(Mmsi::new(42).unwrap(), KeyMaterial::new(vec![9; 32]).unwrap(), t0());
        let ts = Timestamp29::new(5_000).unwrap();
        assert!(ks.replay_insert(slot, ts, 12));
        assert!(!ks.replay_insert(slot, ts, 13));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.keys");
        ks.save(&path).unwrap();
        let mut back = KeyStore::load(&path).unwrap();
        assert!(back.replay_seen(slot, ts));
        assert!(!back.replay_insert(slot, ts, 14));
        assert_eq!(back.to_text(), ks.to_text());
        assert_eq!(
            back.lookup_longterm(slot, t0()).unwrap().record.peer,
            Some(Mmsi::new(257_000_001).unwrap())
        );
    }

    #[test]
    fn replacing_a_key_starts_a_new_lifetime() {
        let mut ks = KeyStore::new();
        let slot = KeySlot::new(7, 2).unwrap();
        ks.insert_longterm(record(slot, 4)).unwrap();
        let ts = Timestamp29::new(5_000).unwrap();
        ks.replay_insert(slot, ts, 1);
        ks.replace_longterm(record(slot, 5));
        assert!(!ks.replay_seen(slot, ts));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = KeyStore::from_text("# comment\n\nLT 1 2 zz 2026-01-01T00:00:00Z 60\n").unwrap_err();
        assert!(matches!(err, KeyStoreError::Parse { line: 3, .. }));
        assert!(KeyStore::from_text("XX 1\n").is_err());
        assert!(KeyStore::from_text("RP 1 2 518400000 0\n").is_err());
        assert!(KeyStore::from_text("LT 1 64 00 2026-01-01T00:00:00Z 60\n").is_err());
    }

    #[test]
    fn analytic_rates() {
        let r = analytic_false_accept_rate(64, 20_000.0);
        assert!((r - 2.384e-3).abs() < 1e-5);
        assert!((analytic_tag_collision_rate(63) - 0.246).abs() < 1e-3);
    }
}
