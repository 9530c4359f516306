//! Unicast messages under an established session key.
//!
//! A packet names only the receiver (low 24 bits of its MMSI). The sender is
//! recovered by checking the 8-bit tag under every stored session key, so a
//! store of `n` keys sees on average `(n - 1) / 256` spurious matches.

use bitvec::prelude::*;
use thiserror::Error;

use crate::bitcodec::{CodecError, JanusHeader, Mmsi, UnicastPacket, UNICAST_CARGO_LEN};
use crate::cipher::{cbc_mac8_with, CipherError};
use crate::keystore::{KeyStore, SessionKeyRecord};

#[derive(Debug, Error)]
pub enum UnicastError {
    #[error("no session key for {0}")]
    NoSession(Mmsi),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnicastOutcome {
    Delivered { sender: Mmsi, payload: u64 },
    /// Addressed to another routing id; eligible for relaying only.
    RelayCandidate { routing_id: u32 },
    Unidentified,
    /// More than one session key verifies the tag; nothing was decrypted.
    Ambiguous(Vec<Mmsi>),
}

fn tag(record: &SessionKeyRecord, packet: &UnicastPacket) -> Result<u8, CodecError> {
    let bytes = packet.authenticated_bytes()?;
    Ok(cbc_mac8_with(record.mac_cipher(), bytes.view_bits::<Msb0>()))
}

/// Builds a unicast packet for `dest` carrying `payload` as one RC5-32 block
/// under the session key.
pub fn send_unicast(
    store: &KeyStore,
    header: JanusHeader,
    dest: Mmsi,
    payload: u64,
) -> Result<UnicastPacket, UnicastError> {
    let record = store.lookup_session(dest).ok_or(UnicastError::NoSession(dest))?;
    let mut packet = UnicastPacket {
        header: JanusHeader {
            schedule: true,
            ..header
        },
        cargo_len: UNICAST_CARGO_LEN,
        routing_id: dest.routing_id(),
        syn: false,
        ack: true,
        encrypted_payload: record.payload_cipher().encrypt_u64(payload)?,
        hmac: 0,
    };
    packet.hmac = tag(record, &packet)?;
    Ok(packet)
}

/// Identifies the sender by tag trial and decrypts on a unique match.
pub fn receive_unicast(
    store: &KeyStore,
    packet: &UnicastPacket,
    own: Mmsi,
) -> Result<UnicastOutcome, UnicastError> {
    if packet.routing_id != own.routing_id() {
        return Ok(UnicastOutcome::RelayCandidate {
            routing_id: packet.routing_id,
        });
    }
    let bits = packet.authenticated_bytes()?;
    let matches: Vec<&SessionKeyRecord> = store
        .sessions()
        .filter(|r| cbc_mac8_with(r.mac_cipher(), bits.view_bits::<Msb0>()) == packet.hmac)
        .collect();
    Ok(match matches.as_slice() {
        [] => UnicastOutcome::Unidentified,
        [record] => UnicastOutcome::Delivered {
            sender: record.peer_mmsi,
            payload: record.payload_cipher().decrypt_u64(packet.encrypted_payload)?,
        },
        many => UnicastOutcome::Ambiguous(many.iter().map(|r| r.peer_mmsi).collect()),
    })
}

/// Expected number of wrong keys verifying an honest packet, for a store of
/// `sessions` keys.
pub fn analytic_ambiguity_rate(sessions: usize) -> f64 {
    crate::keystore::analytic_tag_collision_rate(sessions.saturating_sub(1))
}
