//! Long-term key renewal wrapped in the session key.
//!
//! The cleartext `K_2 (2040 bits) ‖ MMSI_A (30) ‖ CRC8` is padded to 2112
//! bits, CBC-encrypted with RC5-16 under `K_AB` and carried in two
//! schedule-flagged cargo frames addressed to the peer. The peer answers with
//! a baseline packet whose block is `MMSI_B ‖ 00` encrypted under `K_2`.

use bitvec::prelude::*;
use chrono::{DateTime, Utc};

use super::session::AuthSession;
use super::{AuthError, DiagnosticKind, Role, SessionState};
use crate::bitcodec::{crc8, AuthAdb, BaselinePacket, Bits, CargoFrame, JanusHeader, Mmsi};
use crate::cipher::{
    cbc_decrypt, cbc_encrypt, pad_method2, unpad_method2, KeyMaterial, Rc5, Rc5Variant,
    LONGTERM_KEY_BYTES,
};
use crate::keystore::{KeySlot, KeyStore, LongTermKeyRecord};

/// Encrypted renewal cargo: 2112 bits.
pub const RENEWAL_CARGO_BYTES: usize = 264;

/// Frames needed to carry the cargo under the 8-bit cargo length.
pub const RENEWAL_FRAMES: usize = 2;

const CLEARTEXT_BITS: usize = LONGTERM_KEY_BYTES * 8 + 30 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenewalPayload {
    pub new_key: KeyMaterial,
    pub initiator: Mmsi,
}

fn session_cipher(key: &KeyMaterial) -> Rc5 {
    Rc5::new(Rc5Variant::RC5_16_255_255, key.as_bytes()).expect("session keys are 32 bytes")
}

impl RenewalPayload {
    fn cleartext(&self) -> Result<Bits, AuthError> {
        if self.new_key.len() != LONGTERM_KEY_BYTES {
            return Err(AuthError::RenewalRejected("new key must be 255 bytes"));
        }
        let mut bits = Bits::from_slice(self.new_key.as_bytes());
        bits.extend_from_bitslice(&self.initiator.bits30().view_bits::<Msb0>()[2..]);
        let crc = crc8(&bits);
        bits.extend_from_bitslice(crc.view_bits::<Msb0>());
        Ok(pad_method2(&bits, RENEWAL_CARGO_BYTES * 8)?)
    }

    /// Encrypts the payload under the session key.
    pub fn seal(&self, session_key: &KeyMaterial) -> Result<Vec<u8>, AuthError> {
        let clear = self.cleartext()?;
        Ok(cbc_encrypt(&session_cipher(session_key), clear.as_raw_slice())?)
    }

    /// Decrypts and checks padding and the inner CRC.
    pub fn open(ciphertext: &[u8], session_key: &KeyMaterial) -> Result<Self, AuthError> {
        if ciphertext.len() != RENEWAL_CARGO_BYTES {
            return Err(AuthError::RenewalRejected("wrong cargo size"));
        }
        let clear = cbc_decrypt(&session_cipher(session_key), ciphertext)?;
        let bits = unpad_method2(clear.view_bits::<Msb0>())
            .map_err(|_| AuthError::RenewalRejected("bad padding"))?;
        if bits.len() != CLEARTEXT_BITS {
            return Err(AuthError::RenewalRejected("bad padding"));
        }
        let (body, crc) = bits.split_at(CLEARTEXT_BITS - 8);
        if crc8(body) != crc.load_be::<u8>() {
            return Err(AuthError::RenewalRejected("encrypted CRC mismatch"));
        }
        let key_bits = LONGTERM_KEY_BYTES * 8;
        let new_key = KeyMaterial::new(body[..key_bits].to_bitvec().into_vec())?;
        let initiator = Mmsi::new(body[key_bits..].load_be::<u32>())
            .map_err(|_| AuthError::RenewalRejected("MMSI out of range"))?;
        Ok(Self { new_key, initiator })
    }
}

/// Splits sealed cargo into schedule-flagged frames addressed to `dest`.
pub fn renewal_frames(sealed: &[u8], slot: KeySlot, dest: Mmsi) -> Vec<CargoFrame> {
    let mut header = JanusHeader::new(slot.class_user_id, slot.application_type);
    header.schedule = true;
    sealed
        .chunks(sealed.len().div_ceil(RENEWAL_FRAMES))
        .map(|chunk| CargoFrame {
            header,
            routing_id: dest.routing_id(),
            syn: false,
            ack: true,
            body: chunk.to_vec(),
        })
        .collect()
}

fn confirmation_block(responder: Mmsi) -> u32 {
    responder.bits30() << 2
}

impl AuthSession {
    /// Initiator: wraps `new_key` under the session key and returns the
    /// frames to send. The old key stays active until confirmation.
    pub fn renew_longterm(
        &mut self,
        new_key: KeyMaterial,
        store: &KeyStore,
    ) -> Result<Vec<CargoFrame>, AuthError> {
        if self.role() != Role::Initiator
            || !matches!(self.state(), SessionState::Established | SessionState::Renewing)
        {
            return Err(AuthError::NoSession);
        }
        let (slot, peer) = (self.slot().expect("slot"), self.peer_mmsi().expect("peer"));
        let session_key = store
            .lookup_session(peer)
            .ok_or(AuthError::NoSession)?
            .key()
            .clone();
        let payload = RenewalPayload {
            new_key: new_key.clone(),
            initiator: self.local().mmsi,
        };
        let sealed = payload.seal(&session_key)?;
        self.pending_key = Some(new_key);
        self.set_state(SessionState::Renewing);
        self.diag(DiagnosticKind::RenewalSent, format!("to {peer}"));
        Ok(renewal_frames(&sealed, slot, peer))
    }

    /// Responder: checks the reassembled frames, installs `K_2` in the same
    /// slot and returns the confirmation packet.
    pub fn accept_renewal(
        &mut self,
        frames: &[CargoFrame],
        now: DateTime<Utc>,
        store: &mut KeyStore,
    ) -> Result<BaselinePacket, AuthError> {
        let result = self.try_accept_renewal(frames, now, store);
        if let Err(e) = &result {
            self.diag(DiagnosticKind::RenewalRejected, e.to_string());
        }
        result
    }

    fn try_accept_renewal(
        &mut self,
        frames: &[CargoFrame],
        now: DateTime<Utc>,
        store: &mut KeyStore,
    ) -> Result<BaselinePacket, AuthError> {
        if self.role() != Role::Responder
            || !matches!(self.state(), SessionState::Responded | SessionState::Established)
        {
            return Err(AuthError::NoSession);
        }
        if self.renewed {
            return Err(AuthError::RenewalRejected("session key already used for a renewal"));
        }
        let (slot, peer) = (self.slot().expect("slot"), self.peer_mmsi().expect("peer"));
        if frames.len() != RENEWAL_FRAMES
            || frames.iter().any(|f| {
                !f.header.schedule
                    || f.syn
                    || !f.ack
                    || f.routing_id != self.local().mmsi.routing_id()
                    || f.header.class_user_id != slot.class_user_id
                    || f.header.application_type != slot.application_type
            })
        {
            return Err(AuthError::RenewalRejected("unexpected frame layout"));
        }
        let sealed: Vec<u8> = frames.iter().flat_map(|f| f.body.iter().copied()).collect();
        let session_key = store
            .lookup_session(peer)
            .ok_or(AuthError::NoSession)?
            .key()
            .clone();
        let payload = RenewalPayload::open(&sealed, &session_key)?;
        if payload.initiator != peer {
            return Err(AuthError::RenewalRejected("initiator MMSI does not match key binding"));
        }
        let block = LongTermKeyRecord::new(slot, payload.new_key.clone(), now, Some(peer))
            .block_cipher()
            .encrypt_u32(confirmation_block(self.local().mmsi))?;
        store.replace_longterm(LongTermKeyRecord::new(slot, payload.new_key, now, Some(peer)));
        self.set_session_key(Some(session_key));
        self.renewed = true;
        self.set_state(SessionState::Established);
        self.diag(DiagnosticKind::RenewalAccepted, format!("from {peer}"));
        let adb = AuthAdb {
            encrypted_block: block,
            syn: false,
            ack: true,
        };
        Ok(BaselinePacket::new(
            JanusHeader::new(slot.class_user_id, slot.application_type),
            adb.to_adb(),
        ))
    }

    /// Initiator: verifies the peer's confirmation and installs `K_2`. On
    /// mismatch the old key is kept and the renewal stays pending.
    pub fn handle_renewal_confirmation(
        &mut self,
        packet: &BaselinePacket,
        now: DateTime<Utc>,
        store: &mut KeyStore,
    ) -> Result<(), AuthError> {
        if self.state() != SessionState::Renewing {
            return Err(AuthError::InvalidState {
                expected: "renewing",
                actual: self.state(),
            });
        }
        let (slot, peer) = (self.slot().expect("slot"), self.peer_mmsi().expect("peer"));
        let new_key = self.pending_key.clone().expect("renewing sessions hold K_2");
        let adb = AuthAdb::from_adb(packet.adb);
        let record = LongTermKeyRecord::new(slot, new_key, now, Some(peer));
        let plain = record.block_cipher().decrypt_u32(adb.encrypted_block)?;
        if adb.syn || !adb.ack || plain != confirmation_block(peer) {
            self.diag(DiagnosticKind::RenewalUnconfirmed, "confirmation does not carry the peer MMSI");
            return Err(AuthError::RenewalUnconfirmed);
        }
        store.replace_longterm(record);
        self.pending_key = None;
        self.set_state(SessionState::Established);
        self.diag(DiagnosticKind::RenewalConfirmed, format!("with {peer}"));
        Ok(())
    }
}
