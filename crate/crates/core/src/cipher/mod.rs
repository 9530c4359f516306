//! Block cipher layer: parametric RC5, CBC with a zero starting variable,
//! bit padding (a single 1 followed by zeros), the session key combining
//! function and the truncated CBC-MAC used to tag unicast packets.

mod rc5;

use std::fmt;

use bitvec::prelude::*;
use rand::RngCore;
use thiserror::Error;

use crate::bitcodec::{Bits, BitSlice, ClockDescriptor, Mmsi, Timestamp29};

pub use rc5::{KeySchedule, Rc5, Rc5Variant, Word};

/// Long-term keys use the full RC5 key space: 255 bytes (2040 bits).
pub const LONGTERM_KEY_BYTES: usize = 255;
/// Session keys are the first 256 bits of the combining function output.
pub const SESSION_KEY_BYTES: usize = 32;

const SESSION_INPUT_BITS: usize = 124;
const SESSION_PADDED_BITS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CipherError {
    #[error("RC5 word size must be 16, 32 or 64 bits, got {0}")]
    WordSize(u32),
    #[error("key of {len} bytes exceeds the variant maximum of {max}")]
    KeyTooLong { len: usize, max: u8 },
    #[error("key material must be 1..=255 bytes, got {0}")]
    KeyLength(usize),
    #[error("block of {len} bytes does not match the {block}-byte block size")]
    BlockSize { len: usize, block: usize },
    #[error("data length {len} bytes is not a positive multiple of the {block}-byte block")]
    Alignment { len: usize, block: usize },
    #[error("padding target of {target} bits cannot hold {len} data bits plus the marker")]
    PadTarget { len: usize, target: usize },
    #[error("padding marker not found")]
    BadPadding,
}

/// Secret key bytes. Zeroed on drop; `Debug` never prints the contents.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct KeyMaterial(Vec<u8>);

impl KeyMaterial {
    pub fn new(bytes: Vec<u8>) -> Result<Self, CipherError> {
        if bytes.is_empty() || bytes.len() > LONGTERM_KEY_BYTES {
            return Err(CipherError::KeyLength(bytes.len()));
        }
        Ok(Self(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, CipherError> {
        let bytes = hex::decode(s.trim()).map_err(|_| CipherError::KeyLength(0))?;
        Self::new(bytes)
    }

    /// Fresh 2040-bit long-term key.
    pub fn generate_longterm(rng: &mut impl RngCore) -> Self {
        let mut bytes = vec![0u8; LONGTERM_KEY_BYTES];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }
}

impl Drop for KeyMaterial {
    fn drop(&mut self) {
        self.0.iter_mut().for_each(|b| *b = 0);
    }
}

impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyMaterial({} bytes)", self.0.len())
    }
}

/// Appends a single 1 bit and zeros up to `target_bits`.
pub fn pad_method2(data: &BitSlice, target_bits: usize) -> Result<Bits, CipherError> {
    if target_bits < data.len() + 1 {
        return Err(CipherError::PadTarget {
            len: data.len(),
            target: target_bits,
        });
    }
    let mut out = Bits::with_capacity(target_bits);
    out.extend_from_bitslice(data);
    out.push(true);
    out.resize(target_bits, false);
    Ok(out)
}

/// Pads to the smallest multiple of `block_bits` that fits the marker bit.
pub fn pad_method2_to_block(data: &BitSlice, block_bits: usize) -> Bits {
    let target = (data.len() / block_bits + 1) * block_bits;
    pad_method2(data, target).expect("target always leaves room for the marker")
}

/// Strips trailing zeros and the marker bit.
pub fn unpad_method2(padded: &BitSlice) -> Result<Bits, CipherError> {
    // bitvec's last_one overflows on some Msb0 tails, so scan explicitly
    let marker = padded
        .iter()
        .by_vals()
        .rposition(|b| b)
        .ok_or(CipherError::BadPadding)?;
    Ok(padded[..marker].to_bitvec())
}

fn check_aligned(cipher: &Rc5, len: usize) -> Result<usize, CipherError> {
    let block = cipher.block_bytes();
    if len == 0 || len % block != 0 {
        return Err(CipherError::Alignment { len, block });
    }
    Ok(block)
}

/// CBC encryption with an all-zero starting variable.
pub fn cbc_encrypt(cipher: &Rc5, plaintext: &[u8]) -> Result<Vec<u8>, CipherError> {
    let block = check_aligned(cipher, plaintext.len())?;
    let mut out = plaintext.to_vec();
    let mut chain = vec![0u8; block];
    for chunk in out.chunks_exact_mut(block) {
        chunk.iter_mut().zip(&chain).for_each(|(p, c)| *p ^= c);
        cipher.encrypt_block(chunk)?;
        chain.copy_from_slice(chunk);
    }
    Ok(out)
}

pub fn cbc_decrypt(cipher: &Rc5, ciphertext: &[u8]) -> Result<Vec<u8>, CipherError> {
    let block = check_aligned(cipher, ciphertext.len())?;
    let mut out = ciphertext.to_vec();
    let mut chain = vec![0u8; block];
    for chunk in out.chunks_exact_mut(block) {
        let saved = chunk.to_vec();
        cipher.decrypt_block(chunk)?;
        chunk.iter_mut().zip(&chain).for_each(|(p, c)| *p ^= c);
        chain = saved;
    }
    Ok(out)
}

/// The 124-bit input of the session key combining function, initiator first.
pub fn session_key_input(
    mmsi_a: Mmsi,
    t_a: Timestamp29,
    cd_a: ClockDescriptor,
    mmsi_b: Mmsi,
    t_b: Timestamp29,
    cd_b: ClockDescriptor,
) -> Bits {
    let half = |mmsi: Mmsi, t: Timestamp29, cd: ClockDescriptor| -> u64 {
        u64::from(mmsi.bits30()) << 32 | u64::from(t.value()) << 3 | u64::from(cd.code())
    };
    let word = u128::from(half(mmsi_a, t_a, cd_a)) << 62 | u128::from(half(mmsi_b, t_b, cd_b));
    let bytes = word.to_be_bytes();
    bytes.view_bits::<Msb0>()[128 - SESSION_INPUT_BITS..].to_bitvec()
}

/// Session key agreement function: pad the 124-bit concatenation to 512 bits,
/// encrypt with RC5-64/255/255 in CBC mode under the long-term key and keep
/// the first 256 ciphertext bits.
pub fn derive_session_key(
    mmsi_a: Mmsi,
    t_a: Timestamp29,
    cd_a: ClockDescriptor,
    mmsi_b: Mmsi,
    t_b: Timestamp29,
    cd_b: ClockDescriptor,
    k_longterm: &KeyMaterial,
) -> KeyMaterial {
    let cipher = Rc5::new(Rc5Variant::RC5_64_255_255, k_longterm.as_bytes())
        .expect("key material never exceeds 255 bytes");
    derive_session_key_with(&cipher, mmsi_a, t_a, cd_a, mmsi_b, t_b, cd_b)
}

/// As [`derive_session_key`], reusing an RC5-64 schedule of the long-term key.
pub fn derive_session_key_with(
    cipher: &Rc5,
    mmsi_a: Mmsi,
    t_a: Timestamp29,
    cd_a: ClockDescriptor,
    mmsi_b: Mmsi,
    t_b: Timestamp29,
    cd_b: ClockDescriptor,
) -> KeyMaterial {
    debug_assert_eq!(cipher.block_bytes(), 16);
    let input = session_key_input(mmsi_a, t_a, cd_a, mmsi_b, t_b, cd_b);
    let padded = pad_method2(&input, SESSION_PADDED_BITS).expect("124 < 512");
    let mut ciphertext = cbc_encrypt(cipher, padded.as_raw_slice()).expect("512 bits is aligned");
    ciphertext.truncate(SESSION_KEY_BYTES);
    KeyMaterial(ciphertext)
}

/// 8-bit CBC-MAC: pad to a multiple of 32 bits, CBC with RC5-16/255/255 and
/// a zero starting variable, keep the top byte of the last block.
pub fn cbc_mac8(key: &KeyMaterial, message: &BitSlice) -> u8 {
    let cipher = Rc5::new(Rc5Variant::RC5_16_255_255, key.as_bytes())
        .expect("key material never exceeds 255 bytes");
    cbc_mac8_with(&cipher, message)
}

pub fn cbc_mac8_with(cipher: &Rc5, message: &BitSlice) -> u8 {
    let block_bits = cipher.block_bytes() * 8;
    let padded = pad_method2_to_block(message, block_bits);
    let mut chain = vec![0u8; cipher.block_bytes()];
    for chunk in padded.as_raw_slice().chunks_exact(chain.len()) {
        chain.iter_mut().zip(chunk).for_each(|(c, p)| *c ^= p);
        cipher.encrypt_block(&mut chain).expect("block sized");
    }
    chain[0]
}
