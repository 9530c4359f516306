//! RC5-w/r/b with w in {16, 32, 64}.
//!
//! Bytes are packed into words little-endian, as in the original definition,
//! so a 2w-bit block is two consecutive little-endian words `A`, `B`.

use std::fmt;
use std::ops::{Add, BitXor, Sub};

use super::CipherError;

/// Unsigned machine word RC5 can be instantiated over.
pub trait Word:
    Copy
    + Default
    + Eq
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + BitXor<Output = Self>
    + Send
    + Sync
    + 'static
{
    const BITS: u32;
    const BYTES: usize;
    const P: Self;
    const Q: Self;

    fn wadd(self, rhs: Self) -> Self;
    fn wsub(self, rhs: Self) -> Self;
    fn rotl(self, by: Self) -> Self;
    fn rotr(self, by: Self) -> Self;
    fn rotl3(self) -> Self;
    fn from_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut [u8]);
    fn push_byte(self, byte: u8) -> Self;
}

macro_rules! impl_word {
    ($t:ty, $p:expr, $q:expr) => {
        impl Word for $t {
            const BITS: u32 = <$t>::BITS;
            const BYTES: usize = std::mem::size_of::<$t>();
            const P: Self = $p;
            const Q: Self = $q;

            #[inline(always)]
            fn wadd(self, rhs: Self) -> Self {
                self.wrapping_add(rhs)
            }
            #[inline(always)]
            fn wsub(self, rhs: Self) -> Self {
                self.wrapping_sub(rhs)
            }
            #[inline(always)]
            fn rotl(self, by: Self) -> Self {
                self.rotate_left((by as u32) % Self::BITS)
            }
            #[inline(always)]
            fn rotr(self, by: Self) -> Self {
                self.rotate_right((by as u32) % Self::BITS)
            }
            #[inline(always)]
            fn rotl3(self) -> Self {
                self.rotate_left(3)
            }
            fn from_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("word sized slice"))
            }
            fn write_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }
            fn push_byte(self, byte: u8) -> Self {
                (self << 8).wrapping_add(byte as $t)
            }
        }
    };
}

impl_word!(u16, 0xb7e1, 0x9e37);
impl_word!(u32, 0xb7e1_5163, 0x9e37_79b9);
impl_word!(u64, 0xb7e1_5162_8aed_2a6b, 0x9e37_79b9_7f4a_7c15);

/// Expanded key table for one word size.
#[derive(Clone)]
pub struct KeySchedule<W: Word> {
    table: Vec<W>,
    rounds: usize,
}

impl<W: Word> KeySchedule<W> {
    pub fn new(key: &[u8], rounds: u8) -> Self {
        let rounds = usize::from(rounds);
        let t = 2 * (rounds + 1);
        let c = key.len().div_ceil(W::BYTES).max(1);

        let mut l = vec![W::default(); c];
        for (i, &byte) in key.iter().enumerate().rev() {
            l[i / W::BYTES] = l[i / W::BYTES].push_byte(byte);
        }

        let mut s = Vec::with_capacity(t);
        s.push(W::P);
        for i in 1..t {
            let prev = s[i - 1];
            s.push(prev.wadd(W::Q));
        }

        let (mut a, mut b) = (W::default(), W::default());
        let (mut i, mut j) = (0, 0);
        for _ in 0..3 * t.max(c) {
            a = s[i].wadd(a).wadd(b).rotl3();
            s[i] = a;
            let ab = a.wadd(b);
            b = l[j].wadd(ab).rotl(ab);
            l[j] = b;
            i = (i + 1) % t;
            j = (j + 1) % c;
        }
        l.iter_mut().for_each(|w| *w = W::default());

        Self { table: s, rounds }
    }

    #[inline]
    pub fn encrypt_words(&self, mut a: W, mut b: W) -> (W, W) {
        let s = &self.table;
        a = a.wadd(s[0]);
        b = b.wadd(s[1]);
        for pair in s[2..].chunks_exact(2) {
            a = (a ^ b).rotl(b).wadd(pair[0]);
            b = (b ^ a).rotl(a).wadd(pair[1]);
        }
        (a, b)
    }

    #[inline]
    pub fn decrypt_words(&self, mut a: W, mut b: W) -> (W, W) {
        let s = &self.table;
        for pair in s[2..].chunks_exact(2).rev() {
            b = b.wsub(pair[1]).rotr(a) ^ a;
            a = a.wsub(pair[0]).rotr(b) ^ b;
        }
        (a.wsub(s[0]), b.wsub(s[1]))
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn encrypt_block(&self, block: &mut [u8]) {
        let (lo, hi) = block.split_at_mut(W::BYTES);
        let (a, b) = self.encrypt_words(W::from_le(lo), W::from_le(hi));
        a.write_le(lo);
        b.write_le(hi);
    }

    pub fn decrypt_block(&self, block: &mut [u8]) {
        let (lo, hi) = block.split_at_mut(W::BYTES);
        let (a, b) = self.decrypt_words(W::from_le(lo), W::from_le(hi));
        a.write_le(lo);
        b.write_le(hi);
    }
}

impl<W: Word> Drop for KeySchedule<W> {
    fn drop(&mut self) {
        self.table.iter_mut().for_each(|w| *w = W::default());
    }
}

impl<W: Word> fmt::Debug for KeySchedule<W> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySchedule")
            .field("word_bits", &W::BITS)
            .field("rounds", &self.rounds)
            .finish_non_exhaustive()
    }
}

/// RC5 parameters: word size, round count and maximum key length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rc5Variant {
    word_bits: u32,
    pub rounds: u8,
    pub key_bytes: u8,
}

impl Rc5Variant {
    /// RC5-16/255/255, the 32-bit block used inside the ADB and for MACs.
    pub const RC5_16_255_255: Self = Self {
        word_bits: 16,
        rounds: 255,
        key_bytes: 255,
    };
    /// RC5-32/255/255, the 64-bit block used for unicast payloads.
    pub const RC5_32_255_255: Self = Self {
        word_bits: 32,
        rounds: 255,
        key_bytes: 255,
    };
    /// RC5-64/255/255, the 128-bit block used for session key derivation.
    pub const RC5_64_255_255: Self = Self {
        word_bits: 64,
        rounds: 255,
        key_bytes: 255,
    };

    pub fn new(word_bits: u32, rounds: u8, key_bytes: u8) -> Result<Self, CipherError> {
        if !matches!(word_bits, 16 | 32 | 64) {
            return Err(CipherError::WordSize(word_bits));
        }
        Ok(Self {
            word_bits,
            rounds,
            key_bytes,
        })
    }

    pub fn word_bits(&self) -> u32 {
        self.word_bits
    }

    pub fn block_bytes(&self) -> usize {
        self.word_bits as usize / 4
    }
}

impl fmt::Display for Rc5Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RC5-{}/{}/{}", self.word_bits, self.rounds, self.key_bytes)
    }
}

#[derive(Clone, Debug)]
enum Schedule {
    W16(KeySchedule<u16>),
    W32(KeySchedule<u32>),
    W64(KeySchedule<u64>),
}

/// A keyed RC5 instance selected at runtime. Immutable once built.
#[derive(Clone, Debug)]
pub struct Rc5 {
    variant: Rc5Variant,
    schedule: Schedule,
}

impl Rc5 {
    pub fn new(variant: Rc5Variant, key: &[u8]) -> Result<Self, CipherError> {
        if key.len() > usize::from(variant.key_bytes) {
            return Err(CipherError::KeyTooLong {
                len: key.len(),
                max: variant.key_bytes,
            });
        }
        let schedule = match variant.word_bits {
            16 => Schedule::W16(KeySchedule::new(key, variant.rounds)),
            32 => Schedule::W32(KeySchedule::new(key, variant.rounds)),
            64 => Schedule::W64(KeySchedule::new(key, variant.rounds)),
            w => return Err(CipherError::WordSize(w)),
        };
        Ok(Self { variant, schedule })
    }

    pub fn variant(&self) -> Rc5Variant {
        self.variant
    }

    pub fn block_bytes(&self) -> usize {
        self.variant.block_bytes()
    }

    fn check_block(&self, block: &[u8]) -> Result<(), CipherError> {
        if block.len() != self.block_bytes() {
            return Err(CipherError::BlockSize {
                len: block.len(),
                block: self.block_bytes(),
            });
        }
        Ok(())
    }

    pub fn encrypt_block(&self, block: &mut [u8]) -> Result<(), CipherError> {
        self.check_block(block)?;
        match &self.schedule {
            Schedule::W16(s) => s.encrypt_block(block),
            Schedule::W32(s) => s.encrypt_block(block),
            Schedule::W64(s) => s.encrypt_block(block),
        }
        Ok(())
    }

    pub fn decrypt_block(&self, block: &mut [u8]) -> Result<(), CipherError> {
        self.check_block(block)?;
        match &self.schedule {
            Schedule::W16(s) => s.decrypt_block(block),
            Schedule::W32(s) => s.decrypt_block(block),
            Schedule::W64(s) => s.decrypt_block(block),
        }
        Ok(())
    }

    /// Encrypts a 32-bit value held MSB-first (RC5-16 only).
    pub fn encrypt_u32(&self, value: u32) -> Result<u32, CipherError> {
        let mut b = value.to_be_bytes();
        self.encrypt_block(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }

    pub fn decrypt_u32(&self, value: u32) -> Result<u32, CipherError> {
        let mut b = value.to_be_bytes();
        self.decrypt_block(&mut b)?;
        Ok(u32::from_be_bytes(b))
    }

    /// Encrypts a 64-bit value held MSB-first (RC5-32 only).
    pub fn encrypt_u64(&self, value: u64) -> Result<u64, CipherError> {
        let mut b = value.to_be_bytes();
        self.encrypt_block(&mut b)?;
        Ok(u64::from_be_bytes(b))
    }

    pub fn decrypt_u64(&self, value: u64) -> Result<u64, CipherError> {
        let mut b = value.to_be_bytes();
        self.decrypt_block(&mut b)?;
        Ok(u64::from_be_bytes(b))
    }
}
