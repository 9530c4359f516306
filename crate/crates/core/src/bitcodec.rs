//! Bit-exact codecs for the 64-bit JANUS baseline packet, the 144-bit unicast
//! secure packet and variable-length cargo frames.
//!
//! Bits are numbered from 1 at the most significant end of the buffer, so a
//! baseline packet is a big-endian `u64` whose bit 1 is the top bit.

use std::fmt;

use bitvec::prelude::*;
use thiserror::Error;

/// MSB-first bit string used wherever a message is not byte aligned.
pub type Bits = BitVec<u8, Msb0>;

/// Bit string view.
pub type BitSlice = bitvec::slice::BitSlice<u8, Msb0>;

/// JANUS protocol version carried by every packet this crate emits.
pub const JANUS_VERSION: u8 = 3;

/// Milliseconds in one day.
pub const MS_PER_DAY: u32 = 86_400_000;

/// Number of days covered by one timestamp window.
pub const WINDOW_DAYS: i64 = 6;

/// Number of legal timestamp code points (six days of milliseconds).
pub const TIMESTAMP_MODULUS: u32 = 6 * MS_PER_DAY;

/// Cargo length of a unicast secure packet: 64-bit payload, HMAC and CRC.
pub const UNICAST_CARGO_LEN: u8 = 10;

/// Days between the Julian Day Number epoch and 1970-01-01.
pub const UNIX_EPOCH_JDN: i64 = 2_440_588;

const CRC8_POLY: u8 = 0x07;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("field `{field}` value {value} does not fit in {bits} bits")]
    FieldOverflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },
    #[error("{what} checksum mismatch: stored {stored:#04x}, computed {computed:#04x}")]
    CrcMismatch {
        what: &'static str,
        stored: u8,
        computed: u8,
    },
    #[error("timestamp code point {0} is outside the six-day window")]
    TimestampRange(u32),
    #[error("millisecond of day {0} is out of range")]
    MsOfDayRange(u32),
    #[error("clock descriptor code {0} exceeds 7")]
    ClockDescriptorRange(u8),
    #[error("MMSI {0} has more than 9 decimal digits")]
    MmsiRange(u64),
    #[error("MMSI must be exactly 9 decimal digits, got {0:?}")]
    MmsiFormat(String),
    #[error("unicast cargo length must be {UNICAST_CARGO_LEN}, got {0}")]
    CargoLength(u8),
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("invalid hex: {0}")]
    Hex(String),
}

/// CRC-8 with polynomial x^8+x^2+x+1, zero initial register, no reflection and
/// no final XOR, computed bit by bit so that non-byte-aligned inputs work.
pub fn crc8(data: &BitSlice) -> u8 {
    data.iter().by_vals().fold(0u8, |reg, bit| {
        let feedback = ((reg >> 7) & 1 == 1) ^ bit;
        let shifted = reg << 1;
        if feedback {
            shifted ^ CRC8_POLY
        } else {
            shifted
        }
    })
}

/// CRC-8 over whole bytes.
pub fn crc8_bytes(data: &[u8]) -> u8 {
    crc8(data.view_bits::<Msb0>())
}

/// CRC-8 over the low `nbits` bits of `value`, most significant first.
pub fn crc8_word(value: u128, nbits: usize) -> u8 {
    let bytes = value.to_be_bytes();
    crc8(&bytes.view_bits::<Msb0>()[128 - nbits..])
}

fn check_width(field: &'static str, value: u64, bits: u32) -> Result<(), CodecError> {
    if bits < 64 && value >> bits != 0 {
        return Err(CodecError::FieldOverflow { field, value, bits });
    }
    Ok(())
}

/// Time within the six-day timestamp window, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp29(u32);

impl Timestamp29 {
    /// Wraps a raw code point, rejecting the unused values at the top of the
    /// 29-bit space.
    pub fn new(value: u32) -> Result<Self, CodecError> {
        if value >= TIMESTAMP_MODULUS {
            return Err(CodecError::TimestampRange(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn as_secs(self) -> f64 {
        f64::from(self.0) / 1000.0
    }

    /// Signed difference `self - earlier` folded into half a window either side.
    pub fn wrapping_diff_ms(self, earlier: Timestamp29) -> i64 {
        let m = i64::from(TIMESTAMP_MODULUS);
        let raw = (i64::from(self.0) - i64::from(earlier.0)).rem_euclid(m);
        if raw > m / 2 {
            raw - m
        } else {
            raw
        }
    }
}

impl fmt::Display for Timestamp29 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (day, ms) = decode_timestamp(self.0).expect("constructed in range");
        let secs = ms / 1000;
        write!(
            f,
            "d{} {:02}:{:02}:{:02}.{:03}",
            day,
            secs / 3600,
            (secs / 60) % 60,
            secs % 60,
            ms % 1000
        )
    }
}

/// Folds a Julian day number and millisecond-of-day into a window timestamp.
pub fn encode_timestamp(julian_day: i64, ms_of_day: u32) -> Result<Timestamp29, CodecError> {
    if ms_of_day >= MS_PER_DAY {
        return Err(CodecError::MsOfDayRange(ms_of_day));
    }
    let day = julian_day.rem_euclid(WINDOW_DAYS) as u32;
    Ok(Timestamp29(day * MS_PER_DAY + ms_of_day))
}

/// Splits a raw 29-bit value into `(window_day, ms_of_day)`.
pub fn decode_timestamp(value: u32) -> Result<(u8, u32), CodecError> {
    if value >= TIMESTAMP_MODULUS {
        return Err(CodecError::TimestampRange(value));
    }
    Ok(((value / MS_PER_DAY) as u8, value % MS_PER_DAY))
}

/// Three-bit clock accuracy class. Code `n` bounds drift at 10^-(4+n).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClockDescriptor(u8);

impl ClockDescriptor {
    pub fn new(code: u8) -> Result<Self, CodecError> {
        if code > 7 {
            return Err(CodecError::ClockDescriptorRange(code));
        }
        Ok(Self(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn drift_bound(self) -> f64 {
        10f64.powi(-(4 + i32::from(self.0)))
    }

    /// Tightest descriptor whose bound still covers `drift_rate`.
    pub fn for_drift(drift_rate: f64) -> Self {
        let rate = drift_rate.abs();
        (0..=7u8)
            .rev()
            .map(ClockDescriptor)
            .find(|cd| rate <= cd.drift_bound())
            .unwrap_or(ClockDescriptor(0))
    }
}

/// Nine-digit Maritime Mobile Service Identity, held as its 30-bit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mmsi(u32);

impl Mmsi {
    pub const MAX: u32 = 999_999_999;

    pub fn new(value: u32) -> Result<Self, CodecError> {
        if value > Self::MAX {
            return Err(CodecError::MmsiRange(u64::from(value)));
        }
        Ok(Self(value))
    }

    pub fn bits30(self) -> u32 {
        self.0
    }

    /// Low 24 bits, used as the unicast routing identifier.
    pub fn routing_id(self) -> u32 {
        self.0 & 0x00ff_ffff
    }
}

impl std::str::FromStr for Mmsi {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 9 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(CodecError::MmsiFormat(s.to_owned()));
        }
        Mmsi::new(s.parse().expect("nine ascii digits"))
    }
}

impl fmt::Display for Mmsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:09}", self.0)
    }
}

/// The 22-bit cleartext JANUS header shared by every packet kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JanusHeader {
    pub version: u8,
    pub mobility: bool,
    pub schedule: bool,
    pub txrx: bool,
    pub forward: bool,
    pub class_user_id: u8,
    pub application_type: u8,
}

impl JanusHeader {
    /// Header for this protocol: version 3, two-way capable, no forwarding.
    pub fn new(class_user_id: u8, application_type: u8) -> Self {
        Self {
            version: JANUS_VERSION,
            mobility: true,
            schedule: false,
            txrx: true,
            forward: false,
            class_user_id,
            application_type,
        }
    }

    fn to_bits22(self) -> Result<u64, CodecError> {
        check_width("version", self.version.into(), 4)?;
        check_width("application_type", self.application_type.into(), 6)?;
        Ok(u64::from(self.version) << 18
            | u64::from(self.mobility) << 17
            | u64::from(self.schedule) << 16
            | u64::from(self.txrx) << 15
            | u64::from(self.forward) << 14
            | u64::from(self.class_user_id) << 6
            | u64::from(self.application_type))
    }

    fn from_bits22(v: u64) -> Self {
        Self {
            version: ((v >> 18) & 0xf) as u8,
            mobility: (v >> 17) & 1 == 1,
            schedule: (v >> 16) & 1 == 1,
            txrx: (v >> 15) & 1 == 1,
            forward: (v >> 14) & 1 == 1,
            class_user_id: ((v >> 6) & 0xff) as u8,
            application_type: (v & 0x3f) as u8,
        }
    }
}

/// 64-bit baseline packet. The CRC is derived at encode time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BaselinePacket {
    pub header: JanusHeader,
    /// 34-bit application data block.
    pub adb: u64,
}

/// Result of parsing a baseline buffer without rejecting it on CRC failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawBaseline {
    pub packet: BaselinePacket,
    pub stored_crc: u8,
    pub computed_crc: u8,
}

impl RawBaseline {
    pub fn crc_ok(&self) -> bool {
        self.stored_crc == self.computed_crc
    }
}

impl BaselinePacket {
    pub fn new(header: JanusHeader, adb: u64) -> Self {
        Self { header, adb }
    }

    /// Bits 1..=56 as an integer.
    fn body(&self) -> Result<u64, CodecError> {
        check_width("adb", self.adb, 34)?;
        Ok(self.header.to_bits22()? << 34 | self.adb)
    }

    pub fn crc(&self) -> Result<u8, CodecError> {
        Ok(crc8_word(self.body()?.into(), 56))
    }

    pub fn encode(&self) -> Result<u64, CodecError> {
        let body = self.body()?;
        Ok(body << 8 | u64::from(crc8_word(body.into(), 56)))
    }

    pub fn encode_bytes(&self) -> Result<[u8; 8], CodecError> {
        Ok(self.encode()?.to_be_bytes())
    }

    pub fn parse_unchecked(buffer: u64) -> RawBaseline {
        let body = buffer >> 8;
        RawBaseline {
            packet: BaselinePacket {
                header: JanusHeader::from_bits22(body >> 34),
                adb: body & ((1 << 34) - 1),
            },
            stored_crc: (buffer & 0xff) as u8,
            computed_crc: crc8_word(body.into(), 56),
        }
    }

    pub fn decode(buffer: u64) -> Result<Self, CodecError> {
        let raw = Self::parse_unchecked(buffer);
        if !raw.crc_ok() {
            return Err(CodecError::CrcMismatch {
                what: "baseline",
                stored: raw.stored_crc,
                computed: raw.computed_crc,
            });
        }
        Ok(raw.packet)
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let arr: [u8; 8] = bytes.try_into().map_err(|_| CodecError::Length {
            expected: 8,
            actual: bytes.len(),
        })?;
        Self::decode(u64::from_be_bytes(arr))
    }

    pub fn to_hex(&self) -> Result<String, CodecError> {
        Ok(format!("{:016x}", self.encode()?))
    }
}

/// Authentication layout of the 34-bit ADB: 32-bit cipher block, SYN, ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AuthAdb {
    pub encrypted_block: u32,
    pub syn: bool,
    pub ack: bool,
}

impl AuthAdb {
    pub fn to_adb(self) -> u64 {
        u64::from(self.encrypted_block) << 2 | u64::from(self.syn) << 1 | u64::from(self.ack)
    }

    pub fn from_adb(adb: u64) -> Self {
        Self {
            encrypted_block: ((adb >> 2) & 0xffff_ffff) as u32,
            syn: (adb >> 1) & 1 == 1,
            ack: adb & 1 == 1,
        }
    }
}

/// Packs a timestamp and clock descriptor into the 32-bit challenge plaintext.
pub fn pack_challenge(ts: Timestamp29, cd: ClockDescriptor) -> u32 {
    ts.0 << 3 | u32::from(cd.0)
}

/// Inverse of [`pack_challenge`]; fails on unused timestamp code points.
pub fn unpack_challenge(block: u32) -> Result<(Timestamp29, ClockDescriptor), CodecError> {
    Ok((Timestamp29::new(block >> 3)?, ClockDescriptor((block & 7) as u8)))
}

/// First 64 bits of any schedule-flagged packet: header, cargo length, routing
/// data, flags and the header checksum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CargoHeader {
    pub header: JanusHeader,
    pub cargo_len: u8,
    /// 24-bit routing identifier.
    pub routing_id: u32,
    pub syn: bool,
    pub ack: bool,
}

impl CargoHeader {
    fn body(&self) -> Result<u64, CodecError> {
        check_width("routing_id", self.routing_id.into(), 24)?;
        Ok(self.header.to_bits22()? << 34
            | u64::from(self.cargo_len) << 26
            | u64::from(self.routing_id) << 2
            | u64::from(self.syn) << 1
            | u64::from(self.ack))
    }

    fn encode(&self) -> Result<u64, CodecError> {
        let body = self.body()?;
        Ok(body << 8 | u64::from(crc8_word(body.into(), 56)))
    }

    fn decode(word: u64) -> Result<Self, CodecError> {
        let body = word >> 8;
        let stored = (word & 0xff) as u8;
        let computed = crc8_word(body.into(), 56);
        if stored != computed {
            return Err(CodecError::CrcMismatch {
                what: "header",
                stored,
                computed,
            });
        }
        Ok(Self {
            header: JanusHeader::from_bits22(body >> 34),
            cargo_len: ((body >> 26) & 0xff) as u8,
            routing_id: ((body >> 2) & 0x00ff_ffff) as u32,
            syn: (body >> 1) & 1 == 1,
            ack: body & 1 == 1,
        })
    }
}

/// Unicast secure packet: cargo header, one encrypted 64-bit block, an 8-bit
/// MAC tag and a trailing CRC over payload and tag. 144 bits in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UnicastPacket {
    pub header: JanusHeader,
    pub cargo_len: u8,
    pub routing_id: u32,
    pub syn: bool,
    pub ack: bool,
    pub encrypted_payload: u64,
    pub hmac: u8,
}

pub const UNICAST_BYTES: usize = 18;

impl UnicastPacket {
    fn cargo_header(&self) -> CargoHeader {
        CargoHeader {
            header: self.header,
            cargo_len: self.cargo_len,
            routing_id: self.routing_id,
            syn: self.syn,
            ack: self.ack,
        }
    }

    /// Bits 1..=128, the region covered by the MAC tag.
    pub fn authenticated_bytes(&self) -> Result<[u8; 16], CodecError> {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&self.cargo_header().encode()?.to_be_bytes());
        out[8..].copy_from_slice(&self.encrypted_payload.to_be_bytes());
        Ok(out)
    }

    pub fn encode(&self) -> Result<[u8; UNICAST_BYTES], CodecError> {
        if self.cargo_len != UNICAST_CARGO_LEN {
            return Err(CodecError::CargoLength(self.cargo_len));
        }
        let mut out = [0u8; UNICAST_BYTES];
        out[..16].copy_from_slice(&self.authenticated_bytes()?);
        out[16] = self.hmac;
        out[17] = crc8_bytes(&out[8..17]);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != UNICAST_BYTES {
            return Err(CodecError::Length {
                expected: UNICAST_BYTES,
                actual: bytes.len(),
            });
        }
        let head = CargoHeader::decode(u64::from_be_bytes(bytes[..8].try_into().unwrap()))?;
        let computed = crc8_bytes(&bytes[8..17]);
        if computed != bytes[17] {
            return Err(CodecError::CrcMismatch {
                what: "trailer",
                stored: bytes[17],
                computed,
            });
        }
        if head.cargo_len != UNICAST_CARGO_LEN {
            return Err(CodecError::CargoLength(head.cargo_len));
        }
        Ok(Self {
            header: head.header,
            cargo_len: head.cargo_len,
            routing_id: head.routing_id,
            syn: head.syn,
            ack: head.ack,
            encrypted_payload: u64::from_be_bytes(bytes[8..16].try_into().unwrap()),
            hmac: bytes[16],
        })
    }

    pub fn to_hex(&self) -> Result<String, CodecError> {
        Ok(hex::encode(self.encode()?))
    }

    pub fn from_hex(s: &str) -> Result<Self, CodecError> {
        Self::decode(&parse_hex(s, UNICAST_BYTES)?)
    }
}

/// Variable-length schedule-flagged frame carrying `body` followed by a CRC
/// over the body. `cargo_len` counts the body plus that CRC byte.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CargoFrame {
    pub header: JanusHeader,
    pub routing_id: u32,
    pub syn: bool,
    pub ack: bool,
    pub body: Vec<u8>,
}

impl CargoFrame {
    pub const MAX_BODY: usize = 254;

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        if self.body.len() > Self::MAX_BODY {
            return Err(CodecError::FieldOverflow {
                field: "cargo_len",
                value: self.body.len() as u64 + 1,
                bits: 8,
            });
        }
        let head = CargoHeader {
            header: self.header,
            cargo_len: (self.body.len() + 1) as u8,
            routing_id: self.routing_id,
            syn: self.syn,
            ack: self.ack,
        };
        let mut out = Vec::with_capacity(9 + self.body.len());
        out.extend_from_slice(&head.encode()?.to_be_bytes());
        out.extend_from_slice(&self.body);
        out.push(crc8_bytes(&self.body));
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < 9 {
            return Err(CodecError::Length {
                expected: 9,
                actual: bytes.len(),
            });
        }
        let head = CargoHeader::decode(u64::from_be_bytes(bytes[..8].try_into().unwrap()))?;
        let expected = 8 + usize::from(head.cargo_len);
        if head.cargo_len == 0 || bytes.len() != expected {
            return Err(CodecError::Length {
                expected,
                actual: bytes.len(),
            });
        }
        let body = &bytes[8..expected - 1];
        let computed = crc8_bytes(body);
        if computed != bytes[expected - 1] {
            return Err(CodecError::CrcMismatch {
                what: "cargo",
                stored: bytes[expected - 1],
                computed,
            });
        }
        Ok(Self {
            header: head.header,
            routing_id: head.routing_id,
            syn: head.syn,
            ack: head.ack,
            body: body.to_vec(),
        })
    }
}

/// Parses lowercase or uppercase hex of exactly `bytes` bytes.
pub fn parse_hex(s: &str, bytes: usize) -> Result<Vec<u8>, CodecError> {
    let s = s.trim();
    if s.len() != bytes * 2 {
        return Err(CodecError::Length {
            expected: bytes,
            actual: s.len() / 2,
        });
    }
    hex::decode(s).map_err(|e| CodecError::Hex(e.to_string()))
}
