//! Lightweight mutual authentication for underwater acoustic assets on top of
//! the 64-bit JANUS baseline packet.
//!
//! Two devices sharing a long-term key run an encrypted timestamp
//! challenge/response ([`authproto`]), derive a 256-bit session key from the
//! exchanged timestamps and clock descriptors ([`cipher::derive_session_key`]),
//! and can then renew the long-term key or exchange MAC-tagged unicast
//! packets ([`unicast`]). The same three timestamps yield a clock-offset-free
//! range estimate ([`ranging`]). [`channelsim`] drives everything over a
//! deterministic virtual acoustic channel.

pub mod authproto;
pub mod bitcodec;
pub mod channelsim;
pub mod cipher;
pub mod keystore;
pub mod ranging;
pub mod time;
pub mod unicast;

pub use authproto::{AuthConfig, AuthError, AuthResult, AuthSession, Role, SessionState};
pub use bitcodec::{
    BaselinePacket, ClockDescriptor, CodecError, JanusHeader, Mmsi, Timestamp29, UnicastPacket,
};
pub use cipher::{CipherError, KeyMaterial, Rc5, Rc5Variant};
pub use keystore::{KeySlot, KeyStore, KeyStoreError};
pub use ranging::{RangingError, RangingEstimate};
