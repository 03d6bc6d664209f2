//! External formats: the binary selector → hand frames and the JSONL session
//! log.

pub mod frame;
pub mod log;

pub use frame::{crc8, decode, encode, DecodeError, Decoded, FrameDecoder, Message};
pub use log::{EventKind, EventRecord, LogHeader, SessionLog, SCHEMA_VERSION};

/// Lowercase hex rendering of a frame, as stored in log attributes.
pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
