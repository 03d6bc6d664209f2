//! Byte framing for the selector → hand-controller link.
//!
//! ```text
//! +------+---------+--------+--------+-----------------+-------+
//! | 0xA5 | version | opcode | length | payload[length] | crc-8 |
//! +------+---------+--------+--------+-----------------+-------+
//! ```
//!
//! CRC-8 uses polynomial 0x07, init 0x00, no reflection, no final xor, and
//! covers opcode, length and payload. Multi-byte fields are big-endian.

use crate::hand::{GraspType, Phase, MOTORS};
use crate::Error;

pub const SYNC: u8 = 0xA5;
pub const VERSION: u8 = 0x01;
pub const MAX_FRAME: usize = 64;
const HEADER: usize = 4;
pub const MAX_PAYLOAD: usize = MAX_FRAME - HEADER - 1;

pub const OP_SET_GRASP_TYPE: u8 = 0x01;
pub const OP_ACK: u8 = 0x02;
pub const OP_HAND_STATUS: u8 = 0x03;

const CRC_POLY: u8 = 0x07;

const fn crc_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u8;
        let mut bit = 0;
        while bit < 8 {
            c = if c & 0x80 != 0 { (c << 1) ^ CRC_POLY } else { c << 1 };
            bit += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u8; 256] = crc_table();

pub fn crc8(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0u8, |crc, &b| CRC_TABLE[(crc ^ b) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Message {
    SetGraspType { index: u8 },
    Ack { accepted: bool, index: u8 },
    /// Angles in centidegrees, each within 0..=9000.
    HandStatus { phase: Phase, angles: [i16; MOTORS] },
}

impl Message {
    pub fn set_grasp(grasp: GraspType) -> Self {
        Message::SetGraspType {
            index: grasp.index(),
        }
    }

    /// Status frame from angles in degrees, rounded to centidegrees.
    pub fn hand_status(phase: Phase, angles_deg: &[f64; MOTORS]) -> Self {
        let angles = angles_deg.map(|a| (a * 100.0).round().clamp(0.0, 9000.0) as i16);
        Message::HandStatus { phase, angles }
    }

    pub fn opcode(&self) -> u8 {
        match self {
            Message::SetGraspType { .. } => OP_SET_GRASP_TYPE,
            Message::Ack { .. } => OP_ACK,
            Message::HandStatus { .. } => OP_HAND_STATUS,
        }
    }
}

fn payload_len(opcode: u8) -> Option<usize> {
    match opcode {
        OP_SET_GRASP_TYPE => Some(1),
        OP_ACK => Some(2),
        OP_HAND_STATUS => Some(1 + 2 * MOTORS),
        _ => None,
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, Error> {
    let mut payload = Vec::with_capacity(13);
    match *msg {
        Message::SetGraspType { index } => {
            GraspType::from_index(index)?;
            payload.push(index);
        }
        Message::Ack { accepted, index } => {
            GraspType::from_index(index)?;
            payload.extend([u8::from(accepted), index]);
        }
        Message::HandStatus { phase, angles } => {
            payload.push(phase.code());
            for a in angles {
                if !(0..=9000).contains(&a) {
                    return Err(Error::Encode(format!("angle {a} cdeg outside 0..=9000")));
                }
                payload.extend(a.to_be_bytes());
            }
        }
    }
    let mut frame = Vec::with_capacity(HEADER + payload.len() + 1);
    frame.extend([SYNC, VERSION, msg.opcode(), payload.len() as u8]);
    frame.extend(&payload);
    frame.push(crc8(&frame[2..]));
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("expected sync byte 0xA5")]
    BadSync,
    #[error("unsupported protocol version {0:#04x}")]
    BadVersion(u8),
    #[error("bad payload length {0}")]
    BadLength(u8),
    #[error("crc mismatch: frame says {expected:#04x}, computed {actual:#04x}")]
    BadCrc { expected: u8, actual: u8 },
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("payload field out of range")]
    InvalidPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoded {
    Frame { msg: Message, consumed: usize },
    /// A frame may start here but is not complete yet.
    NeedMore,
}

/// Parses one frame from the front of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    let Some(&first) = bytes.first() else {
        return Ok(Decoded::NeedMore);
    };
    if first != SYNC {
        return Err(DecodeError::BadSync);
    }
    match bytes.get(1) {
        None => return Ok(Decoded::NeedMore),
        Some(&v) if v != VERSION => return Err(DecodeError::BadVersion(v)),
        Some(_) => {}
    }
    if bytes.len() < HEADER {
        return Ok(Decoded::NeedMore);
    }
    let (opcode, len) = (bytes[2], bytes[3]);
    if len as usize > MAX_PAYLOAD {
        return Err(DecodeError::BadLength(len));
    }
    let total = HEADER + len as usize + 1;
    if bytes.len() < total {
        return Ok(Decoded::NeedMore);
    }
    let actual = crc8(&bytes[2..total - 1]);
    let expected = bytes[total - 1];
    if actual != expected {
        return Err(DecodeError::BadCrc { expected, actual });
    }
    let want = payload_len(opcode).ok_or(DecodeError::UnknownOpcode(opcode))?;
    if want != len as usize {
        return Err(DecodeError::BadLength(len));
    }
    let p = &bytes[HEADER..total - 1];
    let msg = match opcode {
        OP_SET_GRASP_TYPE => {
            if p[0] > 5 {
                return Err(DecodeError::InvalidPayload);
            }
            Message::SetGraspType { index: p[0] }
        }
        OP_ACK => {
            if p[0] > 1 || p[1] > 5 {
                return Err(DecodeError::InvalidPayload);
            }
            Message::Ack {
                accepted: p[0] == 1,
                index: p[1],
            }
        }
        _ => {
            let phase = Phase::from_code(p[0]).ok_or(DecodeError::InvalidPayload)?;
            let mut angles = [0i16; MOTORS];
            for (i, a) in angles.iter_mut().enumerate() {
                *a = i16::from_be_bytes([p[1 + 2 * i], p[2 + 2 * i]]);
                if !(0..=9000).contains(a) {
                    return Err(DecodeError::InvalidPayload);
                }
            }
            Message::HandStatus { phase, angles }
        }
    };
    Ok(Decoded::Frame { msg, consumed: total })
}

/// Per-connection stream decoder that resynchronizes on the next sync byte
/// after any bad frame.
#[derive(Debug, Default, Clone)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next decoded frame or error; `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<Message, DecodeError>> {
        if self.buf.is_empty() {
            return None;
        }
        if self.buf[0] != SYNC {
            let skip = self.buf.iter().position(|&b| b == SYNC).unwrap_or(self.buf.len());
            self.buf.drain(..skip);
            return Some(Err(DecodeError::BadSync));
        }
        match decode(&self.buf) {
            Ok(Decoded::NeedMore) => None,
            Ok(Decoded::Frame { msg, consumed }) => {
                self.buf.drain(..consumed);
                Some(Ok(msg))
            }
            Err(e) => {
                self.buf.drain(..1);
                Some(Err(e))
            }
        }
    }

    /// Drains every complete frame, discarding errors.
    pub fn messages(&mut self) -> Vec<Message> {
        std::iter::from_fn(|| self.next_frame())
            .filter_map(Result::ok)
            .collect()
    }
}
