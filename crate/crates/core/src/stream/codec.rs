//! Binary stream file format.
//!
//! ```text
//! offset  size  field (little-endian)
//! 0       4     magic "EGMS"
//! 4       2     format version (1)
//! 6       4     step count
//! 10      8     absolute index of the first step
//! 18      16    level1 start, level1 end, level2 start, level2 end (u32 each)
//! 34      4     frame rate x100 (1250)
//! 38      4     face mark count
//! 42      ...   step count x 17 LEB128 varints (text, listen[8], speak[8])
//! ...     ...   face marks: (step, identity, sample) as LEB128 varints
//! ```

use thiserror::Error;

use super::{FaceMark, StreamError, StreamLayout, TokenStep, TokenStream, FRAME_RATE, TOKENS_PER_STEP};
use crate::ids::IdentityId;

const MAGIC: &[u8; 4] = b"EGMS";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 42;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("header declares {expected} steps but the body holds {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("region bounds overlap: level1 {level1:?}, level2 {level2:?}")]
    RegionOverlap { level1: std::ops::Range<usize>, level2: std::ops::Range<usize> },
    #[error("{0} trailing bytes after the face track")]
    TrailingBytes(usize),
    #[error("invalid stream: {0}")]
    InvalidStream(#[from] StreamError),
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn varint(&mut self) -> Option<u64> {
        let mut value = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = *self.bytes.get(self.pos)?;
            self.pos += 1;
            value |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Some(value);
            }
        }
        None
    }

    fn varint_u32(&mut self) -> Option<u32> {
        self.varint().and_then(|v| u32::try_from(v).ok())
    }
}

pub fn serialize_stream(stream: &TokenStream) -> Vec<u8> {
    let layout = stream.layout();
    let mut out = Vec::with_capacity(HEADER_LEN + stream.len() * TOKENS_PER_STEP * 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(stream.len() as u32).to_le_bytes());
    out.extend_from_slice(&stream.base_step().to_le_bytes());
    for bound in [layout.level1.start, layout.level1.end, layout.level2.start, layout.level2.end] {
        out.extend_from_slice(&(bound as u32).to_le_bytes());
    }
    out.extend_from_slice(&((FRAME_RATE * 100.0) as u32).to_le_bytes());
    out.extend_from_slice(&(stream.faces().len() as u32).to_le_bytes());
    for step in stream.steps() {
        for token in step.slots() {
            put_varint(&mut out, u64::from(token));
        }
    }
    for face in stream.faces() {
        put_varint(&mut out, face.step);
        put_varint(&mut out, u64::from(face.identity.0));
        put_varint(&mut out, u64::from(face.sample));
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn parse_stream(bytes: &[u8]) -> Result<TokenStream, ParseError> {
    if bytes.len() < HEADER_LEN {
        return Err(ParseError::MalformedHeader(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(ParseError::MalformedHeader("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ParseError::MalformedHeader(format!("unsupported version {version}")));
    }
    let len = u32_at(bytes, 6) as usize;
    let base_step = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
    let b: Vec<usize> = (0..4).map(|i| u32_at(bytes, 18 + 4 * i) as usize).collect();
    let layout = StreamLayout { level1: b[0]..b[1], level2: b[2]..b[3] };
    let rate = u32_at(bytes, 34);
    if rate != (FRAME_RATE * 100.0) as u32 {
        return Err(ParseError::MalformedHeader(format!("frame rate x100 {rate} is not 1250")));
    }
    if layout.validate().is_err() {
        return Err(ParseError::RegionOverlap { level1: layout.level1, level2: layout.level2 });
    }
    let face_count = u32_at(bytes, 38) as usize;

    let mut reader = Reader { bytes, pos: HEADER_LEN };
    let mut steps = Vec::with_capacity(len.min(super::MAX_STEPS));
    for i in 0..len {
        let mut slots = [0u32; TOKENS_PER_STEP];
        for slot in slots.iter_mut() {
            *slot = reader.varint_u32().ok_or(ParseError::LengthMismatch { expected: len, found: i })?;
        }
        steps.push(TokenStep::from_slots(base_step + i as u64, slots));
    }
    let mut faces = Vec::with_capacity(face_count.min(super::MAX_STEPS));
    for _ in 0..face_count {
        let truncated = || ParseError::LengthMismatch { expected: len, found: len };
        let step = reader.varint().ok_or_else(truncated)?;
        let identity = reader.varint_u32().ok_or_else(truncated)?;
        let sample = reader.varint_u32().ok_or_else(truncated)?;
        faces.push(FaceMark { step, identity: IdentityId(identity), sample });
    }
    if reader.pos != bytes.len() {
        return Err(ParseError::TrailingBytes(bytes.len() - reader.pos));
    }
    Ok(TokenStream::new(base_step, layout, steps, faces)?)
}
