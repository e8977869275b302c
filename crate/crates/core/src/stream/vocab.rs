//! Token id layout shared by every channel of the stream.
//!
//! Ids are opaque `u32` values partitioned into disjoint ranges:
//!
//! ```text
//! 0                      <pad>   (text channel filler)
//! 1                      <empty> (audio slot with no signal)
//! 2 ..= 257              text bytes (byte-level monologue vocabulary)
//! 1024 ..                semantic audio tokens, 16 ids per voice
//! ACOUSTIC_BASE ..       acoustic audio tokens (no identity content)
//! UTTERANCE_BASE ..      utterance keys carried in acoustic slot 1 of user speech
//! ```
//!
//! The semantic token of each audio frame encodes which voice produced it, and
//! the first acoustic slot of user speech carries the utterance key so that a
//! mock ASR can map audio spans back to scripted transcripts.

pub const PAD: u32 = 0;
pub const EMPTY_AUDIO: u32 = 1;
pub const TEXT_BASE: u32 = 2;
pub const SEMANTIC_BASE: u32 = 1024;
pub const VOICE_STRIDE: u32 = 16;
pub const ACOUSTIC_BASE: u32 = 1 << 27;
pub const ACOUSTIC_SPAN: u32 = 2048;
pub const UTTERANCE_BASE: u32 = 1 << 28;

/// Largest voice id representable in the semantic range.
pub const MAX_VOICE: u32 = (ACOUSTIC_BASE - SEMANTIC_BASE) / VOICE_STRIDE - 1;

pub fn text_token(byte: u8) -> u32 {
    TEXT_BASE + u32::from(byte)
}

/// Inverse of [`text_token`]; `None` for pad and non-text ids.
pub fn text_byte(token: u32) -> Option<u8> {
    if (TEXT_BASE..TEXT_BASE + 256).contains(&token) {
        Some((token - TEXT_BASE) as u8)
    } else {
        None
    }
}

pub fn semantic_token(voice: u32, jitter: u32) -> u32 {
    debug_assert!(voice <= MAX_VOICE);
    SEMANTIC_BASE + voice * VOICE_STRIDE + jitter % VOICE_STRIDE
}

/// Voice id encoded in a semantic token.
pub fn voice_of(token: u32) -> Option<u32> {
    if (SEMANTIC_BASE..ACOUSTIC_BASE).contains(&token) {
        Some((token - SEMANTIC_BASE) / VOICE_STRIDE)
    } else {
        None
    }
}

pub fn acoustic_token(value: u32) -> u32 {
    ACOUSTIC_BASE + value % ACOUSTIC_SPAN
}

pub fn utterance_token(key: u32) -> u32 {
    UTTERANCE_BASE + key
}

pub fn utterance_of(token: u32) -> Option<u32> {
    token.checked_sub(UTTERANCE_BASE)
}

/// Byte-level tokenization used for every text that lands in the stream or a MemChunk.
pub fn tokenize_text(text: &str) -> Vec<u32> {
    text.bytes().map(text_token).collect()
}

/// Token count of `text` under the byte-level vocabulary.
pub fn text_cost(text: &str) -> usize {
    text.len()
}

/// Decodes text tokens, skipping pads; invalid UTF-8 is replaced lossily.
pub fn decode_text<I: IntoIterator<Item = u32>>(tokens: I) -> String {
    let bytes: Vec<u8> = tokens.into_iter().filter_map(text_byte).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}
