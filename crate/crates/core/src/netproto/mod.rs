//! Classical-channel protocol between Alice and Bob.
//!
//! Frames travel over any reliable ordered byte stream. The exchange is
//! half-duplex with a fixed turn order, so both endpoints record the same
//! frame sequence in their transcripts.

pub mod frame;
pub mod session;
pub mod transport;

use std::fmt::{self, Write as _};
use std::io::Write;

use sha2::{Digest, Sha256};

use crate::bits::BitString;

pub use frame::{decode_frame, encode_frame, FrameError, Message, MsgType};
pub use session::{run_alice, run_bob, run_loopback, run_session, RoleInput, SessionOutcome, SessionParams, SessionReport};
pub use transport::{loopback_pair, LoopbackStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Alice,
    Bob,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Alice => "alice",
            Role::Bob => "bob",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Idle,
    Synced,
    Sifted,
    Estimated,
    Reconciled,
    Amplified,
    Verified,
    Aborted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::Synced => "synced",
            Phase::Sifted => "sifted",
            Phase::Estimated => "estimated",
            Phase::Reconciled => "reconciled",
            Phase::Amplified => "amplified",
            Phase::Verified => "verified",
            Phase::Aborted => "aborted",
        })
    }
}

/// One-byte reason carried by ABORT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AbortReason {
    Timeout = 1,
    ProtocolViolation = 2,
    QberExceedsThreshold = 3,
    HashMismatch = 4,
    NoDetections = 5,
    NoSecretKey = 6,
    MalformedFrame = 7,
    ParameterMismatch = 8,
}

impl AbortReason {
    pub const ALL: [AbortReason; 8] = [
        AbortReason::Timeout,
        AbortReason::ProtocolViolation,
        AbortReason::QberExceedsThreshold,
        AbortReason::HashMismatch,
        AbortReason::NoDetections,
        AbortReason::NoSecretKey,
        AbortReason::MalformedFrame,
        AbortReason::ParameterMismatch,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| *r as u8 == code)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::Timeout => "timeout",
            AbortReason::ProtocolViolation => "protocol_violation",
            AbortReason::QberExceedsThreshold => "qber_exceeds_threshold",
            AbortReason::HashMismatch => "hash_mismatch",
            AbortReason::NoDetections => "no_detections",
            AbortReason::NoSecretKey => "no_secret_key",
            AbortReason::MalformedFrame => "malformed_frame",
            AbortReason::ParameterMismatch => "parameter_mismatch",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A frame as seen on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub seq: usize,
    pub sender: Role,
    pub msg_type: MsgType,
    pub bytes: Vec<u8>,
}

/// Writes `seq,sender,msg_type,bytes_hex` rows.
pub fn write_transcript_csv<W: Write>(w: W, transcript: &[TranscriptEntry]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["seq", "sender", "msg_type", "bytes_hex"])?;
    let mut hex = String::new();
    for e in transcript {
        hex.clear();
        for b in &e.bytes {
            write!(hex, "{b:02x}").expect("writing to a String");
        }
        wr.write_record([e.seq.to_string().as_str(), &e.sender.to_string(), e.msg_type.name(), &hex])?;
    }
    wr.flush()?;
    Ok(())
}

/// 64-bit key checksum: the first eight bytes of SHA-256 over the bit count
/// (u32 LE) and the packed key, read little-endian.
pub fn key_hash(key: &BitString) -> u64 {
    let mut h = Sha256::new();
    h.update((key.len() as u32).to_le_bytes());
    h.update(key.to_bytes_be());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abort_codes_roundtrip() {
        for r in AbortReason::ALL {
            assert_eq!(AbortReason::from_code(r as u8), Some(r));
        }
        assert_eq!(AbortReason::from_code(0), None);
        assert_eq!(AbortReason::QberExceedsThreshold.as_str(), "qber_exceeds_threshold");
    }

    #[test]
    fn key_hash_depends_on_length_and_content() {
        let a = BitString::parse("1011");
        assert_eq!(key_hash(&a), key_hash(&BitString::parse("1011")));
        assert_ne!(key_hash(&a), key_hash(&BitString::parse("10110")));
        assert_ne!(key_hash(&a), key_hash(&BitString::parse("1010")));
    }

    #[test]
    fn transcript_csv_format() {
        let t = vec![TranscriptEntry { seq: 0, sender: Role::Alice, msg_type: MsgType::Hello, bytes: encode_frame(&Message::Hello) }];
        let mut out = Vec::new();
        write_transcript_csv(&mut out, &t).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "seq,sender,msg_type,bytes_hex\n0,alice,HELLO,514b010100000000\n");
    }
}
