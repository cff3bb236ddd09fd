//! Wire format.
//!
//! ```text
//! 0      2        3         4                 8
//! +------+--------+---------+-----------------+-----------+
//! | 51 4B| version| msg_type| payload_len (LE)| payload   |
//! +------+--------+---------+-----------------+-----------+
//! ```
//!
//! Integers are little-endian. Bit strings are a `u32` bit count followed by
//! the bits packed MSB-first within bytes, final byte zero-padded.

use std::io::{Read, Write};

use thiserror::Error;

use crate::bits::BitString;
use crate::states::Basis;

use super::AbortReason;

pub const MAGIC: [u8; 2] = [0x51, 0x4B];
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 8;
/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    Sync = 0x02,
    BasisAnnounce = 0x03,
    KeepList = 0x04,
    SampleIdx = 0x05,
    SampleBits = 0x06,
    QberReport = 0x07,
    Syndrome = 0x08,
    BlockVerdict = 0x09,
    PaParams = 0x0A,
    KeyHash = 0x0B,
    VerifyOk = 0x0C,
    Abort = 0x0D,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<MsgType> {
        use MsgType::*;
        Some(match b {
            0x01 => Hello,
            0x02 => Sync,
            0x03 => BasisAnnounce,
            0x04 => KeepList,
            0x05 => SampleIdx,
            0x06 => SampleBits,
            0x07 => QberReport,
            0x08 => Syndrome,
            0x09 => BlockVerdict,
            0x0A => PaParams,
            0x0B => KeyHash,
            0x0C => VerifyOk,
            0x0D => Abort,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use MsgType::*;
        match self {
            Hello => "HELLO",
            Sync => "SYNC",
            BasisAnnounce => "BASIS_ANNOUNCE",
            KeepList => "KEEP_LIST",
            SampleIdx => "SAMPLE_IDX",
            SampleBits => "SAMPLE_BITS",
            QberReport => "QBER_REPORT",
            Syndrome => "SYNDROME",
            BlockVerdict => "BLOCK_VERDICT",
            PaParams => "PA_PARAMS",
            KeyHash => "KEY_HASH",
            VerifyOk => "VERIFY_OK",
            Abort => "ABORT",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello,
    Sync { t_a0: i64, t_d: i64, period: i64, t_f: i64 },
    BasisAnnounce { slots: Vec<u64>, bases: Vec<Basis> },
    KeepList { keep: BitString },
    SampleIdx { indices: Vec<u32> },
    SampleBits { bits: BitString },
    QberReport { qber: f64 },
    Syndrome { block: u32, syndrome: BitString },
    BlockVerdict { block: u32, corrected: bool, iterations: u32 },
    PaParams { n: u64, r: u64, s: u64, seed: BitString },
    KeyHash { hash: u64 },
    VerifyOk,
    Abort { reason: AbortReason },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello => MsgType::Hello,
            Message::Sync { .. } => MsgType::Sync,
            Message::BasisAnnounce { .. } => MsgType::BasisAnnounce,
            Message::KeepList { .. } => MsgType::KeepList,
            Message::SampleIdx { .. } => MsgType::SampleIdx,
            Message::SampleBits { .. } => MsgType::SampleBits,
            Message::QberReport { .. } => MsgType::QberReport,
            Message::Syndrome { .. } => MsgType::Syndrome,
            Message::BlockVerdict { .. } => MsgType::BlockVerdict,
            Message::PaParams { .. } => MsgType::PaParams,
            Message::KeyHash { .. } => MsgType::KeyHash,
            Message::VerifyOk => MsgType::VerifyOk,
            Message::Abort { .. } => MsgType::Abort,
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("malformed {msg} payload: {detail}")]
    Malformed { msg: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn put_bits(out: &mut Vec<u8>, bits: &BitString) {
    out.extend_from_slice(&(bits.len() as u32).to_le_bytes());
    out.extend_from_slice(&bits.to_bytes_be());
}

pub fn encode_payload(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        Message::Hello | Message::VerifyOk => {}
        Message::Sync { t_a0, t_d, period, t_f } => {
            for v in [t_a0, t_d, period, t_f] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Message::BasisAnnounce { slots, bases } => {
            out.extend_from_slice(&(slots.len() as u32).to_le_bytes());
            for s in slots {
                out.extend_from_slice(&s.to_le_bytes());
            }
            put_bits(&mut out, &bases.iter().map(|b| b.as_bit()).collect());
        }
        Message::KeepList { keep } => put_bits(&mut out, keep),
        Message::SampleIdx { indices } => {
            out.extend_from_slice(&(indices.len() as u32).to_le_bytes());
            for i in indices {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        Message::SampleBits { bits } => put_bits(&mut out, bits),
        Message::QberReport { qber } => out.extend_from_slice(&qber.to_le_bytes()),
        Message::Syndrome { block, syndrome } => {
            out.extend_from_slice(&block.to_le_bytes());
            put_bits(&mut out, syndrome);
        }
        Message::BlockVerdict { block, corrected, iterations } => {
            out.extend_from_slice(&block.to_le_bytes());
            out.push(*corrected as u8);
            out.extend_from_slice(&iterations.to_le_bytes());
        }
        Message::PaParams { n, r, s, seed } => {
            for v in [n, r, s] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_bits(&mut out, seed);
        }
        Message::KeyHash { hash } => out.extend_from_slice(&hash.to_le_bytes()),
        Message::Abort { reason } => out.push(*reason as u8),
    }
    out
}

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let payload = encode_payload(msg);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Cursor<'a> {
    msg: &'static str,
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn malformed(&self, detail: impl Into<String>) -> FrameError {
        FrameError::Malformed { msg: self.msg, detail: detail.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.buf.len() < n {
            return Err(self.malformed(format!("needs {n} more bytes, {} left", self.buf.len())));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn i64(&mut self) -> Result<i64, FrameError> {
        Ok(self.u64()? as i64)
    }

    fn bits(&mut self) -> Result<BitString, FrameError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len.div_ceil(8))?;
        if !len.is_multiple_of(8) && bytes[bytes.len() - 1] & (0xFF >> (len % 8)) != 0 {
            return Err(self.malformed("nonzero padding bits"));
        }
        Ok(BitString::from_bytes_be(bytes, len).expect("length checked"))
    }

    fn finish(self) -> Result<(), FrameError> {
        if !self.buf.is_empty() {
            return Err(self.malformed(format!("{} trailing bytes", self.buf.len())));
        }
        Ok(())
    }
}

pub fn decode_payload(ty: MsgType, payload: &[u8]) -> Result<Message, FrameError> {
    let mut c = Cursor { msg: ty.name(), buf: payload };
    let msg = match ty {
        MsgType::Hello => Message::Hello,
        MsgType::VerifyOk => Message::VerifyOk,
        MsgType::Sync => Message::Sync { t_a0: c.i64()?, t_d: c.i64()?, period: c.i64()?, t_f: c.i64()? },
        MsgType::BasisAnnounce => {
            let count = c.u32()? as usize;
            if count > c.buf.len() / 8 {
                return Err(c.malformed(format!("{count} slots do not fit")));
            }
            let slots = (0..count).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
            let bits = c.bits()?;
            if bits.len() != count {
                return Err(c.malformed(format!("{} bases for {count} slots", bits.len())));
            }
            Message::BasisAnnounce { slots, bases: bits.iter().map(Basis::from_bit).collect() }
        }
        MsgType::KeepList => Message::KeepList { keep: c.bits()? },
        MsgType::SampleIdx => {
            let count = c.u32()? as usize;
            if count > c.buf.len() / 4 {
                return Err(c.malformed(format!("{count} indices do not fit")));
            }
            Message::SampleIdx { indices: (0..count).map(|_| c.u32()).collect::<Result<_, _>>()? }
        }
        MsgType::SampleBits => Message::SampleBits { bits: c.bits()? },
        MsgType::QberReport => Message::QberReport { qber: f64::from_bits(c.u64()?) },
        MsgType::Syndrome => Message::Syndrome { block: c.u32()?, syndrome: c.bits()? },
        MsgType::BlockVerdict => {
            let block = c.u32()?;
            let corrected = match c.u8()? {
                0 => false,
                1 => true,
                other => return Err(c.malformed(format!("status byte {other}"))),
            };
            Message::BlockVerdict { block, corrected, iterations: c.u32()? }
        }
        MsgType::PaParams => Message::PaParams { n: c.u64()?, r: c.u64()?, s: c.u64()?, seed: c.bits()? },
        MsgType::KeyHash => Message::KeyHash { hash: c.u64()? },
        MsgType::Abort => {
            let code = c.u8()?;
            let reason = AbortReason::from_code(code).ok_or_else(|| c.malformed(format!("reason code {code}")))?;
            Message::Abort { reason }
        }
    };
    c.finish()?;
    Ok(msg)
}

/// Validates a header; returns the message type and payload length.
fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, usize), FrameError> {
    if h[0..2] != MAGIC {
        return Err(FrameError::BadMagic([h[0], h[1]]));
    }
    if h[2] != VERSION {
        return Err(FrameError::BadVersion(h[2]));
    }
    let ty = MsgType::from_u8(h[3]).ok_or(FrameError::UnknownType(h[3]))?;
    let len = u32::from_le_bytes([h[4], h[5], h[6], h[7]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Malformed { msg: ty.name(), detail: format!("payload length {len} over limit") });
    }
    Ok((ty, len))
}

/// Decodes one frame from the front of `bytes`; returns it and the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let header: [u8; HEADER_LEN] = bytes[..HEADER_LEN].try_into().expect("header length");
    let (ty, len) = parse_header(&header)?;
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(FrameError::Truncated { needed: total, available: bytes.len() });
    }
    Ok((decode_payload(ty, &bytes[HEADER_LEN..total])?, total))
}

/// Reads exactly one frame; returns the message and its raw bytes.
pub fn read_frame<R: Read>(r: &mut R) -> Result<(Message, Vec<u8>), FrameError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(r, &mut header)?;
    let (ty, len) = parse_header(&header)?;
    let mut raw = Vec::with_capacity(HEADER_LEN + len);
    raw.extend_from_slice(&header);
    raw.resize(HEADER_LEN + len, 0);
    read_full(r, &mut raw[HEADER_LEN..])?;
    let msg = decode_payload(ty, &raw[HEADER_LEN..])?;
    Ok((msg, raw))
}

/// Like `read_exact`, but a clean EOF mid-frame is reported as truncation.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FrameError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return Err(FrameError::Truncated { needed: buf.len(), available: filled }),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<Vec<u8>, FrameError> {
    let bytes = encode_frame(msg);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hello_layout() {
        assert_eq!(encode_frame(&Message::Hello), [0x51, 0x4B, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00]);
    }

    #[test]
    fn sync_roundtrip_and_layout() {
        let m = Message::Sync { t_a0: 0, t_d: 666_000, period: 200_000, t_f: 5_000 };
        let bytes = encode_frame(&m);
        assert_eq!(&bytes[3..8], &[0x02, 32, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &666_000i64.to_le_bytes());
        assert_eq!(decode_frame(&bytes).unwrap(), (m, bytes.len()));
    }

    #[test]
    fn bit_packing_is_msb_first() {
        let m = Message::KeepList { keep: BitString::parse("1000000011") };
        let bytes = encode_frame(&m);
        assert_eq!(&bytes[8..], &[10, 0, 0, 0, 0x80, 0xC0]);
    }

    #[test]
    fn distinct_decode_errors() {
        let mut bad = encode_frame(&Message::Hello);
        bad[0] = 0;
        bad[1] = 0;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadMagic([0, 0]))));
        let mut bad = encode_frame(&Message::Hello);
        bad[2] = 2;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadVersion(2))));
        let mut bad = encode_frame(&Message::Hello);
        bad[3] = 0x7F;
        assert!(matches!(decode_frame(&bad), Err(FrameError::UnknownType(0x7F))));
        let full = encode_frame(&Message::KeyHash { hash: 7 });
        assert!(matches!(decode_frame(&full[..full.len() - 1]), Err(FrameError::Truncated { .. })));
        assert!(matches!(decode_frame(&full[..5]), Err(FrameError::Truncated { .. })));
    }

    #[test]
    fn malformed_payloads() {
        let mut f = encode_frame(&Message::Abort { reason: AbortReason::Timeout });
        f[8] = 99;
        assert!(matches!(decode_frame(&f), Err(FrameError::Malformed { .. })));
        // padding bit set
        let f = [0x51, 0x4B, 1, 0x06, 5, 0, 0, 0, 1, 0, 0, 0, 0xC0];
        assert!(matches!(decode_frame(&f), Err(FrameError::Malformed { .. })));
        // trailing byte after a HELLO
        let f = [0x51, 0x4B, 1, 0x01, 1, 0, 0, 0, 0];
        assert!(matches!(decode_frame(&f), Err(FrameError::Malformed { .. })));
    }

    #[test]
    fn read_frame_from_stream() {
        let mut bytes = encode_frame(&Message::Hello);
        bytes.extend(encode_frame(&Message::VerifyOk));
        let mut r = bytes.as_slice();
        assert_eq!(read_frame(&mut r).unwrap().0, Message::Hello);
        assert_eq!(read_frame(&mut r).unwrap().0, Message::VerifyOk);
        assert!(matches!(read_frame(&mut r), Err(FrameError::Truncated { .. })));
    }

    fn bits() -> impl Strategy<Value = BitString> {
        proptest::collection::vec(any::<bool>(), 0..300).prop_map(BitString::from_bools)
    }

    fn message() -> impl Strategy<Value = Message> {
        let reason = proptest::sample::select(AbortReason::ALL.to_vec());
        prop_oneof![
            Just(Message::Hello),
            Just(Message::VerifyOk),
            (any::<i64>(), any::<i64>(), any::<i64>(), any::<i64>()).prop_map(|(a, b, c, d)| Message::Sync { t_a0: a, t_d: b, period: c, t_f: d }),
            proptest::collection::vec((any::<u64>(), any::<bool>()), 0..50).prop_map(|v| Message::BasisAnnounce {
                slots: v.iter().map(|x| x.0).collect(),
                bases: v.iter().map(|x| Basis::from_bit(x.1)).collect(),
            }),
            bits().prop_map(|keep| Message::KeepList { keep }),
            proptest::collection::vec(any::<u32>(), 0..50).prop_map(|indices| Message::SampleIdx { indices }),
            bits().prop_map(|bits| Message::SampleBits { bits }),
            (0.0f64..1.0).prop_map(|qber| Message::QberReport { qber }),
            (any::<u32>(), bits()).prop_map(|(block, syndrome)| Message::Syndrome { block, syndrome }),
            (any::<u32>(), any::<bool>(), any::<u32>()).prop_map(|(block, corrected, iterations)| Message::BlockVerdict { block, corrected, iterations }),
            (any::<u64>(), any::<u64>(), any::<u64>(), bits()).prop_map(|(n, r, s, seed)| Message::PaParams { n, r, s, seed }),
            any::<u64>().prop_map(|hash| Message::KeyHash { hash }),
            reason.prop_map(|reason| Message::Abort { reason }),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip(m in message()) {
            let bytes = encode_frame(&m);
            let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
            prop_assert_eq!(len, bytes.len() - HEADER_LEN);
            prop_assert_eq!(decode_frame(&bytes).unwrap(), (m, bytes.len()));
        }
    }
}
