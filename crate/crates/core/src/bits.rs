//! Packed bit strings.
//!
//! Keys, syndromes, parity disclosures and hash seeds are all ordered
//! sequences of bits. [`BitString`] stores them packed into 64-bit words
//! but only exposes positional semantics: bit `i` is the `i`-th bit of the
//! sequence, nothing more.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitsError {
    #[error("length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("range {start}..{end} out of bounds for {len} bits")]
    OutOfBounds { start: usize, end: usize, len: usize },
    #[error("bit value {0} is not 0 or 1")]
    NotABit(u8),
    #[error("packed buffer holds {available} bits, {wanted} requested")]
    ShortBuffer { wanted: usize, available: usize },
}

/// Ordered sequence of bits, packed LSB-first into `u64` words.
///
/// Unused high bits of the last word are always zero, so word-level
/// comparisons and popcounts are exact.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self { words: Vec::with_capacity(bits.div_ceil(64)), len: 0 }
    }

    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len }
    }

    /// Builds from a slice of `0`/`1` values.
    pub fn from_bits(bits: &[u8]) -> Result<Self, BitsError> {
        let mut out = Self::with_capacity(bits.len());
        for &b in bits {
            match b {
                0 => out.push(false),
                1 => out.push(true),
                other => return Err(BitsError::NotABit(other)),
            }
        }
        Ok(out)
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let iter = bits.into_iter();
        let mut out = Self::with_capacity(iter.size_hint().0);
        for b in iter {
            out.push(b);
        }
        out
    }

    /// Parses a string of `'0'`/`'1'` characters; other characters are ignored.
    pub fn parse(s: &str) -> Self {
        Self::from_bools(s.chars().filter_map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        }))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// # Panics
    /// Panics if `i >= len`.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for {} bits", self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for {} bits", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range for {} bits", self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    #[inline]
    pub fn push(&mut self, value: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        if value {
            self.words[self.len / 64] |= 1u64 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn extend_from(&mut self, other: &BitString) {
        for b in other.iter() {
            self.push(b);
        }
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn slice(&self, range: Range<usize>) -> Result<BitString, BitsError> {
        if range.start > range.end || range.end > self.len {
            return Err(BitsError::OutOfBounds { start: range.start, end: range.end, len: self.len });
        }
        let mut out = Self::with_capacity(range.len());
        for i in range {
            out.push(self.get(i));
        }
        Ok(out)
    }

    /// Keeps only the bits at the given positions, in the order given.
    pub fn select(&self, positions: &[usize]) -> BitString {
        BitString::from_bools(positions.iter().map(|&i| self.get(i)))
    }

    /// Removes the bits at `positions` (which must be sorted ascending).
    pub fn remove_sorted(&self, positions: &[usize]) -> BitString {
        let mut out = Self::with_capacity(self.len.saturating_sub(positions.len()));
        let mut drop = positions.iter().peekable();
        for i in 0..self.len {
            if drop.peek() == Some(&&i) {
                drop.next();
                continue;
            }
            out.push(self.get(i));
        }
        out
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, BitsError> {
        if self.len != other.len {
            return Err(BitsError::LengthMismatch { left: self.len, right: other.len });
        }
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        Ok(BitString { words, len: self.len })
    }

    /// Raw packed words (LSB-first, trailing bits zero).
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Reads 64 bits starting at bit `offset`; positions past the end read as zero.
    #[inline]
    pub fn word_at(&self, offset: usize) -> u64 {
        let w = offset / 64;
        let sh = offset % 64;
        let lo = self.words.get(w).copied().unwrap_or(0);
        if sh == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> sh) | (hi << (64 - sh))
        }
    }

    /// Packs bits MSB-first within each byte, zero-padding the final byte.
    pub fn to_bytes_be(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in 0..self.len {
            if self.get(i) {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    /// Inverse of [`to_bytes_be`](Self::to_bytes_be) for the first `len` bits.
    pub fn from_bytes_be(bytes: &[u8], len: usize) -> Result<BitString, BitsError> {
        if bytes.len() * 8 < len {
            return Err(BitsError::ShortBuffer { wanted: len, available: bytes.len() * 8 });
        }
        Ok(BitString::from_bools((0..len).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)))
    }

    pub fn to_u8_vec(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString({self})")
        } else {
            write!(f, "BitString({} bits, {} ones)", self.len, self.count_ones())
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BitString::from_bools(iter)
    }
}

/// Number of positions where `a` and `b` differ.
pub fn hamming_distance(a: &BitString, b: &BitString) -> Result<usize, BitsError> {
    if a.len() != b.len() {
        return Err(BitsError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones() as usize).sum())
}
