//! Pseudo-random bit sources.
//!
//! Two roles are kept apart:
//!
//! * State selection uses two Fibonacci LFSRs of different widths whose
//!   output bits are XOR-combined ([`XorPrng`]), feeding a 1-to-4
//!   demultiplexer ([`demux_select`]) that fires exactly one laser per slot.
//! * Physical noise (photon numbers, jitter, dark counts) and protocol
//!   choices (sampling, hash seeds) draw from ChaCha8 streams keyed by an
//!   [`RngSeed`] and a per-purpose stream id, so each is reproducible on
//!   its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::states::State;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RandomnessError {
    #[error("LFSR width {0} outside 3..=64")]
    BadWidth(u32),
    #[error("LFSR tap {tap} outside 1..={width}")]
    BadTap { tap: u32, width: u32 },
    #[error("LFSR taps must include the output stage {0}")]
    MissingOutputTap(u32),
    #[error("LFSR register must not be all zeros")]
    ZeroState,
    #[error("no built-in maximal tap set for width {0}")]
    NoDefaultTaps(u32),
    #[error("combined LFSRs must have different widths (both {0})")]
    EqualWidths(u32),
    #[error("sanity tests need at least {min} bits, got {got}")]
    TooShort { min: usize, got: usize },
}

/// Maximal-length Fibonacci tap positions (1-based, output stage first).
pub fn maximal_taps(width: u32) -> Option<&'static [u32]> {
    Some(match width {
        3 => &[3, 2],
        4 => &[4, 3],
        5 => &[5, 3],
        6 => &[6, 5],
        7 => &[7, 6],
        8 => &[8, 6, 5, 4],
        9 => &[9, 5],
        10 => &[10, 7],
        11 => &[11, 9],
        12 => &[12, 6, 4, 1],
        13 => &[13, 4, 3, 1],
        14 => &[14, 5, 3, 1],
        15 => &[15, 14],
        16 => &[16, 15, 13, 4],
        17 => &[17, 14],
        18 => &[18, 11],
        19 => &[19, 6, 2, 1],
        20 => &[20, 17],
        21 => &[21, 19],
        22 => &[22, 21],
        23 => &[23, 18],
        24 => &[24, 23, 22, 17],
        25 => &[25, 22],
        26 => &[26, 6, 2, 1],
        27 => &[27, 5, 2, 1],
        28 => &[28, 25],
        29 => &[29, 27],
        30 => &[30, 6, 4, 1],
        31 => &[31, 28],
        32 => &[32, 22, 2, 1],
        33 => &[33, 20],
        63 => &[63, 62],
        64 => &[64, 63, 61, 60],
        _ => return None,
    })
}

/// Fibonacci linear feedback shift register.
///
/// Stage `k` (1-based) lives in bit `k-1` of `register`. Each step outputs
/// stage `width`, shifts every stage up by one and feeds the XOR of the
/// tapped stages into stage 1. There is no way to step backwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lfsr {
    register: u64,
    tap_mask: u64,
    width: u32,
}

impl Lfsr {
    pub fn new(width: u32, taps: &[u32], seed: u64) -> Result<Self, RandomnessError> {
        if !(3..=64).contains(&width) {
            return Err(RandomnessError::BadWidth(width));
        }
        let mut tap_mask = 0u64;
        for &tap in taps {
            if tap == 0 || tap > width {
                return Err(RandomnessError::BadTap { tap, width });
            }
            tap_mask |= 1u64 << (tap - 1);
        }
        if tap_mask >> (width - 1) & 1 == 0 {
            return Err(RandomnessError::MissingOutputTap(width));
        }
        let register = seed & Self::mask(width);
        if register == 0 {
            return Err(RandomnessError::ZeroState);
        }
        Ok(Self { register, tap_mask, width })
    }

    /// Register with the built-in maximal taps for `width`.
    pub fn maximal(width: u32, seed: u64) -> Result<Self, RandomnessError> {
        let taps = maximal_taps(width).ok_or(RandomnessError::NoDefaultTaps(width))?;
        Self::new(width, taps, seed)
    }

    fn mask(width: u32) -> u64 {
        if width == 64 {
            u64::MAX
        } else {
            (1u64 << width) - 1
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn register(&self) -> u64 {
        self.register
    }

    pub fn tap_mask(&self) -> u64 {
        self.tap_mask
    }

    #[inline]
    pub fn step(&mut self) -> bool {
        let out = (self.register >> (self.width - 1)) & 1 == 1;
        let fb = (self.register & self.tap_mask).count_ones() & 1;
        self.register = ((self.register << 1) | fb as u64) & Self::mask(self.width);
        out
    }
}

/// Two LFSRs of different widths with XOR-combined output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorPrng {
    a: Lfsr,
    b: Lfsr,
}

impl XorPrng {
    pub fn new(a: Lfsr, b: Lfsr) -> Result<Self, RandomnessError> {
        if a.width == b.width {
            return Err(RandomnessError::EqualWidths(a.width));
        }
        Ok(Self { a, b })
    }

    /// The default pair: maximal registers of widths 31 and 29, whose
    /// periods 2^31-1 and 2^29-1 are coprime.
    pub fn from_seed(seed: RngSeed) -> Self {
        let s = seed.derive(0x4c46_5352);
        let seed_a = nonzero(s, 31);
        let seed_b = nonzero(s >> 31, 29);
        Self::new(Lfsr::maximal(31, seed_a).unwrap(), Lfsr::maximal(29, seed_b).unwrap()).unwrap()
    }

    #[inline]
    pub fn next_bit(&mut self) -> bool {
        self.a.step() ^ self.b.step()
    }

    pub fn lfsrs(&self) -> (&Lfsr, &Lfsr) {
        (&self.a, &self.b)
    }

    /// Two successive output bits drive the demultiplexer select lines.
    #[inline]
    pub fn next_state(&mut self) -> State {
        let b1 = self.next_bit();
        let b0 = self.next_bit();
        State::from_index(demux_select(b1, b0))
    }

    pub fn take_bits(&mut self, n: usize) -> BitString {
        BitString::from_bools((0..n).map(|_| self.next_bit()))
    }
}

fn nonzero(x: u64, width: u32) -> u64 {
    let v = x & ((1u64 << width) - 1);
    if v == 0 {
        1
    } else {
        v
    }
}

/// One step of the combined generator.
pub fn xor_prng_next(a: &mut Lfsr, b: &mut Lfsr) -> Result<bool, RandomnessError> {
    if a.width == b.width {
        return Err(RandomnessError::EqualWidths(a.width));
    }
    Ok(a.step() ^ b.step())
}

/// 1-to-4 demultiplexer: select lines `(b1, b0)` pick exactly one laser.
/// 00 -> H, 01 -> V, 10 -> D, 11 -> A.
#[inline]
pub fn demux_select(b1: bool, b0: bool) -> u8 {
    ((b1 as u8) << 1) | b0 as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SanityReport {
    pub n: usize,
    pub ones: usize,
    pub runs: usize,
    pub monobit_pass: bool,
    pub runs_pass: bool,
}

pub const SANITY_MIN_BITS: usize = 10_000;

/// Monobit and runs checks against an i.i.d. fair-bit model, each at 3 sigma.
pub fn sanity_tests(bits: &BitString) -> Result<SanityReport, RandomnessError> {
    let n = bits.len();
    if n < SANITY_MIN_BITS {
        return Err(RandomnessError::TooShort { min: SANITY_MIN_BITS, got: n });
    }
    let ones = bits.count_ones();
    let monobit_pass = (ones as f64 - n as f64 / 2.0).abs() <= 3.0 * (n as f64 / 4.0).sqrt();

    let mut runs = 1usize;
    let mut prev = bits.get(0);
    for b in bits.iter().skip(1) {
        if b != prev {
            runs += 1;
            prev = b;
        }
    }
    // Runs of a fair i.i.d. source: 1 + Binomial(n-1, 1/2).
    let expected = 1.0 + (n as f64 - 1.0) / 2.0;
    let sd = ((n as f64 - 1.0) / 4.0).sqrt();
    let runs_pass = (runs as f64 - expected).abs() <= 3.0 * sd;
    Ok(SanityReport { n, ones, runs, monobit_pass, runs_pass })
}

/// Root seed of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

/// Stream ids for independent ChaCha8 substreams.
pub mod streams {
    pub const PHYSICS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const PA_SEED: u64 = 4;
    pub const CLASS: u64 = 5;
    pub const LDPC: u64 = 6;
}

impl RngSeed {
    /// SplitMix64 finaliser over `seed ^ salt`.
    pub fn derive(self, salt: u64) -> u64 {
        let mut z = self.0 ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn child(self, salt: u64) -> RngSeed {
        RngSeed(self.derive(salt))
    }

    /// Counter-based generator for one purpose.
    pub fn stream(self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }
}
