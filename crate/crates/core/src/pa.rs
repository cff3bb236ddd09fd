//! Privacy amplification: the leakage ledger, the secret length it allows,
//! and Toeplitz hashing.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitString;
use crate::randomness::{streams, RngSeed};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PaError {
    #[error("invalid ledger: {0}")]
    Ledger(String),
    #[error("Toeplitz seed has {got} bits, expected n + r - 1 = {expected}")]
    SeedLength { expected: usize, got: usize },
    #[error("key has {got} bits, hash expects {expected}")]
    KeyLength { expected: usize, got: usize },
}

/// What Eve may know about the reconciled key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageLedger {
    /// Reconciled key bits.
    pub n: usize,
    /// Estimated error rate.
    pub e: f64,
    /// Parity bits disclosed during reconciliation.
    pub p: usize,
    /// Security parameter.
    pub s: u32,
}

impl LeakageLedger {
    pub fn validate(&self) -> Result<(), PaError> {
        if !(self.e.is_finite() && (0.0..0.5).contains(&self.e)) {
            return Err(PaError::Ledger(format!("e = {} outside [0, 0.5)", self.e)));
        }
        Ok(())
    }

    /// `t = ceil(2 n e + p)`. A relative 1e-12 guard keeps binary
    /// representation error (e.g. of 0.025) from adding a bit.
    pub fn leaked_bits(&self) -> u64 {
        let x = 2.0 * self.n as f64 * self.e;
        let x = (x - x * 1e-12).ceil().max(0.0) as u64;
        x + self.p as u64
    }
}

/// `r = max(0, n - t - s)`; zero means no secret key.
pub fn secret_length(ledger: &LeakageLedger) -> Result<usize, PaError> {
    ledger.validate()?;
    let r = ledger.n as i128 - ledger.leaked_bits() as i128 - ledger.s as i128;
    Ok(r.max(0) as usize)
}

/// Toeplitz matrix `T_ij = b_{r-1+j-i}` given by its `n + r - 1` diagonal bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSpec {
    seed_bits: BitString,
    n: usize,
    r: usize,
}

impl ToeplitzSpec {
    pub fn new(seed_bits: BitString, n: usize, r: usize) -> Result<Self, PaError> {
        let expected = (n + r).saturating_sub(1);
        if seed_bits.len() != expected {
            return Err(PaError::SeedLength { expected, got: seed_bits.len() });
        }
        Ok(ToeplitzSpec { seed_bits, n, r })
    }

    /// Seed drawn from the run's generator.
    pub fn random(seed: RngSeed, n: usize, r: usize) -> Self {
        let mut rng = seed.stream(streams::PA_SEED);
        let bits = (0..(n + r).saturating_sub(1)).map(|_| rng.random::<bool>()).collect();
        ToeplitzSpec { seed_bits: bits, n, r }
    }

    pub fn seed_bits(&self) -> &BitString {
        &self.seed_bits
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }
}

/// `T * key` over GF(2).
///
/// Output bit `i` (0-based) is the parity of `key AND seed[r-1-i .. r-1-i+n]`.
/// The seed is kept in 64 pre-shifted copies so each window is read as
/// aligned words; rows are independent and evaluated in parallel.
pub fn toeplitz_hash(spec: &ToeplitzSpec, key: &BitString) -> Result<BitString, PaError> {
    if key.len() != spec.n {
        return Err(PaError::KeyLength { expected: spec.n, got: key.len() });
    }
    if spec.r == 0 || spec.n == 0 {
        return Ok(BitString::zeros(spec.r));
    }
    let key_words = key.words();
    let span = spec.seed_bits.len().div_ceil(64) + 1;
    let shifted: Vec<Vec<u64>> = (0..64).map(|s| (0..span).map(|w| spec.seed_bits.word_at(s + 64 * w)).collect()).collect();
    let parity = |i: usize| {
        let offset = spec.r - 1 - i;
        let copy = &shifted[offset % 64];
        let base = offset / 64;
        key_words.iter().enumerate().fold(0u32, |acc, (w, &k)| acc ^ (copy[base + w] & k).count_ones()) & 1 == 1
    };
    let bits: Vec<bool> = (0..spec.r).into_par_iter().map(parity).collect();
    Ok(BitString::from_bools(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense evaluation straight from `T_ij = b_{r-1+j-i}`, 1-based.
    fn dense(seed: &BitString, n: usize, r: usize, key: &BitString) -> BitString {
        (1..=r)
            .map(|i| (1..=n).fold(false, |acc, j| acc ^ (seed.get(r - 1 + j - i) & key.get(j - 1))))
            .collect()
    }

    #[test]
    fn secret_length_examples() {
        let l = LeakageLedger { n: 137_000, e: 0.025, p: 68_500, s: 10 };
        assert_eq!(l.leaked_bits(), 75_350);
        assert_eq!(secret_length(&l), Ok(61_640));
        assert_eq!(secret_length(&LeakageLedger { n: 5000, e: 0.0, p: 0, s: 0 }), Ok(5000));
        assert_eq!(secret_length(&LeakageLedger { n: 100, e: 0.4, p: 60, s: 10 }), Ok(0));
        assert!(secret_length(&LeakageLedger { n: 100, e: 0.5, p: 0, s: 0 }).is_err());
    }

    #[test]
    fn leaked_bits_round_up() {
        assert_eq!(LeakageLedger { n: 10, e: 0.01, p: 0, s: 0 }.leaked_bits(), 1);
        assert_eq!(LeakageLedger { n: 1000, e: 0.0301, p: 3, s: 0 }.leaked_bits(), 64);
    }

    #[test]
    fn hand_example() {
        let spec = ToeplitzSpec::new(BitString::parse("1011"), 3, 2).unwrap();
        assert_eq!(toeplitz_hash(&spec, &BitString::parse("110")).unwrap(), BitString::parse("11"));
        assert_eq!(toeplitz_hash(&spec, &BitString::parse("000")).unwrap(), BitString::parse("00"));
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(ToeplitzSpec::new(BitString::parse("101"), 3, 2), Err(PaError::SeedLength { .. })));
        let spec = ToeplitzSpec::new(BitString::parse("1011"), 3, 2).unwrap();
        assert!(matches!(toeplitz_hash(&spec, &BitString::parse("1")), Err(PaError::KeyLength { .. })));
    }

    #[test]
    fn zero_seed_zero_output() {
        let spec = ToeplitzSpec::new(BitString::zeros(1000 + 300 - 1), 1000, 300).unwrap();
        let key: BitString = (0..1000).map(|i| i % 3 == 0).collect();
        assert_eq!(toeplitz_hash(&spec, &key).unwrap().count_ones(), 0);
    }

    #[test]
    fn random_seed_is_reproducible() {
        assert_eq!(ToeplitzSpec::random(RngSeed(4), 100, 30), ToeplitzSpec::random(RngSeed(4), 100, 30));
        assert_ne!(ToeplitzSpec::random(RngSeed(4), 100, 30), ToeplitzSpec::random(RngSeed(5), 100, 30));
    }

    fn bits(len: usize) -> impl Strategy<Value = BitString> {
        proptest::collection::vec(any::<bool>(), len).prop_map(BitString::from_bools)
    }

    proptest! {
        #[test]
        fn matches_dense_definition((n, r) in (1usize..300, 1usize..200), s in any::<u64>(), k in any::<u64>()) {
            let spec = ToeplitzSpec::random(RngSeed(s), n, r);
            let key = ToeplitzSpec::random(RngSeed(k), n, 1).seed_bits().clone();
            prop_assert_eq!(toeplitz_hash(&spec, &key).unwrap(), dense(spec.seed_bits(), n, r, &key));
        }

        #[test]
        fn linear(s in any::<u64>(), a in bits(257), b in bits(257)) {
            let spec = ToeplitzSpec::random(RngSeed(s), 257, 91);
            let ha = toeplitz_hash(&spec, &a).unwrap();
            let hb = toeplitz_hash(&spec, &b).unwrap();
            let hab = toeplitz_hash(&spec, &a.xor(&b).unwrap()).unwrap();
            prop_assert_eq!(hab, ha.xor(&hb).unwrap());
        }
    }
}
