//! Information reconciliation with a rate-1/2 LDPC code.
//!
//! Keys are cut into 1024-bit blocks (the last one padded with zeros),
//! Alice sends each block's 512-bit syndrome and Bob decodes his block
//! toward hers. Blocks that do not converge are dropped from both keys but
//! their syndromes still count as disclosed.

pub mod code;
pub mod decoder;

use rayon::prelude::*;
use thiserror::Error;

use crate::bits::BitString;

pub use code::{build_code, LdpcCode, COLUMN_WEIGHT, N_BLOCK, N_PARITY};
pub use decoder::{decode_block, BlockStatus, BlockVerdict, MAX_ITERATIONS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EccError {
    #[error("cannot build a {column_weight}-regular code with {n} variables and {m} checks")]
    BadDimensions { n: usize, m: usize, column_weight: usize },
    #[error("code construction failed for seed {seed}")]
    ConstructionFailed { seed: u64 },
    #[error("block has {got} bits, code expects {expected}")]
    BlockLength { expected: usize, got: usize },
    #[error("syndrome has {got} bits, code expects {expected}")]
    SyndromeLength { expected: usize, got: usize },
    #[error("error-rate estimate {0} outside (0, 0.5)")]
    BadErrorRate(f64),
    #[error("keys differ in length ({0} vs {1})")]
    KeyLengths(usize, usize),
}

/// Bits disclosed by sending one syndrome per processed block.
pub fn parity_leakage(blocks_processed: usize) -> usize {
    blocks_processed * N_PARITY
}

/// Number of blocks a key of `len` bits occupies.
pub fn block_count(len: usize, n_block: usize) -> usize {
    len.div_ceil(n_block)
}

/// Block `i` of `key`, zero-padded to `n_block`; also returns the count of
/// real key bits in it.
pub fn key_block(key: &BitString, i: usize, n_block: usize) -> (BitString, usize) {
    let start = i * n_block;
    let end = (start + n_block).min(key.len());
    let mut block = key.slice(start..end).expect("block inside key");
    let real = block.len();
    block.extend_from(&BitString::zeros(n_block - real));
    (block, real)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconciled {
    pub alice: BitString,
    pub bob: BitString,
    pub verdicts: Vec<BlockVerdict>,
    pub blocks_processed: usize,
    pub parity_leakage: usize,
}

impl Reconciled {
    pub fn discarded(&self) -> usize {
        self.verdicts.iter().filter(|v| !v.is_corrected()).count()
    }
}

/// Reconciles two local keys block by block (Bob corrects toward Alice).
/// Blocks decode independently and are processed in parallel.
pub fn reconcile(code: &LdpcCode, alice: &BitString, bob: &BitString, e_hat: f64, max_iter: usize) -> Result<Reconciled, EccError> {
    if alice.len() != bob.len() {
        return Err(EccError::KeyLengths(alice.len(), bob.len()));
    }
    let n_block = code.n();
    let blocks = block_count(alice.len(), n_block);
    let results = (0..blocks)
        .into_par_iter()
        .map(|i| {
            let (a, real) = key_block(alice, i, n_block);
            let (b, _) = key_block(bob, i, n_block);
            let s_a = code.syndrome(&a)?;
            let (fixed, verdict) = decode_block(code, &b, &s_a, e_hat, max_iter)?;
            Ok((a, fixed, real, verdict))
        })
        .collect::<Result<Vec<_>, EccError>>()?;
    let mut out = Reconciled {
        alice: BitString::new(),
        bob: BitString::new(),
        verdicts: Vec::with_capacity(blocks),
        blocks_processed: blocks,
        parity_leakage: parity_leakage(blocks),
    };
    for (a, b, real, verdict) in results {
        if verdict.is_corrected() {
            out.alice.extend_from(&a.slice(0..real).expect("real part"));
            out.bob.extend_from(&b.slice(0..real).expect("real part"));
        }
        out.verdicts.push(verdict);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::RngSeed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leakage_arithmetic() {
        assert_eq!(parity_leakage(0), 0);
        assert_eq!(parity_leakage(1), 512);
        assert_eq!(parity_leakage(267), 136_704);
        assert_eq!(block_count(137_000, 1024), 134);
        assert_eq!(block_count(0, 1024), 0);
    }

    #[test]
    fn padding_keeps_real_bits_only() {
        let key = BitString::parse("10110");
        let (b, real) = key_block(&key, 0, 8);
        assert_eq!(b, BitString::parse("10110000"));
        assert_eq!(real, 5);
    }

    #[test]
    fn reconciled_keys_agree() {
        let code = build_code(RngSeed(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let alice: BitString = (0..5000).map(|_| rng.random::<bool>()).collect();
        let bob: BitString = alice.iter().map(|b| b ^ (rng.random::<f64>() < 0.02)).collect();
        let r = reconcile(&code, &alice, &bob, 0.02, MAX_ITERATIONS).unwrap();
        assert_eq!(r.blocks_processed, 5);
        assert_eq!(r.parity_leakage, 2560);
        assert_eq!(r.alice, r.bob);
        let kept: usize = r.verdicts.iter().filter(|v| v.is_corrected()).count();
        assert_eq!(r.alice.len(), 5000 - (5 - kept) * 1024 + if r.verdicts[4].is_corrected() { 0 } else { 1024 - 904 });
    }
}
