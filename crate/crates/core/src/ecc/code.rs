//! Regular LDPC parity-check matrices.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::bits::BitString;
use crate::randomness::{streams, RngSeed};

use super::EccError;

pub const N_BLOCK: usize = 1024;
pub const N_PARITY: usize = 512;
pub const COLUMN_WEIGHT: usize = 3;

const MAX_ATTEMPTS: u64 = 64;

/// Sparse parity-check matrix, stored both by column and by row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdpcCode {
    n: usize,
    m: usize,
    column_weight: usize,
    seed: RngSeed,
    /// Checks touching each variable, ascending.
    var_checks: Vec<Vec<u32>>,
    /// Variables in each check, ascending.
    check_vars: Vec<Vec<u32>>,
}

/// The (3,6)-regular code with 1024 variables and 512 checks.
pub fn build_code(seed: RngSeed) -> Result<LdpcCode, EccError> {
    LdpcCode::regular(N_BLOCK, N_PARITY, COLUMN_WEIGHT, seed)
}

impl LdpcCode {
    /// Column-regular construction with balanced rows.
    ///
    /// Variables are connected one edge at a time to a check of currently
    /// lowest degree, chosen at random among those that close no 4-cycle;
    /// if none qualifies the cycle filter is dropped for that edge. A
    /// construction that dead-ends is restarted from the next random state.
    pub fn regular(n: usize, m: usize, column_weight: usize, seed: RngSeed) -> Result<Self, EccError> {
        if n == 0 || m == 0 || column_weight == 0 || column_weight > m || !(n * column_weight).is_multiple_of(m) {
            return Err(EccError::BadDimensions { n, m, column_weight });
        }
        let row_weight = n * column_weight / m;
        let mut rng = seed.stream(streams::LDPC);
        for _ in 0..MAX_ATTEMPTS {
            if let Some((var_checks, check_vars)) = try_construct(n, m, column_weight, row_weight, &mut rng) {
                return Ok(LdpcCode { n, m, column_weight, seed, var_checks, check_vars });
            }
        }
        Err(EccError::ConstructionFailed { seed: seed.0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn column_weight(&self) -> usize {
        self.column_weight
    }

    pub fn seed(&self) -> RngSeed {
        self.seed
    }

    pub fn var_checks(&self, v: usize) -> &[u32] {
        &self.var_checks[v]
    }

    pub fn check_vars(&self, c: usize) -> &[u32] {
        &self.check_vars[c]
    }

    /// `(check, variable)` pairs in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.check_vars.iter().enumerate().flat_map(|(c, vs)| vs.iter().map(move |&v| (c, v as usize)))
    }

    /// Number of 4-cycles (pairs of checks sharing two or more variables).
    pub fn four_cycles(&self) -> usize {
        let mut count = 0;
        let mut shared = vec![0u32; self.m];
        for c in 0..self.m {
            shared.iter_mut().for_each(|s| *s = 0);
            for &v in &self.check_vars[c] {
                for &c2 in &self.var_checks[v as usize] {
                    if c2 as usize > c {
                        shared[c2 as usize] += 1;
                    }
                }
            }
            count += shared.iter().map(|&k| (k as usize) * (k.saturating_sub(1) as usize) / 2).sum::<usize>();
        }
        count
    }

    /// `H x` over GF(2).
    pub fn syndrome(&self, block: &BitString) -> Result<BitString, EccError> {
        if block.len() != self.n {
            return Err(EccError::BlockLength { expected: self.n, got: block.len() });
        }
        Ok(self.check_vars.iter().map(|vs| vs.iter().fold(false, |acc, &v| acc ^ block.get(v as usize))).collect())
    }
}

/// Variable-to-check and check-to-variable adjacency.
type Adjacency = (Vec<Vec<u32>>, Vec<Vec<u32>>);

fn try_construct<R: Rng>(n: usize, m: usize, wc: usize, wr: usize, rng: &mut R) -> Option<Adjacency> {
    let mut var_checks: Vec<Vec<u32>> = vec![Vec::with_capacity(wc); n];
    let mut check_vars: Vec<Vec<u32>> = vec![Vec::with_capacity(wr); m];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // generation stamp per check: "already reachable from v within two hops"
    let mut near = vec![usize::MAX; m];
    let mut candidates = Vec::with_capacity(m);
    for (step, &v) in order.iter().enumerate() {
        for _ in 0..wc {
            for &c in &var_checks[v] {
                for &v2 in &check_vars[c as usize] {
                    for &c2 in &var_checks[v2 as usize] {
                        near[c2 as usize] = step;
                    }
                }
            }
            let pick = |filter_cycles: bool, candidates: &mut Vec<usize>| {
                candidates.clear();
                let mut best = usize::MAX;
                for c in 0..m {
                    let d = check_vars[c].len();
                    if d >= wr || var_checks[v].contains(&(c as u32)) || (filter_cycles && near[c] == step) {
                        continue;
                    }
                    if d < best {
                        best = d;
                        candidates.clear();
                    }
                    if d == best {
                        candidates.push(c);
                    }
                }
            };
            pick(true, &mut candidates);
            if candidates.is_empty() {
                pick(false, &mut candidates);
            }
            let &c = candidates.choose(rng)?;
            var_checks[v].push(c as u32);
            check_vars[c].push(v as u32);
        }
    }
    var_checks.iter_mut().for_each(|c| c.sort_unstable());
    check_vars.iter_mut().for_each(|v| v.sort_unstable());
    Some((var_checks, check_vars))
}
