//! Syndrome-domain sum-product decoding.
//!
//! The decoder looks for the error pattern `x` with `H x = s_local ^ s_remote`
//! under an i.i.d. prior `P(x_j = 1) = e`. Check messages use the tanh rule;
//! a check whose target syndrome bit is 1 flips the sign of its outgoing
//! messages.

use crate::bits::BitString;

use super::code::LdpcCode;
use super::EccError;

pub const MAX_ITERATIONS: usize = 25;

const LLR_CLAMP: f64 = 40.0;
const TANH_CLAMP: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Corrected,
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockVerdict {
    pub status: BlockStatus,
    pub iterations: usize,
    pub corrected_bits: usize,
}

impl BlockVerdict {
    pub fn is_corrected(&self) -> bool {
        self.status == BlockStatus::Corrected
    }
}

/// Corrects `local` toward the block whose syndrome is `remote_syndrome`.
///
/// Returns the input unchanged with a discarded verdict when no consistent
/// pattern is found within `max_iter` iterations.
pub fn decode_block(code: &LdpcCode, local: &BitString, remote_syndrome: &BitString, e_hat: f64, max_iter: usize) -> Result<(BitString, BlockVerdict), EccError> {
    if !(e_hat > 0.0 && e_hat < 0.5) {
        return Err(EccError::BadErrorRate(e_hat));
    }
    if remote_syndrome.len() != code.m() {
        return Err(EccError::SyndromeLength { expected: code.m(), got: remote_syndrome.len() });
    }
    let target = code.syndrome(local)?.xor(remote_syndrome).expect("equal lengths");
    if target.count_ones() == 0 {
        return Ok((local.clone(), BlockVerdict { status: BlockStatus::Corrected, iterations: 0, corrected_bits: 0 }));
    }

    let n = code.n();
    let m = code.m();
    // Edge layout: row-major; var_edges lists each variable's edge ids.
    let mut row_start = Vec::with_capacity(m + 1);
    let mut edge_var = Vec::new();
    row_start.push(0);
    for c in 0..m {
        edge_var.extend(code.check_vars(c).iter().map(|&v| v as usize));
        row_start.push(edge_var.len());
    }
    let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edges[v].push(e);
    }

    let prior = ((1.0 - e_hat) / e_hat).ln();
    let mut v2c = vec![prior; edge_var.len()];
    let mut c2v = vec![0.0; edge_var.len()];
    let mut posterior = vec![prior; n];
    let mut pattern = BitString::zeros(n);
    let mut tanh_buf = Vec::new();

    for iter in 1..=max_iter {
        for c in 0..m {
            let edges = row_start[c]..row_start[c + 1];
            tanh_buf.clear();
            tanh_buf.extend(v2c[edges.clone()].iter().map(|&l| (0.5 * l).tanh()));
            let sign = if target.get(c) { -1.0 } else { 1.0 };
            for (k, e) in edges.enumerate() {
                let prod: f64 = tanh_buf.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, t)| t).product();
                c2v[e] = sign * 2.0 * prod.clamp(-TANH_CLAMP, TANH_CLAMP).atanh();
            }
        }
        for v in 0..n {
            let total = prior + var_edges[v].iter().map(|&e| c2v[e]).sum::<f64>();
            posterior[v] = total;
            for &e in &var_edges[v] {
                v2c[e] = (total - c2v[e]).clamp(-LLR_CLAMP, LLR_CLAMP);
            }
            pattern.set(v, total < 0.0);
        }
        if code.syndrome(&pattern)? == target {
            let corrected = local.xor(&pattern).expect("equal lengths");
            let verdict = BlockVerdict { status: BlockStatus::Corrected, iterations: iter, corrected_bits: pattern.count_ones() };
            return Ok((corrected, verdict));
        }
    }
    Ok((local.clone(), BlockVerdict { status: BlockStatus::Discarded, iterations: max_iter, corrected_bits: 0 }))
}
