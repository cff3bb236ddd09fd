//! Parameter estimation: QBER by partial disclosure, source side-channel
//! leakage, and the security parameter it implies.

use std::io::Write;

use rand::seq::index;
use serde::Serialize;
use thiserror::Error;

use crate::bits::{hamming_distance, BitString, BitsError};
use crate::config::SampleMode;
use crate::math::{check_range, DomainError, Probability};
use crate::randomness::{streams, RngSeed};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error("empty disclosure")]
    EmptyDisclosure,
    #[error("distribution {name} sums to {sum}, not 1")]
    NotNormalized { name: String, sum: f64 },
    #[error("distribution {name} has {got} entries, expected {expected}")]
    Shape { name: String, expected: usize, got: usize },
    #[error("p(a|b) > 0 where p(a) = 0 (a = {0})")]
    Support(usize),
}

/// Positions of the key disclosed for error estimation, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub mode: SampleMode,
    pub fraction: f64,
    pub indices: Vec<usize>,
}

/// Chooses `round(fraction * n)` positions to disclose.
pub fn select_sample(n: usize, fraction: f64, mode: SampleMode, seed: RngSeed) -> Result<SamplePlan, EstimationError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DomainError::OutOfRange { name: "fraction", value: fraction, low: 0.0, high: 1.0 }.into());
    }
    let k = ((fraction * n as f64).round() as usize).min(n);
    let indices = match mode {
        SampleMode::BlockPrefix => (0..k).collect(),
        SampleMode::Random => {
            let mut rng = seed.stream(streams::SAMPLE);
            let mut v = index::sample(&mut rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
    };
    Ok(SamplePlan { mode, fraction, indices })
}

pub const WILSON_Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QberEstimate {
    pub e_hat: Probability,
    pub disclosed: usize,
    pub errors: usize,
    pub ci_low: Probability,
    pub ci_high: Probability,
}

/// Wilson score interval for `errors` out of `n`.
pub fn wilson_interval(errors: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

/// Error fraction on the disclosed bits with a 95% Wilson interval.
pub fn estimate_qber(a_bits: &BitString, b_bits: &BitString) -> Result<QberEstimate, EstimationError> {
    let errors = hamming_distance(a_bits, b_bits)?;
    let k = a_bits.len();
    if k == 0 {
        return Err(EstimationError::EmptyDisclosure);
    }
    let (lo, hi) = wilson_interval(errors, k, WILSON_Z95);
    let p = |x: f64| Probability::new(x).expect("interval within [0, 1]");
    Ok(QberEstimate { e_hat: p(errors as f64 / k as f64), disclosed: k, errors, ci_low: p(lo), ci_high: p(hi) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leakage {
    /// Clamped to [0, 1].
    pub bits: f64,
    /// Value before clamping.
    pub raw: f64,
    /// More than two Eve outcomes: the 1/2 weight became 1/|B|.
    pub experimental: bool,
}

const NORMALIZATION_TOL: f64 = 1e-9;

fn check_distribution(name: String, d: &[f64], len: usize) -> Result<(), EstimationError> {
    if d.len() != len {
        return Err(EstimationError::Shape { name, expected: len, got: d.len() });
    }
    for &x in d {
        check_range("probability", x, 0.0, 1.0)?;
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(EstimationError::NotNormalized { name, sum });
    }
    Ok(())
}

/// Mutual information between the source parameter `a` and Eve's outcome
/// `b`, `I = 1 + sum_b sum_a p(a|b)/2 * log2(p(a|b) / (2 p(a)))`.
///
/// With more than two outcomes the weight is `1/|B|` and the leading term
/// `log2 |B|` (flagged experimental).
pub fn leakage_mutual_information(p_a: &[f64], p_a_given_b: &[Vec<f64>]) -> Result<Leakage, EstimationError> {
    if p_a.is_empty() {
        return Err(EstimationError::Shape { name: "p(a)".into(), expected: 1, got: 0 });
    }
    if p_a_given_b.is_empty() {
        return Err(EstimationError::Shape { name: "p(a|b)".into(), expected: 2, got: 0 });
    }
    check_distribution("p(a)".into(), p_a, p_a.len())?;
    for (j, cond) in p_a_given_b.iter().enumerate() {
        check_distribution(format!("p(a|b{})", j + 1), cond, p_a.len())?;
    }
    let nb = p_a_given_b.len() as f64;
    let mut raw = nb.log2();
    for cond in p_a_given_b {
        for (i, (&pab, &pa)) in cond.iter().zip(p_a).enumerate() {
            if pab == 0.0 {
                continue;
            }
            if pa == 0.0 {
                return Err(EstimationError::Support(i));
            }
            raw += pab / nb * (pab / (nb * pa)).log2();
        }
    }
    Ok(Leakage { bits: raw.clamp(0.0, 1.0), raw, experimental: p_a_given_b.len() > 2 })
}

/// Largest `s` with `I <= 2^-s / ln 2`.
pub fn security_parameter(i: f64) -> Result<u32, DomainError> {
    let ln2 = std::f64::consts::LN_2;
    if !i.is_finite() {
        return Err(DomainError::NotFinite { name: "I", value: i });
    }
    if i <= 0.0 || i > 1.0 / ln2 {
        return Err(DomainError::OutOfRange { name: "I", value: i, low: 0.0, high: 1.0 / ln2 });
    }
    let holds = |s: i32| i <= 2f64.powi(-s) / ln2;
    let mut s = (-(i * ln2).log2()).floor().max(0.0) as i32;
    while s > 0 && !holds(s) {
        s -= 1;
    }
    while holds(s + 1) {
        s += 1;
    }
    Ok(s as u32)
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationRow {
    pub fraction: f64,
    pub mode: String,
    pub e_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EstimationRow {
    pub fn new(plan: &SamplePlan, est: &QberEstimate) -> Self {
        EstimationRow {
            fraction: plan.fraction,
            mode: plan.mode.to_string(),
            e_hat: est.e_hat.value(),
            ci_low: est.ci_low.value(),
            ci_high: est.ci_high.value(),
        }
    }
}

/// Writes `fraction,mode,e_hat,ci_low,ci_high` rows.
pub fn write_estimation_csv<W: Write>(w: W, rows: &[EstimationRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_and_prefix_plans() {
        let p = select_sample(10, 1.0, SampleMode::Random, RngSeed(1)).unwrap();
        assert_eq!(p.indices, (0..10).collect::<Vec<_>>());
        let p = select_sample(100, 0.1, SampleMode::BlockPrefix, RngSeed(1)).unwrap();
        assert_eq!(p.indices, (0..10).collect::<Vec<_>>());
        assert!(select_sample(10, 0.0, SampleMode::Random, RngSeed(1)).is_err());
        assert!(select_sample(10, 1.5, SampleMode::Random, RngSeed(1)).is_err());
        assert!(select_sample(10, f64::NAN, SampleMode::Random, RngSeed(1)).is_err());
    }

    #[test]
    fn random_plan_is_uniform_over_deciles() {
        let n = 100_000;
        let p = select_sample(n, 0.1, SampleMode::Random, RngSeed(77)).unwrap();
        assert_eq!(p.indices.len(), 10_000);
        assert!(p.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(*p.indices.last().unwrap() < n);
        let mut counts = [0f64; 10];
        for &i in &p.indices {
            counts[i * 10 / n] += 1.0;
        }
        let chi2: f64 = counts.iter().map(|c| (c - 1000.0).powi(2) / 1000.0).sum();
        // 9 degrees of freedom, p = 0.001
        assert!(chi2 < 27.88, "chi2 = {chi2}");
        assert_eq!(p, select_sample(n, 0.1, SampleMode::Random, RngSeed(77)).unwrap());
    }

    #[test]
    fn qber_examples() {
        let a = BitString::parse("1011001110");
        let e = estimate_qber(&a, &a).unwrap();
        assert_eq!(e.e_hat.value(), 0.0);
        assert_eq!(e.ci_low.value(), 0.0);
        let mut b = a.clone();
        b.flip(3);
        let e = estimate_qber(&a, &b).unwrap();
        assert_eq!(e.e_hat.value(), 0.1);
        assert!(e.ci_low.value() < 0.1 && e.ci_high.value() > 0.1);
        assert_eq!(estimate_qber(&BitString::new(), &BitString::new()), Err(EstimationError::EmptyDisclosure));
        assert!(estimate_qber(&a, &BitString::parse("1")).is_err());
    }

    #[test]
    fn wilson_known_value() {
        // 5 of 100: 0.02154 .. 0.11175
        let (lo, hi) = wilson_interval(5, 100, WILSON_Z95);
        assert!((lo - 0.021_543).abs() < 1e-5, "{lo}");
        assert!((hi - 0.111_752).abs() < 1e-5, "{hi}");
    }

    #[test]
    fn leakage_examples() {
        let l = leakage_mutual_information(&[0.5, 0.5], &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(l.bits, 0.0);
        let l = leakage_mutual_information(&[0.5, 0.5], &[vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        assert!((l.bits - 0.029_049).abs() < 5e-6, "{}", l.bits);
        let l = leakage_mutual_information(&[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((l.bits - 1.0).abs() < 1e-15);
        assert!(!l.experimental);
    }

    #[test]
    fn leakage_input_errors() {
        assert!(matches!(
            leakage_mutual_information(&[0.5, 0.4], &[vec![0.5, 0.5]]),
            Err(EstimationError::NotNormalized { .. })
        ));
        assert!(matches!(leakage_mutual_information(&[0.5, 0.5], &[vec![1.0]]), Err(EstimationError::Shape { .. })));
        assert!(matches!(
            leakage_mutual_information(&[1.0, 0.0], &[vec![0.5, 0.5], vec![1.0, 0.0]]),
            Err(EstimationError::Support(1))
        ));
    }

    #[test]
    fn security_parameter_examples() {
        assert_eq!(security_parameter(0.001), Ok(10));
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(security_parameter(2f64.powi(-10) / ln2), Ok(10));
        assert_eq!(security_parameter(1.0 / ln2), Ok(0));
        assert!(security_parameter(0.0).is_err());
        assert!(security_parameter(1.0 / ln2 * 1.000_001).is_err());
        assert!(security_parameter(f64::NAN).is_err());
    }

    #[test]
    fn full_disclosure_equals_exact_qber() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: BitString = (0..5000).map(|_| rng.random::<bool>()).collect();
        let b: BitString = a.iter().map(|x| x ^ (rng.random::<f64>() < 0.03)).collect();
        let plan = select_sample(a.len(), 1.0, SampleMode::Random, RngSeed(5)).unwrap();
        let est = estimate_qber(&a.select(&plan.indices), &b.select(&plan.indices)).unwrap();
        let exact = hamming_distance(&a, &b).unwrap() as f64 / a.len() as f64;
        assert_eq!(est.e_hat.value(), exact);
    }

    #[test]
    fn estimator_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let err: BitString = (0..n).map(|_| rng.random::<f64>() < 0.025).collect();
        let truth = err.count_ones() as f64 / n as f64;
        let zeros = BitString::zeros(n);
        let trials = 400;
        let mean = (0..trials)
            .map(|t| {
                let plan = select_sample(n, 0.1, SampleMode::Random, RngSeed(t)).unwrap();
                estimate_qber(&zeros.select(&plan.indices), &err.select(&plan.indices)).unwrap().e_hat.value()
            })
            .sum::<f64>()
            / trials as f64;
        let sd = (truth * (1.0 - truth) / 2000.0 / trials as f64).sqrt();
        assert!((mean - truth).abs() < 3.0 * sd, "{mean} vs {truth}");
    }

    proptest! {
        #[test]
        fn leakage_vanishes_at_marginal(raw in proptest::collection::vec(0.01f64..1.0, 2..6), t in 0.0f64..1.0) {
            let sum: f64 = raw.iter().sum();
            let pa: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let same = leakage_mutual_information(&pa, &[pa.clone(), pa.clone()]).unwrap();
            prop_assert!(same.raw.abs() < 1e-12);
            // shrink a perturbation toward the marginal: leakage shrinks with it
            let k = pa.len();
            let mut b1 = pa.clone();
            let mut b2 = pa.clone();
            let d = 0.5 * pa[0].min(pa[k - 1]) * t;
            b1[0] += d; b1[k - 1] -= d;
            b2[0] -= d; b2[k - 1] += d;
            let full = leakage_mutual_information(&pa, &[b1.clone(), b2.clone()]).unwrap();
            let half = |v: &[f64]| v.iter().zip(&pa).map(|(x, m)| 0.5 * (x + m)).collect::<Vec<_>>();
            let closer = leakage_mutual_information(&pa, &[half(&b1), half(&b2)]).unwrap();
            prop_assert!(full.raw >= -1e-12);
            prop_assert!(closer.raw <= full.raw + 1e-12);
        }

        #[test]
        fn security_parameter_monotone(a in 1e-12f64..1.4, b in 1e-12f64..1.4) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(security_parameter(lo).unwrap() >= security_parameter(hi).unwrap());
        }

        #[test]
        fn wilson_contains_estimate(n in 1usize..5000, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac) as usize;
            let (lo, hi) = wilson_interval(k, n, WILSON_Z95);
            let p = k as f64 / n as f64;
            prop_assert!(lo <= p && p <= hi && lo >= 0.0 && hi <= 1.0);
        }
    }
}
