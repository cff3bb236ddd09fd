//! Asymptotic key-rate formulas (bits per pulse) and the yield tallies that
//! feed them from simulator ground truth.
//!
//! - ideal BB84: `R = 1 - 2 H(e)`
//! - decoy: `R = 1/2 (-Q_mu H(E_mu) f + Q_1 (1 - H(e_1)))`
//! - EPCD: decoy plus `1/2 Q_2 (1 - Phi((2 e_2 - 1)^2))`, with the
//!   single-photon term written as `1 - Phi(2 e_1 - 1)`
//!
//! Negative values clamp to 0 ("no secure key").

use thiserror::Error;

use crate::math::{binary_entropy, check_range, phi, DomainError};
use crate::sifting::SiftPair;
use crate::sim::params::PulseClass;
use crate::sim::records::GroundTruth;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeyrateError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("sift result belongs to session {sift:#x}, ground truth to {truth:#x}")]
    SessionMismatch { sift: u64, truth: u64 },
    #[error("sifted slot {0} not in ground truth")]
    UnknownSlot(u64),
    #[error("Q_1 + Q_2 = {sum} exceeds Q_mu = {q_mu}")]
    GainSum { sum: f64, q_mu: f64 },
}

const GAIN_TOL: f64 = 1e-12;

/// Gains and error rates of signal pulses, overall and by photon number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YieldStats {
    pub q_mu: f64,
    pub e_mu: f64,
    pub q1: f64,
    pub e1: f64,
    pub q2: f64,
    pub e2: f64,
    /// Error-correction inefficiency.
    pub f: f64,
}

impl YieldStats {
    pub fn validate(&self) -> Result<(), KeyrateError> {
        check_range("Q_mu", self.q_mu, 0.0, 1.0)?;
        check_range("Q_1", self.q1, 0.0, 1.0)?;
        check_range("Q_2", self.q2, 0.0, 1.0)?;
        check_range("E_mu", self.e_mu, 0.0, 0.5)?;
        check_range("e_1", self.e1, 0.0, 0.5)?;
        check_range("e_2", self.e2, 0.0, 0.5)?;
        check_range("f", self.f, 0.0, f64::MAX)?;
        if self.q1 + self.q2 > self.q_mu + GAIN_TOL {
            return Err(KeyrateError::GainSum { sum: self.q1 + self.q2, q_mu: self.q_mu });
        }
        Ok(())
    }
}

/// `1 - 2 H(e)` before clamping.
pub fn ideal_bb84_rate_raw(e: f64) -> Result<f64, DomainError> {
    check_range("e", e, 0.0, 0.5)?;
    Ok(1.0 - 2.0 * binary_entropy(e)?)
}

pub fn ideal_bb84_rate(e: f64) -> Result<f64, DomainError> {
    Ok(ideal_bb84_rate_raw(e)?.max(0.0))
}

fn error_correction_cost(y: &YieldStats) -> Result<f64, KeyrateError> {
    Ok(y.q_mu * binary_entropy(y.e_mu)? * y.f)
}

pub fn decoy_rate(y: &YieldStats) -> Result<f64, KeyrateError> {
    y.validate()?;
    let raw = 0.5 * (-error_correction_cost(y)? + y.q1 * (1.0 - binary_entropy(y.e1)?));
    Ok(raw.max(0.0))
}

pub fn epcd_rate(y: &YieldStats) -> Result<f64, KeyrateError> {
    y.validate()?;
    let single = y.q1 * (1.0 - phi(2.0 * y.e1 - 1.0)?);
    let double = y.q2 * (1.0 - phi((2.0 * y.e2 - 1.0).powi(2))?);
    let raw = 0.5 * (-error_correction_cost(y)? + single + double);
    Ok(raw.max(0.0))
}

/// `1/2 * rep_rate * mu * eta_ch * eta_c * eta_d` in bits per second.
pub fn expected_sift_rate(rep_rate: f64, mu: f64, eta_ch: f64, eta_c: f64, eta_d: f64) -> Result<f64, DomainError> {
    check_range("rep_rate", rep_rate, 0.0, f64::MAX)?;
    check_range("mu", mu, 0.0, f64::MAX)?;
    check_range("eta_ch", eta_ch, 0.0, 1.0)?;
    check_range("eta_c", eta_c, 0.0, 1.0)?;
    check_range("eta_d", eta_d, 0.0, 1.0)?;
    Ok(0.5 * rep_rate * mu * eta_ch * eta_c * eta_d)
}

/// Tallies gains from a sifted session and its ground truth.
///
/// `Q_mu` is sifted signal detections per signal pulse and `E_mu` their
/// error fraction; `Q_k`, `e_k` restrict the same count to slots where
/// exactly `k` photons were emitted (still per signal pulse).
pub fn tally_yields(truth: &GroundTruth, sift: &SiftPair, f: f64) -> Result<YieldStats, KeyrateError> {
    if let Some(id) = sift.session_id {
        if id != truth.session_id {
            return Err(KeyrateError::SessionMismatch { sift: id, truth: truth.session_id });
        }
    }
    let pulses = truth.class_count(PulseClass::Signal);
    let mut detections = [0usize; 3];
    let mut errors = [0usize; 3];
    for (i, &slot) in sift.alice.slots.iter().enumerate() {
        let t = truth.slot(slot).ok_or(KeyrateError::UnknownSlot(slot))?;
        if t.class != PulseClass::Signal {
            continue;
        }
        let wrong = sift.alice.key.get(i) != sift.bob.key.get(i);
        let k = match t.emitted_photons {
            1 => Some(1),
            2 => Some(2),
            _ => None,
        };
        detections[0] += 1;
        errors[0] += wrong as usize;
        if let Some(k) = k {
            detections[k] += 1;
            errors[k] += wrong as usize;
        }
    }
    let gain = |k: usize| if pulses == 0 { 0.0 } else { detections[k] as f64 / pulses as f64 };
    let err = |k: usize| if detections[k] == 0 { 0.0 } else { (errors[k] as f64 / detections[k] as f64).min(0.5) };
    Ok(YieldStats { q_mu: gain(0), e_mu: err(0), q1: gain(1), e1: err(1), q2: gain(2), e2: err(2), f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SessionConfig;
    use crate::math::Probability;
    use crate::randomness::RngSeed;
    use crate::sifting::sift_session;
    use crate::sim::simulate_session;
    use crate::time::TimePs;
    use proptest::prelude::*;

    const EXAMPLE: YieldStats = YieldStats { q_mu: 0.01, e_mu: 0.025, q1: 0.008, e1: 0.02, q2: 0.0, e2: 0.0, f: 1.16 };

    /// Binary entropy written out independently of the library.
    fn h(x: f64) -> f64 {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }

    #[test]
    fn ideal_examples() {
        assert_eq!(ideal_bb84_rate(0.0), Ok(1.0));
        let r = ideal_bb84_rate(0.11).unwrap();
        assert!((r - 0.000_168).abs() < 2e-6, "{r}");
        assert!((r - (1.0 - 2.0 * h(0.11))).abs() < 1e-15);
        assert_eq!(ideal_bb84_rate(0.25), Ok(0.0));
        assert!((ideal_bb84_rate_raw(0.25).unwrap() + 0.6226).abs() < 1e-4);
        assert!(ideal_bb84_rate(0.6).is_err());
    }

    #[test]
    fn decoy_examples() {
        let r = decoy_rate(&EXAMPLE).unwrap();
        let oracle = 0.5 * (-0.01 * h(0.025) * 1.16 + 0.008 * (1.0 - h(0.02)));
        assert!((r - oracle).abs() < 1e-15);
        assert!((r - 2.456e-3).abs() < 2e-5, "{r}");
        assert_eq!(decoy_rate(&YieldStats { q1: 0.0, ..EXAMPLE }), Ok(0.0));
        let clean = YieldStats { e_mu: 0.0, e1: 0.0, f: 7.0, ..EXAMPLE };
        assert!((decoy_rate(&clean).unwrap() - 0.004).abs() < 1e-15);
    }

    #[test]
    fn epcd_examples() {
        let y = YieldStats { q2: 0.002, e2: 0.02, ..EXAMPLE };
        let r = epcd_rate(&y).unwrap();
        let oracle = 0.5 * (-0.01 * h(0.025) * 1.16 + 0.008 * (1.0 - h(0.02)) + 0.002 * (1.0 - h(0.5 + 0.5 * 0.9216)));
        assert!((r - oracle).abs() < 1e-15);
        assert!((r - 3.217e-3).abs() < 3e-5, "{r}");
        let decoy = decoy_rate(&EXAMPLE).unwrap();
        assert!((epcd_rate(&EXAMPLE).unwrap() - decoy).abs() <= 4.0 * f64::EPSILON * decoy);
        let random_pairs = YieldStats { q2: 0.002, e2: 0.5, ..EXAMPLE };
        assert!((epcd_rate(&random_pairs).unwrap() - decoy).abs() <= 4.0 * f64::EPSILON * decoy);
    }

    #[test]
    fn yield_validation() {
        assert!(decoy_rate(&YieldStats { q1: 0.009, q2: 0.002, ..EXAMPLE }).is_err());
        assert!(decoy_rate(&YieldStats { e_mu: 0.6, ..EXAMPLE }).is_err());
    }

    #[test]
    fn sift_rate_examples() {
        let r = expected_sift_rate(5e6, 0.14, 0.80, 0.79, 0.62).unwrap();
        assert!((r - 137_144.0).abs() < 0.5, "{r}");
        assert_eq!(expected_sift_rate(5e6, 0.0, 0.8, 0.79, 0.62), Ok(0.0));
        assert_eq!(expected_sift_rate(5e6, 1.0, 1.0, 1.0, 1.0), Ok(2.5e6));
        assert!(expected_sift_rate(5e6, 0.1, 1.2, 1.0, 1.0).is_err());
    }

    fn quiet(e: f64) -> SessionConfig {
        let mut cfg = SessionConfig::default();
        cfg.detector.dark_rate_cps = 0.0;
        cfg.channel.background_rate_cps = 0.0;
        cfg.source.intrinsic_error = Probability::new(e).unwrap();
        cfg
    }

    #[test]
    fn noiseless_session_has_no_errors() {
        let cfg = quiet(0.0);
        let out = simulate_session(&cfg, RngSeed(1), 300_000).unwrap();
        let mut pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), TimePs(5_000)).unwrap();
        pair.session_id = Some(out.session_id);
        let y = tally_yields(&out.truth, &pair, 1.16).unwrap();
        assert!(y.q_mu > 0.0 && y.q1 > 0.0 && y.q2 > 0.0);
        assert_eq!((y.e_mu, y.e1, y.e2), (0.0, 0.0, 0.0));
        y.validate().unwrap();
    }

    #[test]
    fn session_mismatch_detected() {
        let cfg = quiet(0.0);
        let out = simulate_session(&cfg, RngSeed(1), 1000).unwrap();
        let mut pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), TimePs(5_000)).unwrap();
        pair.session_id = Some(out.session_id ^ 1);
        assert!(matches!(tally_yields(&out.truth, &pair, 1.16), Err(KeyrateError::SessionMismatch { .. })));
    }

    fn poisson(mean: f64, k: u32) -> f64 {
        (1..=k).fold((-mean).exp(), |p, i| p * mean / i as f64)
    }

    fn binomial(n: u32, k: u32, p: f64) -> f64 {
        (0..k).fold(1.0, |c, i| c * (n - i) as f64 / (i + 1) as f64) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    }

    /// Per-slot probability that exactly one detector fires and it lies in
    /// Alice's basis: all surviving photons land on that detector and no
    /// other detector has a noise click, or no photon survives and noise
    /// fires that detector alone.
    fn sifted_gain_oracle(mu: f64, eta: f64, e: f64, noise_mean: f64) -> f64 {
        let q = 1.0 - (-noise_mean).exp();
        let quiet3 = (1.0 - q).powi(3);
        let mut total = 0.0;
        for pd in [0.5 * (1.0 - e), 0.5 * e] {
            for k in 0..60 {
                let pk = poisson(mu, k);
                total += pk * binomial(k, 0, eta) * q * quiet3;
                for j in 1..=k {
                    total += pk * binomial(k, j, eta) * pd.powi(j as i32) * quiet3;
                }
            }
        }
        total
    }

    #[test]
    fn signal_gain_matches_per_slot_oracle() {
        let cfg = SessionConfig::default();
        let n = 2_000_000;
        let out = simulate_session(&cfg, RngSeed(31), n).unwrap();
        let t_f = TimePs(10_000);
        let pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), t_f).unwrap();
        let y = tally_yields(&out.truth, &pair, 1.16).unwrap();
        let eta = cfg.channel.transmission() * 0.79 * 0.62;
        // +/- 10 ns on a 10 ns grid admits three ticks
        let noise_mean = (65.0 + cfg.channel.background_rate_cps) * 30e-9;
        let p = sifted_gain_oracle(0.14, eta, 0.025, noise_mean);
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((y.q_mu - p).abs() < 3.0 * sigma, "Q_mu {} vs oracle {p} (sigma {sigma})", y.q_mu);
    }

    #[test]
    fn single_photons_dominate_at_low_mu() {
        let mut cfg = quiet(0.025);
        cfg.source.mu_signal = 0.01;
        let out = simulate_session(&cfg, RngSeed(32), 2_000_000).unwrap();
        let pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), TimePs(5_000)).unwrap();
        let y = tally_yields(&out.truth, &pair, 1.16).unwrap();
        // P(k >= 2 | detected) is about mu/2 = 0.005
        assert!(y.q1 / y.q_mu > 0.98, "{}", y.q1 / y.q_mu);
    }

    proptest! {
        #[test]
        fn epcd_never_below_decoy(q_mu in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0,
                                  e_mu in 0.0f64..0.5, e1 in 0.0f64..0.5, e2 in 0.0f64..0.5, f in 1.0f64..2.0) {
            let q1 = q_mu * a;
            let q2 = (q_mu - q1) * b;
            let y = YieldStats { q_mu, e_mu, q1, e1, q2, e2, f };
            prop_assert!(epcd_rate(&y).unwrap() >= decoy_rate(&y).unwrap());
            let y0 = YieldStats { q2: 0.0, ..y };
            prop_assert!((epcd_rate(&y0).unwrap() - decoy_rate(&y0).unwrap()).abs() <= 1e-15);
        }

        #[test]
        fn ideal_rate_decreasing(a in 0.0f64..0.11, b in 0.0f64..0.11) {
            prop_assume!(a < b);
            prop_assert!(ideal_bb84_rate_raw(a).unwrap() > ideal_bb84_rate_raw(b).unwrap());
        }
    }
}
