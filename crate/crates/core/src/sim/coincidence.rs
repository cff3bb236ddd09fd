//! Coincidence monitoring for entrapped-pulse detection.
//!
//! A coincidence is a slot in which two or more distinct detectors clicked
//! inside the slot's acceptance window. Observed coincidence rates per pulse
//! class are compared with what a Poisson source over the nominal channel
//! would produce; an eavesdropper who alters photon-number statistics (for
//! example by blocking multi-photon pulses) pulls the rate away from it.

use crate::config::SessionConfig;
use crate::sifting::{bob_slots, SiftError};
use crate::time::TimePs;

use super::params::PulseClass;
use super::records::{DetectionEvent, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoincidenceFlag {
    Consistent,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassTally {
    pub pulses: usize,
    pub coincidences: usize,
    pub rate: f64,
    pub expected_rate: f64,
    /// `(observed - expected) / sd` of the coincidence count; 0 with no pulses.
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidenceTally {
    pub signal: ClassTally,
    pub entrapped: ClassTally,
    pub flag: CoincidenceFlag,
}

impl CoincidenceTally {
    pub fn signal_coincidence_rate(&self) -> f64 {
        self.signal.rate
    }

    pub fn entrapped_coincidence_rate(&self) -> f64 {
        self.entrapped.rate
    }
}

/// Probability that at least two distinct detectors fire in one slot.
///
/// Photons arriving at Bob split over the four detectors with probabilities
/// `(1-e)/2, e/2, 1/4, 1/4` (matching basis right, matching basis wrong,
/// two wrong-basis outputs), so per-detector photon counts are independent
/// Poisson variables; noise adds `noise_mean` to each.
pub fn coincidence_probability(mean_photons: f64, survival: f64, e_opt: f64, noise_mean: f64) -> f64 {
    let p = [0.5 * (1.0 - e_opt), 0.5 * e_opt, 0.25, 0.25];
    let lambda = p.map(|pd| mean_photons * survival * pd + noise_mean);
    let silent: [f64; 4] = lambda.map(|l| (-l).exp());
    let none: f64 = silent.iter().product();
    let exactly_one: f64 = (0..4)
        .map(|d| (1.0 - silent[d]) * (0..4).filter(|&o| o != d).map(|o| silent[o]).product::<f64>())
        .sum();
    (1.0 - none - exactly_one).max(0.0)
}

/// Effective per-slot noise window: the number of clock ticks whose
/// timestamps fall inside `+/- window` of a grid arrival time.
fn effective_window(window: TimePs, tick: TimePs, period: TimePs) -> f64 {
    let tick = tick.ps().max(1);
    let ticks = (2 * (window.ps() / tick) + 1).min(period.ps() / tick);
    TimePs(ticks * tick).as_secs_f64()
}

fn class_tally(pulses: usize, coincidences: usize, expected_p: f64) -> ClassTally {
    let (rate, z) = if pulses == 0 {
        (0.0, 0.0)
    } else {
        let n = pulses as f64;
        let var = n * expected_p * (1.0 - expected_p);
        let diff = coincidences as f64 - n * expected_p;
        let z = if var > 0.0 {
            diff / var.sqrt()
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        (coincidences as f64 / n, z)
    };
    ClassTally { pulses, coincidences, rate, expected_rate: expected_p, z }
}

/// Tallies coincidences per class and flags deviation from the Poisson
/// expectation beyond `config.protocol.coincidence_z_threshold`.
pub fn epcd_coincidence_tally(bob_log: &[DetectionEvent], truth: &GroundTruth, config: &SessionConfig, slot_window: TimePs) -> Result<CoincidenceTally, SiftError> {
    let sync = config.sync();
    let slots = bob_slots(bob_log, &sync, slot_window)?;
    let mut counts = [0usize; 3];
    for (slot, _) in &slots.multiples {
        if let Some(t) = truth.slot(*slot) {
            counts[t.class as usize] += 1;
        }
    }

    let survival = config.channel.transmission() * config.detector.coupling.value() * config.detector.efficiency.value();
    let noise_rate = config.detector.dark_rate_cps + config.channel.background_rate_cps;
    let noise_mean = noise_rate * effective_window(slot_window, config.detector.clock_tick, sync.period);
    let e_opt = config.source.intrinsic_error.value();
    let expected = |c: PulseClass| coincidence_probability(config.source.mean_photons(c), survival, e_opt, noise_mean);

    let signal = class_tally(truth.class_count(PulseClass::Signal), counts[PulseClass::Signal as usize], expected(PulseClass::Signal));
    let entrapped = class_tally(truth.class_count(PulseClass::Entrapped), counts[PulseClass::Entrapped as usize], expected(PulseClass::Entrapped));
    let threshold = config.protocol.coincidence_z_threshold;
    let flag = if signal.z.abs() > threshold || entrapped.z.abs() > threshold {
        CoincidenceFlag::Anomalous
    } else {
        CoincidenceFlag::Consistent
    };
    Ok(CoincidenceTally { signal, entrapped, flag })
}
