//! Physical parameters of the source, free-space channel and detectors.
//!
//! Defaults reproduce the desk-scale operating point: 5 MHz repetition,
//! mu = 0.14, 80 % channel transmission over 200 m, 79 % coupling,
//! 62 % detection efficiency, 65 cps dark counts, 350 ps jitter and a
//! 100 MHz (10 ns) time-tagging clock.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::math::Probability;
use crate::time::TimePs;

use super::physics::channel_transmission;

/// Intensity class of a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseClass {
    Signal,
    Decoy,
    Entrapped,
}

impl PulseClass {
    pub const ALL: [PulseClass; 3] = [PulseClass::Signal, PulseClass::Decoy, PulseClass::Entrapped];

    pub fn as_str(self) -> &'static str {
        match self {
            PulseClass::Signal => "signal",
            PulseClass::Decoy => "decoy",
            PulseClass::Entrapped => "entrapped",
        }
    }
}

impl fmt::Display for PulseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PulseClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "signal" => Ok(PulseClass::Signal),
            "decoy" => Ok(PulseClass::Decoy),
            "entrapped" => Ok(PulseClass::Entrapped),
            other => Err(format!("unknown pulse class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProbabilities {
    pub signal: f64,
    pub decoy: f64,
    pub entrapped: f64,
}

impl ClassProbabilities {
    pub const SIGNAL_ONLY: ClassProbabilities = ClassProbabilities { signal: 1.0, decoy: 0.0, entrapped: 0.0 };
    pub const DECOY_SPLIT: ClassProbabilities = ClassProbabilities { signal: 0.7, decoy: 0.15, entrapped: 0.15 };

    pub fn get(&self, class: PulseClass) -> f64 {
        match class {
            PulseClass::Signal => self.signal,
            PulseClass::Decoy => self.decoy,
            PulseClass::Entrapped => self.entrapped,
        }
    }
}

impl Default for ClassProbabilities {
    fn default() -> Self {
        Self::SIGNAL_ONLY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    pub rep_rate_hz: f64,
    pub pulse_period: TimePs,
    pub mu_signal: f64,
    pub mu_decoy: f64,
    pub nu_entrapped: f64,
    pub class_probabilities: ClassProbabilities,
    /// Misalignment error of correct-basis measurements.
    pub intrinsic_error: Probability,
    /// Emission-time offset of each laser (H, V, D, A).
    pub per_laser_timing_offset: [TimePs; 4],
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            rep_rate_hz: 5e6,
            pulse_period: TimePs(200_000),
            mu_signal: 0.14,
            mu_decoy: 0.05,
            nu_entrapped: 0.1,
            class_probabilities: ClassProbabilities::default(),
            intrinsic_error: Probability::new(0.025).unwrap(),
            per_laser_timing_offset: [TimePs::ZERO; 4],
        }
    }
}

impl SourceParams {
    pub fn mean_photons(&self, class: PulseClass) -> f64 {
        match class {
            PulseClass::Signal => self.mu_signal,
            PulseClass::Decoy => self.mu_decoy,
            PulseClass::Entrapped => self.nu_entrapped,
        }
    }

    pub fn validate(&self, issues: &mut Vec<String>) {
        if !(self.rep_rate_hz.is_finite() && self.rep_rate_hz > 0.0) {
            issues.push(format!("source.rep_rate_hz: must be positive, got {}", self.rep_rate_hz));
        } else {
            let expected = 1e12 / self.rep_rate_hz;
            if (self.pulse_period.ps() as f64 - expected).abs() > 1.0 {
                issues.push(format!(
                    "source.pulse_period: {} does not match 1/rep_rate = {expected:.0} ps",
                    self.pulse_period.ps()
                ));
            }
        }
        if self.pulse_period.ps() <= 0 {
            issues.push("source.pulse_period: must be positive".into());
        }
        for (name, v) in [("mu_signal", self.mu_signal), ("mu_decoy", self.mu_decoy), ("nu_entrapped", self.nu_entrapped)] {
            if !(v.is_finite() && v >= 0.0) {
                issues.push(format!("source.{name}: must be a non-negative mean photon number, got {v}"));
            }
        }
        let cp = &self.class_probabilities;
        for (name, v) in [("signal", cp.signal), ("decoy", cp.decoy), ("entrapped", cp.entrapped)] {
            if !(0.0..=1.0).contains(&v) {
                issues.push(format!("source.class_probabilities.{name}: must lie in [0, 1], got {v}"));
            }
        }
        let sum = cp.signal + cp.decoy + cp.entrapped;
        if (sum - 1.0).abs() > 1e-9 {
            issues.push(format!("source.class_probabilities: must sum to 1, got {sum}"));
        }
        if self.intrinsic_error.value() >= 0.5 {
            issues.push("source.intrinsic_error: must be below 0.5".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub scaling: f64,
    pub extinction_per_m: f64,
    pub length_m: f64,
    pub path_delay: TimePs,
    /// Ambient background counts per second at each detector.
    pub background_rate_cps: f64,
    /// Simulated photon-number-splitting filter: multi-photon pulses are
    /// reduced to a single forwarded photon.
    pub suppress_multiphoton: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            scaling: 1.0,
            // exp(-gamma * 200 m) = 0.80
            extinction_per_m: -(0.8f64.ln()) / 200.0,
            length_m: 200.0,
            path_delay: TimePs(666_000),
            background_rate_cps: 2_000.0,
            suppress_multiphoton: false,
        }
    }
}

impl ChannelParams {
    pub fn transmission(&self) -> f64 {
        channel_transmission(self.scaling, self.extinction_per_m, self.length_m).map_or(0.0, Probability::value)
    }

    pub fn validate(&self, issues: &mut Vec<String>) {
        if !(self.scaling > 0.0 && self.scaling <= 1.0) {
            issues.push(format!("channel.scaling: must lie in (0, 1], got {}", self.scaling));
        }
        if !(self.extinction_per_m.is_finite() && self.extinction_per_m >= 0.0) {
            issues.push(format!("channel.extinction_per_m: must be non-negative, got {}", self.extinction_per_m));
        }
        if !(self.length_m.is_finite() && self.length_m >= 0.0) {
            issues.push(format!("channel.length_m: must be non-negative, got {}", self.length_m));
        }
        if self.path_delay.ps() < 0 {
            issues.push("channel.path_delay: must be non-negative".into());
        }
        if !(self.background_rate_cps.is_finite() && self.background_rate_cps >= 0.0) {
            issues.push(format!("channel.background_rate_cps: must be non-negative, got {}", self.background_rate_cps));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    pub efficiency: Probability,
    pub dark_rate_cps: f64,
    pub jitter_sigma: TimePs,
    pub dead_time: TimePs,
    pub coupling: Probability,
    pub clock_tick: TimePs,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: Probability::new(0.62).unwrap(),
            dark_rate_cps: 65.0,
            jitter_sigma: TimePs(350),
            dead_time: TimePs::ZERO,
            coupling: Probability::new(0.79).unwrap(),
            clock_tick: TimePs(10_000),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self, issues: &mut Vec<String>) {
        if !(self.dark_rate_cps.is_finite() && self.dark_rate_cps >= 0.0) {
            issues.push(format!("detector.dark_rate_cps: must be non-negative, got {}", self.dark_rate_cps));
        }
        if self.jitter_sigma.ps() < 0 {
            issues.push("detector.jitter_sigma: must be non-negative".into());
        }
        if self.dead_time.ps() < 0 {
            issues.push("detector.dead_time: must be non-negative".into());
        }
        if self.clock_tick.ps() <= 0 {
            issues.push("detector.clock_tick: must be positive".into());
        }
    }
}
