//! Session configuration (JSON).
//!
//! Every field has a default; a config file only needs the fields it
//! changes. Unknown fields are rejected. `SessionConfig::default()` is the
//! desk-scale BB84 operating point.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::randomness::{maximal_taps, Lfsr, RngSeed, XorPrng};
use crate::sim::params::{ChannelParams, ClassProbabilities, DetectorParams, SourceParams};
use crate::sifting::SyncParams;
use crate::time::TimePs;

/// Every problem found while validating, with the offending field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<String>,
}

impl ConfigError {
    pub fn new(issues: Vec<String>) -> Self {
        Self { issues }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.issues.join("; "))
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    BlockPrefix,
    Random,
}

impl std::str::FromStr for SampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "block_prefix" => Ok(SampleMode::BlockPrefix),
            "random" => Ok(SampleMode::Random),
            other => Err(format!("unknown sample mode {other:?}")),
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleMode::BlockPrefix => "block_prefix",
            SampleMode::Random => "random",
        })
    }
}

/// Where Alice takes the privacy-amplification seed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PaSeedSource {
    /// A dedicated stream of the run's seeded generator.
    Rng,
    /// A fixed seed for that stream, independent of the run seed.
    Fixed { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// Half-width of the acceptance window around each expected arrival.
    pub t_f: TimePs,
    pub sample_fraction: f64,
    pub sample_mode: SampleMode,
    pub abort_threshold: f64,
    /// Security parameter `s`.
    pub security_parameter: u32,
    /// Reconciliation inefficiency `f` used by the decoy/EPCD calculators.
    pub ec_inefficiency: f64,
    pub ldpc_seed: u64,
    pub ldpc_max_iterations: u32,
    pub pa_seed_source: PaSeedSource,
    /// Fewer sifted bits than this aborts with `no_detections`.
    pub min_sifted_bits: usize,
    pub coincidence_window: TimePs,
    pub coincidence_z_threshold: f64,
    pub timeout_ms: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            t_f: TimePs(5_000),
            sample_fraction: 0.1,
            sample_mode: SampleMode::Random,
            abort_threshold: 0.11,
            security_parameter: 10,
            ec_inefficiency: 1.16,
            ldpc_seed: 1,
            ldpc_max_iterations: 25,
            pa_seed_source: PaSeedSource::Rng,
            min_sifted_bits: 1024,
            coincidence_window: TimePs(5_000),
            coincidence_z_threshold: 3.5,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrngParams {
    pub width_a: u32,
    pub taps_a: Vec<u32>,
    pub width_b: u32,
    pub taps_b: Vec<u32>,
    /// Initial registers; derived from the run seed when absent.
    pub seed_a: Option<u64>,
    pub seed_b: Option<u64>,
}

impl Default for PrngParams {
    fn default() -> Self {
        Self {
            width_a: 31,
            taps_a: maximal_taps(31).unwrap().to_vec(),
            width_b: 29,
            taps_b: maximal_taps(29).unwrap().to_vec(),
            seed_a: None,
            seed_b: None,
        }
    }
}

impl PrngParams {
    fn register_seed(explicit: Option<u64>, seed: RngSeed, salt: u64, width: u32) -> u64 {
        explicit.unwrap_or_else(|| {
            let mask = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
            let v = seed.derive(salt) & mask;
            if v == 0 {
                1
            } else {
                v
            }
        })
    }

    pub fn try_build(&self, seed: RngSeed) -> Result<XorPrng, crate::randomness::RandomnessError> {
        let a = Lfsr::new(self.width_a, &self.taps_a, Self::register_seed(self.seed_a, seed, 0xA, self.width_a))?;
        let b = Lfsr::new(self.width_b, &self.taps_b, Self::register_seed(self.seed_b, seed, 0xB, self.width_b))?;
        XorPrng::new(a, b)
    }

    /// # Panics
    /// On a configuration that [`SessionConfig::validate`] rejects.
    pub fn build(&self, seed: RngSeed) -> XorPrng {
        self.try_build(seed).expect("validated PRNG parameters")
    }

    fn validate(&self, issues: &mut Vec<String>) {
        // Probe with a fixed non-zero seed; only structural errors matter here.
        let probe = PrngParams {
            seed_a: Some(self.seed_a.unwrap_or(1)),
            seed_b: Some(self.seed_b.unwrap_or(1)),
            ..self.clone()
        };
        if let Err(e) = probe.try_build(RngSeed(0)) {
            issues.push(format!("prng: {e}"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunParams {
    pub n_slots: u64,
    pub seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { n_slots: 10_000_000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub source: SourceParams,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    pub protocol: ProtocolParams,
    pub prng: PrngParams,
    pub run: RunParams,
}

impl SessionConfig {
    /// Default operating point with signal/decoy/entrapped interleaving
    /// (0.7 / 0.15 / 0.15) for coincidence monitoring and decoy analysis.
    pub fn decoy_defaults() -> Self {
        let mut cfg = Self::default();
        cfg.source.class_probabilities = ClassProbabilities::DECOY_SPLIT;
        cfg
    }

    pub fn seed(&self) -> RngSeed {
        RngSeed(self.run.seed)
    }

    pub fn sync(&self) -> SyncParams {
        SyncParams {
            t_a0: TimePs::ZERO,
            t_d: self.channel.path_delay,
            period: self.source.pulse_period,
            clock_tick: self.detector.clock_tick,
        }
    }

    pub fn duration(&self, n_slots: u64) -> TimePs {
        self.source.pulse_period * n_slots as i64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        self.source.validate(&mut issues);
        self.channel.validate(&mut issues);
        self.detector.validate(&mut issues);
        self.prng.validate(&mut issues);
        let p = &self.protocol;
        let period = self.source.pulse_period.ps();
        if p.t_f.ps() < 0 || 2 * p.t_f.ps() > period {
            issues.push(format!("protocol.t_f: must lie in [0, T/2], got {} ps", p.t_f.ps()));
        }
        if p.coincidence_window.ps() < 0 || 2 * p.coincidence_window.ps() > period {
            issues.push(format!("protocol.coincidence_window: must lie in [0, T/2], got {} ps", p.coincidence_window.ps()));
        }
        if !(p.sample_fraction > 0.0 && p.sample_fraction <= 1.0) {
            issues.push(format!("protocol.sample_fraction: must lie in (0, 1], got {}", p.sample_fraction));
        }
        if !(p.abort_threshold > 0.0 && p.abort_threshold <= 0.5) {
            issues.push(format!("protocol.abort_threshold: must lie in (0, 0.5], got {}", p.abort_threshold));
        }
        if !(p.ec_inefficiency.is_finite() && p.ec_inefficiency >= 1.0) {
            issues.push(format!("protocol.ec_inefficiency: must be at least 1, got {}", p.ec_inefficiency));
        }
        if p.ldpc_max_iterations == 0 {
            issues.push("protocol.ldpc_max_iterations: must be at least 1".into());
        }
        if p.coincidence_z_threshold.is_nan() || p.coincidence_z_threshold <= 0.0 {
            issues.push("protocol.coincidence_z_threshold: must be positive".into());
        }
        if p.timeout_ms == 0 {
            issues.push("protocol.timeout_ms: must be positive".into());
        }
        if self.run.n_slots == 0 {
            issues.push("run.n_slots: must be at least 1".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::new(issues))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SessionConfig = serde_json::from_str(text).map_err(|e| ConfigError::new(vec![format!("parse: {e}")]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(vec![format!("{}: {e}", path.display())]))?;
        Self::from_json(&text)
    }
}
