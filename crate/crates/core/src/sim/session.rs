//! Slot-by-slot photon-level simulation of one session.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::config::{ConfigError, SessionConfig};
use crate::randomness::{streams, RngSeed};
use crate::states::{Basis, State};
use crate::time::TimePs;

use super::params::PulseClass;
use super::records::{DetectionEvent, EventOrigin, GroundTruth, PulseRecord, SlotTruth};

/// Everything one simulated session produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutput {
    pub session_id: u64,
    pub alice_log: Vec<PulseRecord>,
    pub bob_log: Vec<DetectionEvent>,
    pub truth: GroundTruth,
}

impl SimOutput {
    pub fn duration(&self, period: TimePs) -> TimePs {
        period * self.alice_log.len() as i64
    }
}

pub fn session_id(seed: RngSeed, n_slots: u64) -> u64 {
    seed.derive(n_slots ^ 0x5e55_1011)
}

/// Photon-number sampler: inverse CDF table for small means, rejection
/// sampler otherwise.
enum PhotonNumber {
    Table(Vec<f64>),
    Poisson(Poisson<f64>),
    Zero,
}

impl PhotonNumber {
    fn new(mean: f64) -> Self {
        if mean <= 0.0 {
            return PhotonNumber::Zero;
        }
        if mean > 30.0 {
            return PhotonNumber::Poisson(Poisson::new(mean).expect("positive finite mean"));
        }
        let mut cdf = Vec::new();
        let mut p = (-mean).exp();
        let mut acc = 0.0;
        let mut k = 0u32;
        while acc < 1.0 - 1e-16 && k < 200 {
            acc += p;
            cdf.push(acc);
            k += 1;
            p *= mean / k as f64;
        }
        PhotonNumber::Table(cdf)
    }

    #[inline]
    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            PhotonNumber::Zero => 0,
            PhotonNumber::Table(cdf) => {
                let u: f64 = rng.random();
                cdf.iter().position(|&c| u < c).unwrap_or(cdf.len()) as u32
            }
            PhotonNumber::Poisson(d) => d.sample(rng) as u32,
        }
    }
}

struct Click {
    event: DetectionEvent,
    origin: EventOrigin,
}

/// Generates Alice's emission log, Bob's detection log and the ground truth.
///
/// Per slot: the XOR-LFSR generator picks the state, the class is drawn
/// from the class probabilities, the photon number is Poisson, and every
/// photon independently survives with `T_ch * eta_c * eta_d`. Each
/// surviving photon meets Bob's passive basis splitter (50/50); in the
/// matching basis its value flips with the intrinsic error, otherwise it
/// is uniform. Click times are `t_d + slot*T + laser offset + jitter`,
/// floored to the clock tick. Dark and background counts are Poisson
/// processes per detector; dead time then suppresses clicks on the same
/// detector within `dead_time` of the last registered one.
pub fn simulate_session(config: &SessionConfig, seed: RngSeed, n_slots: u64) -> Result<SimOutput, ConfigError> {
    config.validate()?;
    if n_slots == 0 {
        return Err(ConfigError::new(vec!["run.n_slots: must be at least 1".into()]));
    }
    let src = &config.source;
    let det = &config.detector;
    let period = src.pulse_period;
    let tick = det.clock_tick;
    let t_a0 = TimePs::ZERO;
    let t_d = config.channel.path_delay;
    let survival = config.channel.transmission() * det.coupling.value() * det.efficiency.value();
    let e_opt = src.intrinsic_error.value();
    let suppress = config.channel.suppress_multiphoton;

    let mut prng = config.prng.build(seed);
    let mut class_rng = seed.stream(streams::CLASS);
    let mut rng = seed.stream(streams::PHYSICS);
    let jitter = Normal::new(0.0, det.jitter_sigma.ps() as f64).expect("jitter sigma validated");

    let samplers = PulseClass::ALL.map(|c| PhotonNumber::new(src.mean_photons(c)));
    let cp = src.class_probabilities;
    let single_class = PulseClass::ALL.into_iter().find(|&c| cp.get(c) == 1.0);

    let mut alice_log = Vec::with_capacity(n_slots as usize);
    let mut slots = Vec::with_capacity(n_slots as usize);
    let mut clicks: Vec<Click> = Vec::new();

    for slot in 0..n_slots {
        let state = prng.next_state();
        let class = match single_class {
            Some(c) => c,
            None => {
                let u: f64 = class_rng.random();
                if u < cp.signal {
                    PulseClass::Signal
                } else if u < cp.signal + cp.decoy {
                    PulseClass::Decoy
                } else {
                    PulseClass::Entrapped
                }
            }
        };
        let emitted = samplers[class as usize].sample(&mut rng);
        let forwarded = if suppress { emitted.min(1) } else { emitted };
        let mut detected = 0u32;
        for _ in 0..forwarded {
            if rng.random::<f64>() >= survival {
                continue;
            }
            detected += 1;
            let bob_basis = Basis::from_bit(rng.random());
            let value = if bob_basis == state.basis() {
                state.bit() ^ (rng.random::<f64>() < e_opt)
            } else {
                rng.random()
            };
            let offset = src.per_laser_timing_offset[state.index()];
            let dt = jitter.sample(&mut rng).round() as i64;
            let t = t_a0 + t_d + period * slot as i64 + offset + TimePs(dt);
            clicks.push(Click {
                event: DetectionEvent { timestamp: t.floor_to(tick).max(TimePs::ZERO), detector: State::new(bob_basis, value) },
                origin: EventOrigin::Photon { slot, class },
            });
        }
        alice_log.push(PulseRecord { slot, state, class, emitted_photons: emitted });
        slots.push(SlotTruth { class, emitted_photons: emitted, detected_photons: detected });
    }

    let end = t_a0 + t_d + period * n_slots as i64;
    let noise_rate = det.dark_rate_cps + config.channel.background_rate_cps;
    if noise_rate > 0.0 {
        let mut noise_rng = seed.stream(streams::NOISE);
        let expected = noise_rate * end.as_secs_f64();
        for detector in State::ALL {
            let count = if expected > 0.0 {
                Poisson::new(expected).expect("positive mean").sample(&mut noise_rng) as u64
            } else {
                0
            };
            for _ in 0..count {
                let t = TimePs(noise_rng.random_range(0..end.ps()));
                clicks.push(Click {
                    event: DetectionEvent { timestamp: t.floor_to(tick), detector },
                    origin: EventOrigin::Noise,
                });
            }
        }
    }

    // Stable order: photon clicks were pushed slot by slot, noise after.
    clicks.sort_by_key(|c| (c.event.timestamp, c.event.detector));

    let mut last: [Option<TimePs>; 4] = [None; 4];
    let mut bob_log = Vec::with_capacity(clicks.len());
    let mut event_origins = Vec::with_capacity(clicks.len());
    for c in clicks {
        let d = c.event.detector.index();
        if let Some(prev) = last[d] {
            if c.event.timestamp - prev <= det.dead_time {
                continue;
            }
        }
        last[d] = Some(c.event.timestamp);
        bob_log.push(c.event);
        event_origins.push(c.origin);
    }

    let session_id = session_id(seed, n_slots);
    Ok(SimOutput {
        session_id,
        alice_log,
        bob_log,
        truth: GroundTruth { session_id, slots, event_origins },
    })
}
