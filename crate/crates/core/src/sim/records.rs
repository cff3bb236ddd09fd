use serde::{Deserialize, Serialize};

use crate::states::{Basis, State};
use crate::time::TimePs;

use super::params::PulseClass;

/// Alice's record of one emission slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub slot: u64,
    pub state: State,
    pub class: PulseClass,
    /// Ground truth; Alice's hardware never sees it.
    pub emitted_photons: u32,
}

impl PulseRecord {
    pub fn basis(&self) -> Basis {
        self.state.basis()
    }

    pub fn bit(&self) -> bool {
        self.state.bit()
    }
}

/// Bob's time-tagged detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub timestamp: TimePs,
    pub detector: State,
}

/// Where a click in Bob's log came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventOrigin {
    Photon { slot: u64, class: PulseClass },
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTruth {
    pub class: PulseClass,
    pub emitted_photons: u32,
    /// Photons that survived channel, coupling and detection efficiency.
    pub detected_photons: u32,
}

/// Simulator-only knowledge about a session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub session_id: u64,
    pub slots: Vec<SlotTruth>,
    /// Parallel to Bob's log.
    pub event_origins: Vec<EventOrigin>,
}

impl GroundTruth {
    pub fn slot(&self, slot: u64) -> Option<&SlotTruth> {
        self.slots.get(slot as usize)
    }

    pub fn class_count(&self, class: PulseClass) -> usize {
        self.slots.iter().filter(|s| s.class == class).count()
    }
}
