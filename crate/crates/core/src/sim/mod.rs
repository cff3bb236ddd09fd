//! Photon-level simulation of the free-space link.

pub mod coincidence;
pub mod logs;
pub mod params;
pub mod physics;
pub mod records;
pub mod session;

pub use coincidence::{epcd_coincidence_tally, CoincidenceFlag, CoincidenceTally};
pub use params::{ChannelParams, ClassProbabilities, DetectorParams, PulseClass, SourceParams};
pub use physics::{channel_transmission, mean_photon_number};
pub use records::{DetectionEvent, EventOrigin, GroundTruth, PulseRecord, SlotTruth};
pub use session::{simulate_session, SimOutput};
