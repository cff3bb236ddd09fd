//! Free-space BB84 / decoy / EPCD quantum key distribution: a photon-level
//! link simulator plus the classical post-processing chain (sifting,
//! parameter estimation, LDPC reconciliation, Toeplitz privacy
//! amplification) run between two endpoints over a framed byte protocol.

pub mod bits;
pub mod config;
pub mod ecc;
pub mod estimation;
pub mod keyrate;
pub mod math;
pub mod netproto;
pub mod pa;
pub mod pipeline;
pub mod randomness;
pub mod sifting;
pub mod sim;
pub mod states;
pub mod time;

pub use bits::{hamming_distance, BitString};
pub use math::{binary_entropy, phi, Probability};
pub use randomness::RngSeed;
pub use states::{Basis, State};
pub use time::TimePs;
