//! Probabilities and entropy functions shared by the key-rate and
//! privacy-amplification code. All entropies are in bits.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DomainError {
    #[error("{name} = {value} is outside [{low}, {high}]")]
    OutOfRange { name: &'static str, value: f64, low: f64, high: f64 },
    #[error("{name} = {value} must be finite")]
    NotFinite { name: &'static str, value: f64 },
}

pub(crate) fn check_range(name: &'static str, value: f64, low: f64, high: f64) -> Result<f64, DomainError> {
    if !value.is_finite() {
        return Err(DomainError::NotFinite { name, value });
    }
    if value < low || value > high {
        return Err(DomainError::OutOfRange { name, value, low, high });
    }
    Ok(value)
}

/// A real number in `[0, 1]`, checked at construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);
    pub const HALF: Probability = Probability(0.5);

    pub fn new(value: f64) -> Result<Self, DomainError> {
        check_range("probability", value, 0.0, 1.0).map(Probability)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn complement(self) -> Probability {
        Probability(1.0 - self.0)
    }
}

impl TryFrom<f64> for Probability {
    type Error = DomainError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[inline]
fn plogp(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        p * p.log2()
    }
}

/// Binary entropy `H(x) = -x log2 x - (1-x) log2 (1-x)`, with `0 log 0 = 0`.
pub fn binary_entropy(x: f64) -> Result<f64, DomainError> {
    let x = check_range("x", x, 0.0, 1.0)?;
    Ok(binary_entropy_unchecked(x))
}

#[inline]
pub(crate) fn binary_entropy_unchecked(x: f64) -> f64 {
    let h = -plogp(x) - plogp(1.0 - x);
    h.clamp(0.0, 1.0)
}

/// `Φ(x) = H(1/2 + x/2)` for `x` in `[-1, 1]`.
pub fn phi(x: f64) -> Result<f64, DomainError> {
    let x = check_range("x", x, -1.0, 1.0)?;
    Ok(binary_entropy_unchecked((0.5 + 0.5 * x).clamp(0.0, 1.0)))
}
