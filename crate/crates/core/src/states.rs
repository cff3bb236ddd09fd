//! BB84 polarisation states and the project-wide bit/basis convention.
//!
//! Rectilinear: H = 0, V = 1. Diagonal: D = 0, A = 1. Laser index
//! (demultiplexer output) follows the same order: H, V, D, A.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Rect,
    Diag,
}

impl Basis {
    pub fn as_bit(self) -> bool {
        matches!(self, Basis::Diag)
    }

    pub fn from_bit(b: bool) -> Basis {
        if b {
            Basis::Diag
        } else {
            Basis::Rect
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Rect => "rect",
            Basis::Diag => "diag",
        })
    }
}

impl FromStr for Basis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rect" => Ok(Basis::Rect),
            "diag" => Ok(Basis::Diag),
            other => Err(format!("unknown basis {other:?}")),
        }
    }
}

/// Polarisation state; also names the detector that registers it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum State {
    H,
    V,
    D,
    A,
}

impl State {
    pub const ALL: [State; 4] = [State::H, State::V, State::D, State::A];

    pub fn from_index(i: u8) -> State {
        Self::ALL[(i & 3) as usize]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn new(basis: Basis, bit: bool) -> State {
        match (basis, bit) {
            (Basis::Rect, false) => State::H,
            (Basis::Rect, true) => State::V,
            (Basis::Diag, false) => State::D,
            (Basis::Diag, true) => State::A,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            State::H | State::V => Basis::Rect,
            State::D | State::A => Basis::Diag,
        }
    }

    pub fn bit(self) -> bool {
        matches!(self, State::V | State::A)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for State {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "H" => Ok(State::H),
            "V" => Ok(State::V),
            "D" => Ok(State::D),
            "A" => Ok(State::A),
            other => Err(format!("unknown state {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convention_roundtrip() {
        for s in State::ALL {
            assert_eq!(State::new(s.basis(), s.bit()), s);
            assert_eq!(State::from_index(s.index() as u8), s);
            assert_eq!(s.to_string().parse::<State>().unwrap(), s);
        }
        assert_eq!(State::new(Basis::Rect, false), State::H);
        assert_eq!(State::new(Basis::Diag, true), State::A);
    }
}
