//! Picosecond time values.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A time or time difference in integer picoseconds.
///
/// Absolute timestamps are non-negative; residuals may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePs(pub i64);

impl TimePs {
    pub const ZERO: TimePs = TimePs(0);

    pub const fn from_ns(ns: i64) -> TimePs {
        TimePs(ns * 1_000)
    }

    #[inline]
    pub const fn ps(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    pub fn abs(self) -> TimePs {
        TimePs(self.0.abs())
    }

    /// Rounds down to a multiple of `tick` (counter semantics).
    #[inline]
    pub fn floor_to(self, tick: TimePs) -> TimePs {
        TimePs(self.0.div_euclid(tick.0) * tick.0)
    }
}

impl Add for TimePs {
    type Output = TimePs;
    fn add(self, rhs: TimePs) -> TimePs {
        TimePs(self.0 + rhs.0)
    }
}

impl AddAssign for TimePs {
    fn add_assign(&mut self, rhs: TimePs) {
        self.0 += rhs.0;
    }
}

impl Sub for TimePs {
    type Output = TimePs;
    fn sub(self, rhs: TimePs) -> TimePs {
        TimePs(self.0 - rhs.0)
    }
}

impl Neg for TimePs {
    type Output = TimePs;
    fn neg(self) -> TimePs {
        TimePs(-self.0)
    }
}

impl Mul<i64> for TimePs {
    type Output = TimePs;
    fn mul(self, rhs: i64) -> TimePs {
        TimePs(self.0 * rhs)
    }
}

impl fmt::Display for TimePs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ps", self.0)
    }
}
