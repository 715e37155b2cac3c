//! Simulated clock.
//!
//! The whole pipeline runs on a single discrete timeline measured in
//! nanoseconds since scenario start. Durations are plain [`std::time::Duration`].

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// An instant on the simulated timeline (nanoseconds since scenario start).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime {
    nanos: u64,
}

impl SimTime {
    pub const ZERO: SimTime = SimTime { nanos: 0 };

    pub const fn from_nanos(nanos: u64) -> Self {
        SimTime { nanos }
    }

    pub const fn from_micros(micros: u64) -> Self {
        SimTime {
            nanos: micros * 1_000,
        }
    }

    pub const fn from_millis(millis: u64) -> Self {
        SimTime {
            nanos: millis * 1_000_000,
        }
    }

    pub const fn from_secs(secs: u64) -> Self {
        SimTime {
            nanos: secs * 1_000_000_000,
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.nanos
    }

    pub fn as_secs_f64(self) -> f64 {
        self.nanos as f64 / 1e9
    }

    /// Time elapsed since `earlier`, saturating to zero if `earlier` is later.
    pub fn since(self, earlier: SimTime) -> Duration {
        Duration::from_nanos(self.nanos.saturating_sub(earlier.nanos))
    }
}

impl Add<Duration> for SimTime {
    type Output = SimTime;

    fn add(self, rhs: Duration) -> SimTime {
        SimTime {
            nanos: self.nanos + rhs.as_nanos() as u64,
        }
    }
}

impl AddAssign<Duration> for SimTime {
    fn add_assign(&mut self, rhs: Duration) {
        self.nanos += rhs.as_nanos() as u64;
    }
}

impl Sub<SimTime> for SimTime {
    type Output = Duration;

    fn sub(self, rhs: SimTime) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let secs = self.nanos / 1_000_000_000;
        let frac = self.nanos % 1_000_000_000;
        write!(f, "{secs}.{frac:09}s")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_and_since_round_trip() {
        let t = SimTime::from_millis(5) + Duration::from_micros(10);
        assert_eq!(t.as_nanos(), 5_010_000);
        assert_eq!(t.since(SimTime::from_millis(5)), Duration::from_micros(10));
    }

    #[test]
    fn since_saturates() {
        assert_eq!(
            SimTime::ZERO.since(SimTime::from_secs(1)),
            Duration::ZERO
        );
    }

    #[test]
    fn display_is_seconds_with_nanos() {
        assert_eq!(SimTime::from_nanos(1_500_000_000).to_string(), "1.500000000s");
    }
}
