//! Scenario time, clock models for the terminal's inner clock, and the
//! relation between clock stability and accumulated positioning error.
//!
//! Time is an integer count of attoseconds since the scenario epoch. One
//! tick of light travel is 3e-10 m, so quantization never shows up in a
//! positioning tolerance. The beacon wire format carries picoseconds; see
//! [`Instant::from_picos`] and [`Instant::to_picos`].

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TICKS_PER_SECOND: i128 = 1_000_000_000_000_000_000;
pub const TICKS_PER_PICO: i128 = 1_000_000;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Speed of light used throughout the examples and bundled scenarios (m/s).
pub const C_DEFAULT: f64 = 3.0e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("clock read at {at} is before its last synchronization at {last_sync}")]
    BeforeSync { at: Instant, last_sync: Instant },
}

/// A point in scenario time.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Instant(i128);

/// A signed span between two instants.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span(i128);

fn secs_to_ticks(secs: f64) -> i128 {
    (secs * TICKS_PER_SECOND as f64).round() as i128
}

impl Instant {
    pub const EPOCH: Instant = Instant(0);

    pub const fn from_ticks(ticks: i128) -> Self {
        Instant(ticks)
    }

    pub const fn ticks(self) -> i128 {
        self.0
    }

    /// Rounds to the nearest tick.
    pub fn from_secs(secs: f64) -> Self {
        Instant(secs_to_ticks(secs))
    }

    pub fn from_days(days: f64) -> Self {
        Instant::from_secs(days * SECONDS_PER_DAY)
    }

    pub fn from_picos(picos: i64) -> Self {
        Instant(picos as i128 * TICKS_PER_PICO)
    }

    /// Whole picoseconds, or `None` if the instant is not picosecond aligned
    /// or does not fit in 64 bits.
    pub fn to_picos(self) -> Option<i64> {
        if self.0 % TICKS_PER_PICO != 0 {
            return None;
        }
        i64::try_from(self.0 / TICKS_PER_PICO).ok()
    }

    /// Nearest picosecond-aligned instant (ties away from zero).
    pub fn round_to_picos(self) -> Self {
        let half = TICKS_PER_PICO / 2;
        let q = if self.0 >= 0 {
            (self.0 + half) / TICKS_PER_PICO
        } else {
            (self.0 - half) / TICKS_PER_PICO
        };
        Instant(q * TICKS_PER_PICO)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    pub fn secs_since(self, earlier: Instant) -> f64 {
        (self - earlier).as_secs()
    }
}

impl Span {
    pub const ZERO: Span = Span(0);

    pub const fn from_ticks(ticks: i128) -> Self {
        Span(ticks)
    }

    pub const fn ticks(self) -> i128 {
        self.0
    }

    pub fn from_secs(secs: f64) -> Self {
        Span(secs_to_ticks(secs))
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / TICKS_PER_SECOND as f64
    }

    pub fn as_days(self) -> f64 {
        self.as_secs() / SECONDS_PER_DAY
    }

    /// Light travel time over `meters`, rounded to the nearest tick.
    pub fn light_time(meters: f64, c: f64) -> Self {
        Span::from_secs(meters / c)
    }
}

impl Add<Span> for Instant {
    type Output = Instant;

    fn add(self, rhs: Span) -> Instant {
        Instant(self.0 + rhs.0)
    }
}

impl Sub<Span> for Instant {
    type Output = Instant;

    fn sub(self, rhs: Span) -> Instant {
        Instant(self.0 - rhs.0)
    }
}

impl Sub for Instant {
    type Output = Span;

    fn sub(self, rhs: Instant) -> Span {
        Span(self.0 - rhs.0)
    }
}

impl Add for Span {
    type Output = Span;

    fn add(self, rhs: Span) -> Span {
        Span(self.0 + rhs.0)
    }
}

impl fmt::Debug for Instant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Instant({}s)", self.as_secs())
    }
}

impl fmt::Display for Instant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.as_secs())
    }
}

impl fmt::Debug for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Span({}s)", self.as_secs())
    }
}

/// Direction of the worst-case drift applied to a clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSign {
    /// The clock runs fast: readings are later than true time.
    #[default]
    Ahead,
    /// The clock runs slow.
    Behind,
}

impl DriftSign {
    pub fn factor(self) -> f64 {
        match self {
            DriftSign::Ahead => 1.0,
            DriftSign::Behind => -1.0,
        }
    }
}

/// Affine drift model of the terminal's inner clock.
///
/// `drift_per_day` is the magnitude of the worst-case time error gained per
/// day since the last synchronization (s/day); the sign is supplied at read
/// time. `validity_days` is how long the clock may go between syncs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub initial_offset: f64,
    pub drift_per_day: f64,
    pub last_sync: Instant,
    pub validity_days: f64,
}

impl ClockModel {
    /// A drift-free clock synchronized at the epoch.
    pub fn perfect(validity_days: f64) -> Self {
        ClockModel {
            initial_offset: 0.0,
            drift_per_day: 0.0,
            last_sync: Instant::EPOCH,
            validity_days,
        }
    }

    pub fn elapsed_days(&self, true_time: Instant) -> f64 {
        (true_time - self.last_sync).as_days()
    }

    /// The clock's reading at `true_time`.
    pub fn read(&self, true_time: Instant, sign: DriftSign) -> Result<Instant, ClockError> {
        if true_time < self.last_sync {
            return Err(ClockError::BeforeSync {
                at: true_time,
                last_sync: self.last_sync,
            });
        }
        let error_s =
            self.initial_offset + sign.factor() * self.drift_per_day * self.elapsed_days(true_time);
        Ok(true_time + Span::from_secs(error_s))
    }

    /// Past the validity period. Exactly `validity_days` is still valid.
    pub fn expired(&self, true_time: Instant) -> bool {
        self.elapsed_days(true_time) > self.validity_days
    }

    /// Worst-case position error this clock accumulates over its validity period.
    pub fn worst_case_position_error(&self, c: f64) -> f64 {
        accumulated_position_error(self.drift_per_day, self.validity_days, c)
    }
}

/// `c * (delta_t * T)`: meters of ranging error accumulated by a clock with
/// stability `drift_per_day` (s/day) left unsynchronized for `days`.
pub fn accumulated_position_error(drift_per_day: f64, days: f64, c: f64) -> f64 {
    c * (drift_per_day * days)
}
