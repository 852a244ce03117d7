//! The tradeoff weight `alpha(t)`: starts at `alpha0`, drops by `delta` per
//! tick, and is clamped at `floor`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-3;

/// Anything that maps a tick to a weight in `[0, 1]`.
pub trait TradeoffSchedule {
    fn alpha_at(&self, t: u64) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSchedule {
    pub alpha0: f64,
    pub delta: f64,
    pub floor: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            alpha0: 1.0,
            delta: DEFAULT_DELTA,
            floor: 0.0,
        }
    }
}

impl AlphaSchedule {
    pub fn new(alpha0: f64, delta: f64, floor: f64) -> Result<Self> {
        let s = AlphaSchedule {
            alpha0,
            delta,
            floor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_delta(delta: f64) -> Result<Self> {
        Self::new(1.0, delta, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::InvalidInput(format!(
                "alpha0 must be in [0, 1], got {}",
                self.alpha0
            )));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "delta must be finite and >= 0, got {}",
                self.delta
            )));
        }
        if !(self.floor >= 0.0 && self.floor <= self.alpha0) {
            return Err(Error::InvalidInput(format!(
                "floor must be in [0, alpha0], got {}",
                self.floor
            )));
        }
        Ok(())
    }

    /// `max(floor, alpha0 - t * delta)`.
    pub fn alpha_at(&self, t: u64) -> f64 {
        (self.alpha0 - t as f64 * self.delta).max(self.floor)
    }

    /// First tick at which the floor is reached, if it ever is.
    pub fn floor_tick(&self) -> Option<u64> {
        if self.alpha0 <= self.floor {
            return Some(0);
        }
        if self.delta == 0.0 {
            return None;
        }
        let mut t = ((self.alpha0 - self.floor) / self.delta).floor() as u64;
        while self.alpha_at(t) > self.floor {
            t += 1;
        }
        while t > 0 && self.alpha_at(t - 1) <= self.floor {
            t -= 1;
        }
        Some(t)
    }
}

impl TradeoffSchedule for AlphaSchedule {
    fn alpha_at(&self, t: u64) -> f64 {
        AlphaSchedule::alpha_at(self, t)
    }
}

/// What one tick of the schedule means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecrementMode {
    #[default]
    PerStep,
    PerEpoch,
}
