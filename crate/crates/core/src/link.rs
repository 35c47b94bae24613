//! Power units and closed-form link formulas.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s (exact by SI definition).
pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("distance must be > 0 m, got {0}")]
    Distance(f64),
    #[error("frequency must be > 0 Hz, got {0}")]
    Frequency(f64),
    #[error("antenna height must be > 0 m, got {0}")]
    Height(f64),
}

/// Absolute power in dBm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerDbm(pub f64);

/// Relative level in dB (gain or loss).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerDb(pub f64);

impl PowerDbm {
    pub fn from_watts(watts: f64) -> Self {
        PowerDbm(10.0 * watts.log10() + 30.0)
    }

    pub fn to_watts(self) -> f64 {
        10f64.powf((self.0 - 30.0) / 10.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl PowerDb {
    pub fn from_ratio(ratio: f64) -> Self {
        PowerDb(10.0 * ratio.log10())
    }

    pub fn to_ratio(self) -> f64 {
        10f64.powf(self.0 / 10.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Add<PowerDb> for PowerDbm {
    type Output = PowerDbm;
    fn add(self, rhs: PowerDb) -> PowerDbm {
        PowerDbm(self.0 + rhs.0)
    }
}

impl Sub<PowerDb> for PowerDbm {
    type Output = PowerDbm;
    fn sub(self, rhs: PowerDb) -> PowerDbm {
        PowerDbm(self.0 - rhs.0)
    }
}

impl Sub for PowerDbm {
    type Output = PowerDb;
    fn sub(self, rhs: PowerDbm) -> PowerDb {
        PowerDb(self.0 - rhs.0)
    }
}

impl Add for PowerDb {
    type Output = PowerDb;
    fn add(self, rhs: PowerDb) -> PowerDb {
        PowerDb(self.0 + rhs.0)
    }
}

impl fmt::Display for PowerDbm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} dBm", self.0)
    }
}

impl fmt::Display for PowerDb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} dB", self.0)
    }
}

pub fn wavelength_m(fc_hz: f64) -> f64 {
    SPEED_OF_LIGHT_MPS / fc_hz
}

/// Free-space loss `20 log10(4 pi d fc / c)`.
pub fn free_space_loss_db(distance_m: f64, fc_hz: f64) -> Result<PowerDb, LinkError> {
    if !(distance_m > 0.0) || !distance_m.is_finite() {
        return Err(LinkError::Distance(distance_m));
    }
    if !(fc_hz > 0.0) || !fc_hz.is_finite() {
        return Err(LinkError::Frequency(fc_hz));
    }
    Ok(PowerDb(
        20.0 * (4.0 * std::f64::consts::PI * distance_m * fc_hz / SPEED_OF_LIGHT_MPS).log10(),
    ))
}

/// Distance at which free-space loss equals `loss_db`; the inverse of
/// [`free_space_loss_db`].
pub fn free_space_distance_m(loss_db: f64, fc_hz: f64) -> f64 {
    10f64.powf(loss_db / 20.0) * SPEED_OF_LIGHT_MPS / (4.0 * std::f64::consts::PI * fc_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_argument_gives_zero_loss() {
        let fc = 5.9e9;
        let d = SPEED_OF_LIGHT_MPS / (4.0 * PI * fc);
        assert!(free_space_loss_db(d, fc).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn one_meter_at_5_9_ghz() {
        // 4*pi*5.9e9/299792458 = 247.3098..., 20*log10 = 47.8645...
        let l = free_space_loss_db(1.0, 5.9e9).unwrap().0;
        assert!((l - 47.86).abs() < 0.01, "{l}");
    }

    #[test]
    fn doubling_distance_adds_6_02_db() {
        for fc in [1e6, 2.4e9, 5.9e9] {
            for d in [0.5, 3.0, 560.0] {
                let l1 = free_space_loss_db(d, fc).unwrap().0;
                let l2 = free_space_loss_db(2.0 * d, fc).unwrap().0;
                assert!((l2 - l1 - 20.0 * 2f64.log10()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert_eq!(free_space_loss_db(0.0, 5.9e9), Err(LinkError::Distance(0.0)));
        assert!(free_space_loss_db(-1.0, 5.9e9).is_err());
        assert!(free_space_loss_db(f64::NAN, 5.9e9).is_err());
        assert!(free_space_loss_db(1.0, 0.0).is_err());
    }

    #[test]
    fn strictly_increasing_on_grid() {
        let ds: Vec<f64> = (1..200).map(|i| i as f64 * 3.7).collect();
        let fs: Vec<f64> = (1..50).map(|i| i as f64 * 1.3e8).collect();
        for &f in &fs {
            for w in ds.windows(2) {
                assert!(free_space_loss_db(w[1], f).unwrap().0 > free_space_loss_db(w[0], f).unwrap().0);
            }
        }
        for &d in &ds {
            for w in fs.windows(2) {
                assert!(free_space_loss_db(d, w[1]).unwrap().0 > free_space_loss_db(d, w[0]).unwrap().0);
            }
        }
    }

    #[test]
    fn distance_inverse() {
        let l = free_space_loss_db(560.0, 5.9e9).unwrap().0;
        assert!((free_space_distance_m(l, 5.9e9) - 560.0).abs() < 1e-9);
    }

    #[test]
    fn dbm_watt_roundtrip() {
        let mut x = 1e-12;
        while x <= 1e3 {
            let back = PowerDbm::from_watts(x).to_watts();
            assert!((x - back).abs() / x < 1e-12, "{x} -> {back}");
            x *= 1.37;
        }
        assert!((PowerDbm::from_watts(1e-3).0).abs() < 1e-12);
    }
}
