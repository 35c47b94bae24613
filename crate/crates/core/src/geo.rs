//! WGS-84 positions, kinematic state and spherical-earth geodesy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for all great-circle computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} out of range [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} out of range [-180, 180]")]
    Longitude(f64),
    #[error("altitude must be finite, got {0}")]
    Altitude(f64),
    #[error("speed must be finite and >= 0, got {0}")]
    Speed(f64),
    #[error("heading must be finite, got {0}")]
    Heading(f64),
}

/// A validated WGS-84 position. Construction rejects NaN and out-of-range
/// coordinates, so every `GeoPosition` in circulation is usable as-is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPosition")]
pub struct GeoPosition {
    latitude_deg: f64,
    longitude_deg: f64,
    altitude_m: f64,
}

#[derive(Deserialize)]
struct RawPosition {
    #[serde(alias = "lat")]
    latitude_deg: f64,
    #[serde(alias = "lon")]
    longitude_deg: f64,
    #[serde(default, alias = "alt")]
    altitude_m: f64,
}

impl TryFrom<RawPosition> for GeoPosition {
    type Error = GeoError;

    fn try_from(raw: RawPosition) -> Result<Self, Self::Error> {
        GeoPosition::with_altitude(raw.latitude_deg, raw.longitude_deg, raw.altitude_m)
    }
}

impl GeoPosition {
    pub fn new(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        Self::with_altitude(latitude_deg, longitude_deg, 0.0)
    }

    pub fn with_altitude(
        latitude_deg: f64,
        longitude_deg: f64,
        altitude_m: f64,
    ) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeoError::Latitude(latitude_deg));
        }
        if !(-180.0..=180.0).contains(&longitude_deg) {
            return Err(GeoError::Longitude(longitude_deg));
        }
        if !altitude_m.is_finite() {
            return Err(GeoError::Altitude(altitude_m));
        }
        Ok(Self {
            latitude_deg,
            longitude_deg,
            altitude_m,
        })
    }

    pub fn latitude_deg(&self) -> f64 {
        self.latitude_deg
    }

    pub fn longitude_deg(&self) -> f64 {
        self.longitude_deg
    }

    pub fn altitude_m(&self) -> f64 {
        self.altitude_m
    }

    /// Point reached by travelling `distance_m` along the great circle that
    /// leaves `self` with initial bearing `bearing_deg`.
    pub fn destination(&self, bearing_deg: f64, distance_m: f64) -> GeoPosition {
        let delta = distance_m / EARTH_RADIUS_M;
        let theta = bearing_deg.to_radians();
        let phi1 = self.latitude_deg.to_radians();
        let lambda1 = self.longitude_deg.to_radians();
        let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
        let lambda2 = lambda1
            + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
        let lon = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
        GeoPosition {
            latitude_deg: phi2.to_degrees().clamp(-90.0, 90.0),
            longitude_deg: lon,
            altitude_m: self.altitude_m,
        }
    }

    /// Linear interpolation in (lat, lon, alt); adequate for the short hops
    /// between consecutive GNSS fixes.
    pub fn lerp(&self, other: &GeoPosition, t: f64) -> GeoPosition {
        let t = t.clamp(0.0, 1.0);
        GeoPosition {
            latitude_deg: self.latitude_deg + (other.latitude_deg - self.latitude_deg) * t,
            longitude_deg: self.longitude_deg + (other.longitude_deg - self.longitude_deg) * t,
            altitude_m: self.altitude_m + (other.altitude_m - self.altitude_m) * t,
        }
    }

    /// Arithmetic mean of a non-empty set of positions.
    pub fn mean<'a, I>(positions: I) -> Option<GeoPosition>
    where
        I: IntoIterator<Item = &'a GeoPosition>,
    {
        let (mut lat, mut lon, mut alt, mut n) = (0.0, 0.0, 0.0, 0usize);
        for p in positions {
            lat += p.latitude_deg;
            lon += p.longitude_deg;
            alt += p.altitude_m;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let n = n as f64;
        Some(GeoPosition {
            latitude_deg: (lat / n).clamp(-90.0, 90.0),
            longitude_deg: (lon / n).clamp(-180.0, 180.0),
            altitude_m: alt / n,
        })
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_distance(a: &GeoPosition, b: &GeoPosition) -> f64 {
    let phi1 = a.latitude_deg.to_radians();
    let phi2 = b.latitude_deg.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.longitude_deg - a.longitude_deg).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Normalizes any finite angle into [0, 360).
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can return exactly 360.0 for tiny negative inputs
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Minimal circular difference between two headings, in [0, 180].
pub fn heading_delta_deg(h1: f64, h2: f64) -> f64 {
    let d = (h1 - h2).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Position plus motion of a station at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: GeoPosition,
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub timestamp_ms: u64,
}

impl KinematicState {
    pub fn new(
        position: GeoPosition,
        speed_mps: f64,
        heading_deg: f64,
        timestamp_ms: u64,
    ) -> Result<Self, GeoError> {
        if !speed_mps.is_finite() || speed_mps < 0.0 {
            return Err(GeoError::Speed(speed_mps));
        }
        if !heading_deg.is_finite() {
            return Err(GeoError::Heading(heading_deg));
        }
        Ok(Self {
            position,
            speed_mps,
            heading_deg: normalize_heading(heading_deg),
            timestamp_ms,
        })
    }

    /// A motionless state at `position`.
    pub fn stationary(position: GeoPosition, timestamp_ms: u64) -> Self {
        Self {
            position,
            speed_mps: 0.0,
            heading_deg: 0.0,
            timestamp_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pos(lat: f64, lon: f64) -> GeoPosition {
        GeoPosition::new(lat, lon).unwrap()
    }

    #[test]
    fn identical_points_are_zero_apart() {
        let a = pos(44.65, 10.93);
        assert_eq!(haversine_distance(&a, &a), 0.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        // (pi / 180) * 6 371 000
        let expected = std::f64::consts::PI / 180.0 * 6_371_000.0;
        assert!((expected - 111_194.93).abs() < 0.01);
        let d = haversine_distance(&pos(0.0, 0.0), &pos(1.0, 0.0));
        assert!((d - 111_195.0).abs() < 1.0, "{d}");
        assert!((d - expected).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_coordinates() {
        assert!(GeoPosition::new(90.1, 0.0).is_err());
        assert!(GeoPosition::new(0.0, -180.5).is_err());
        assert!(GeoPosition::new(f64::NAN, 0.0).is_err());
        assert!(GeoPosition::new(0.0, f64::NAN).is_err());
        assert!(GeoPosition::with_altitude(0.0, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn heading_delta_cases() {
        assert_eq!(heading_delta_deg(10.0, 10.0), 0.0);
        assert!((heading_delta_deg(359.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((heading_delta_deg(1.0, 359.0) - 2.0).abs() < 1e-12);
        assert_eq!(heading_delta_deg(0.0, 180.0), 180.0);
    }

    #[test]
    fn normalize_heading_wraps() {
        assert_eq!(normalize_heading(360.0), 0.0);
        assert_eq!(normalize_heading(-90.0), 270.0);
        assert_eq!(normalize_heading(-1e-20), 0.0);
    }

    #[test]
    fn destination_matches_distance() {
        let start = pos(44.65, 10.93);
        for bearing in [0.0, 45.0, 90.0, 200.0] {
            let end = start.destination(bearing, 560.0);
            assert!((haversine_distance(&start, &end) - 560.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kinematic_state_validation() {
        let p = pos(0.0, 0.0);
        assert!(KinematicState::new(p, -1.0, 0.0, 0).is_err());
        assert_eq!(KinematicState::new(p, 1.0, 370.0, 0).unwrap().heading_deg, 10.0);
    }

    #[test]
    fn deserializes_with_validation() {
        let ok: GeoPosition = serde_json::from_str(r#"{"lat":1.0,"lon":2.0}"#).unwrap();
        assert_eq!(ok.latitude_deg(), 1.0);
        assert!(serde_json::from_str::<GeoPosition>(r#"{"lat":91.0,"lon":2.0}"#).is_err());
    }

    fn arb_pos() -> impl Strategy<Value = GeoPosition> {
        (-89.0f64..89.0, -179.0f64..179.0).prop_map(|(a, b)| pos(a, b))
    }

    proptest! {
        #[test]
        fn haversine_is_symmetric(a in arb_pos(), b in arb_pos()) {
            let d1 = haversine_distance(&a, &b);
            prop_assert!(d1 >= 0.0);
            prop_assert_eq!(d1, haversine_distance(&b, &a));
        }

        #[test]
        fn haversine_triangle_inequality(a in arb_pos(), b in arb_pos(), c in arb_pos()) {
            let ab = haversine_distance(&a, &b);
            let bc = haversine_distance(&b, &c);
            let ac = haversine_distance(&a, &c);
            prop_assert!(ac <= ab + bc + 1e-6);
        }

        #[test]
        fn heading_delta_in_range(h1 in 0.0f64..360.0, h2 in 0.0f64..360.0) {
            let d = heading_delta_deg(h1, h2);
            prop_assert!((0.0..=180.0).contains(&d));
            prop_assert!((d - heading_delta_deg(h2, h1)).abs() < 1e-9);
        }
    }
}
