//! CAM generation service: trigger rules and payload quantization.

use serde::{Deserialize, Serialize};

use crate::codec::CamPayload;
use crate::geo::{haversine_distance, heading_delta_deg, KinematicState};

/// ETSI station type for a passenger car.
pub const STATION_TYPE_PASSENGER_CAR: u8 = 5;
/// ETSI station type for a road-side unit.
pub const STATION_TYPE_RSU: u8 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamTriggerConfig {
    pub heading_threshold_deg: f64,
    pub position_threshold_m: f64,
    pub speed_threshold_mps: f64,
    pub t_gen_min_ms: u64,
    pub t_gen_max_ms: u64,
    /// When set, CAMs are emitted on this strict period and the dynamics
    /// rules are ignored.
    pub forced_period_ms: Option<u64>,
}

impl Default for CamTriggerConfig {
    fn default() -> Self {
        Self {
            heading_threshold_deg: 4.0,
            position_threshold_m: 4.0,
            speed_threshold_mps: 0.5,
            t_gen_min_ms: 100,
            t_gen_max_ms: 1000,
            forced_period_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TriggerConfigError {
    #[error("t_gen_min_ms ({min}) exceeds t_gen_max_ms ({max})")]
    PeriodOrder { min: u64, max: u64 },
    #[error("threshold {0} must be > 0")]
    Threshold(&'static str),
    #[error("forced_period_ms must be > 0")]
    ForcedPeriod,
}

impl CamTriggerConfig {
    pub fn forced(period_ms: u64) -> Self {
        Self {
            forced_period_ms: Some(period_ms),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TriggerConfigError> {
        if self.t_gen_min_ms > self.t_gen_max_ms {
            return Err(TriggerConfigError::PeriodOrder {
                min: self.t_gen_min_ms,
                max: self.t_gen_max_ms,
            });
        }
        if !(self.heading_threshold_deg > 0.0) {
            return Err(TriggerConfigError::Threshold("heading_threshold_deg"));
        }
        if !(self.position_threshold_m > 0.0) {
            return Err(TriggerConfigError::Threshold("position_threshold_m"));
        }
        if !(self.speed_threshold_mps > 0.0) {
            return Err(TriggerConfigError::Threshold("speed_threshold_mps"));
        }
        if self.forced_period_ms == Some(0) {
            return Err(TriggerConfigError::ForcedPeriod);
        }
        Ok(())
    }
}

/// What the service remembers about its last transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamServiceState {
    pub last_cam_state: KinematicState,
    pub last_cam_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    FirstMessage,
    ForcedPeriod,
    MaxPeriod,
    Heading,
    Position,
    Speed,
    BelowMinPeriod,
    NoChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerDecision {
    Generate(TriggerReason),
    Skip(TriggerReason),
}

impl TriggerDecision {
    pub fn is_generate(&self) -> bool {
        matches!(self, TriggerDecision::Generate(_))
    }
}

pub fn check_cam_trigger(
    prev: &CamServiceState,
    now: &KinematicState,
    cfg: &CamTriggerConfig,
) -> TriggerDecision {
    use TriggerDecision::{Generate, Skip};

    let elapsed = now.timestamp_ms.saturating_sub(prev.last_cam_time_ms);
    if let Some(period) = cfg.forced_period_ms {
        return if elapsed >= period {
            Generate(TriggerReason::ForcedPeriod)
        } else {
            Skip(TriggerReason::BelowMinPeriod)
        };
    }
    if elapsed < cfg.t_gen_min_ms {
        return Skip(TriggerReason::BelowMinPeriod);
    }
    if elapsed >= cfg.t_gen_max_ms {
        return Generate(TriggerReason::MaxPeriod);
    }
    let last = &prev.last_cam_state;
    if heading_delta_deg(last.heading_deg, now.heading_deg) >= cfg.heading_threshold_deg {
        return Generate(TriggerReason::Heading);
    }
    if haversine_distance(&last.position, &now.position) >= cfg.position_threshold_m {
        return Generate(TriggerReason::Position);
    }
    if (last.speed_mps - now.speed_mps).abs() >= cfg.speed_threshold_mps {
        return Generate(TriggerReason::Speed);
    }
    Skip(TriggerReason::NoChange)
}

fn quantize_i32(x: f64) -> i32 {
    x.round().clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

/// Quantizes a kinematic state into CAM units. `f64::round` rounds half away
/// from zero.
pub fn build_cam(state: &KinematicState, station_id: u32, station_type: u8, now_ms: u64) -> CamPayload {
    let heading = (state.heading_deg * 10.0).round() as i64;
    CamPayload {
        station_id,
        generation_delta_time: (now_ms % 65_536) as u16,
        latitude_tenth_udeg: quantize_i32(state.position.latitude_deg() * 1e7),
        longitude_tenth_udeg: quantize_i32(state.position.longitude_deg() * 1e7),
        altitude_cm: quantize_i32(state.position.altitude_m() * 100.0),
        speed_cmps: (state.speed_mps * 100.0).round().clamp(0.0, u16::MAX as f64) as u16,
        heading_tenth_deg: heading.rem_euclid(3600) as u16,
        station_type,
        ..CamPayload::default()
    }
}

/// One station's CAM generator. Owns its trigger state; callers feed it
/// kinematic updates and get back the payloads to transmit.
#[derive(Debug, Clone)]
pub struct CamService {
    station_id: u32,
    station_type: u8,
    cfg: CamTriggerConfig,
    state: Option<CamServiceState>,
}

impl CamService {
    pub fn new(station_id: u32, station_type: u8, cfg: CamTriggerConfig) -> Result<Self, TriggerConfigError> {
        cfg.validate()?;
        Ok(Self {
            station_id,
            station_type,
            cfg,
            state: None,
        })
    }

    pub fn station_id(&self) -> u32 {
        self.station_id
    }

    pub fn config(&self) -> &CamTriggerConfig {
        &self.cfg
    }

    pub fn state(&self) -> Option<&CamServiceState> {
        self.state.as_ref()
    }

    /// Evaluates the trigger for `now`; when it fires, records the
    /// transmission and returns the CAM to send.
    pub fn poll(&mut self, now: &KinematicState) -> Option<CamPayload> {
        let decision = match &self.state {
            None => TriggerDecision::Generate(TriggerReason::FirstMessage),
            Some(prev) => check_cam_trigger(prev, now, &self.cfg),
        };
        if !decision.is_generate() {
            return None;
        }
        self.state = Some(CamServiceState {
            last_cam_state: *now,
            last_cam_time_ms: now.timestamp_ms,
        });
        Some(build_cam(now, self.station_id, self.station_type, now.timestamp_ms))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPosition;
    use proptest::prelude::*;

    fn state_at(pos: GeoPosition, speed: f64, heading: f64, t: u64) -> KinematicState {
        KinematicState::new(pos, speed, heading, t).unwrap()
    }

    fn origin() -> GeoPosition {
        GeoPosition::new(44.65, 10.93).unwrap()
    }

    fn prev_at(t: u64) -> CamServiceState {
        CamServiceState {
            last_cam_state: state_at(origin(), 10.0, 90.0, t),
            last_cam_time_ms: t,
        }
    }

    #[test]
    fn max_period_forces_generation() {
        let cfg = CamTriggerConfig::default();
        let now = state_at(origin(), 10.0, 90.0, 1000);
        assert_eq!(
            check_cam_trigger(&prev_at(0), &now, &cfg),
            TriggerDecision::Generate(TriggerReason::MaxPeriod)
        );
    }

    #[test]
    fn min_period_blocks_heading_change() {
        let cfg = CamTriggerConfig::default();
        let now = state_at(origin(), 10.0, 100.0, 50);
        assert_eq!(
            check_cam_trigger(&prev_at(0), &now, &cfg),
            TriggerDecision::Skip(TriggerReason::BelowMinPeriod)
        );
    }

    #[test]
    fn position_threshold() {
        let cfg = CamTriggerConfig::default();
        // 5 m > 4 m threshold, heading and speed unchanged, 100 <= 200 < 1000
        let now = state_at(origin().destination(90.0, 5.0), 10.0, 90.0, 200);
        assert_eq!(
            check_cam_trigger(&prev_at(0), &now, &cfg),
            TriggerDecision::Generate(TriggerReason::Position)
        );
        let still = state_at(origin().destination(90.0, 3.0), 10.0, 90.0, 200);
        assert_eq!(
            check_cam_trigger(&prev_at(0), &still, &cfg),
            TriggerDecision::Skip(TriggerReason::NoChange)
        );
    }

    #[test]
    fn heading_and_speed_thresholds() {
        let cfg = CamTriggerConfig::default();
        let turn = state_at(origin(), 10.0, 94.0, 300);
        assert_eq!(
            check_cam_trigger(&prev_at(0), &turn, &cfg),
            TriggerDecision::Generate(TriggerReason::Heading)
        );
        let brake = state_at(origin(), 9.5, 90.0, 300);
        assert_eq!(
            check_cam_trigger(&prev_at(0), &brake, &cfg),
            TriggerDecision::Generate(TriggerReason::Speed)
        );
    }

    #[test]
    fn forced_mode_is_strict_period() {
        let cfg = CamTriggerConfig::forced(100);
        let now = state_at(origin(), 10.0, 90.0, 100);
        assert!(check_cam_trigger(&prev_at(0), &now, &cfg).is_generate());
        let early = state_at(origin(), 10.0, 180.0, 99);
        assert!(!check_cam_trigger(&prev_at(0), &early, &cfg).is_generate());
    }

    #[test]
    fn build_cam_quantization() {
        let p = GeoPosition::with_altitude(44.65, 10.9, 12.345).unwrap();
        let cam = build_cam(&state_at(p, 13.89, 84.4, 0), 42, 5, 1000);
        assert_eq!(cam.speed_cmps, 1389);
        assert_eq!(cam.heading_tenth_deg, 844);
        assert_eq!(cam.latitude_tenth_udeg, 446_500_000);
        assert_eq!(cam.longitude_tenth_udeg, 109_000_000);
        assert_eq!(cam.altitude_cm, 1235);
        assert_eq!(cam.generation_delta_time, 1000);

        let wrap = build_cam(&state_at(p, 0.0, 359.96, 0), 1, 5, 65_536);
        assert_eq!(wrap.heading_tenth_deg, 0);
        assert_eq!(wrap.generation_delta_time, 0);
    }

    #[test]
    fn southern_western_coordinates() {
        let p = GeoPosition::new(-44.65, -10.9).unwrap();
        let cam = build_cam(&KinematicState::stationary(p, 0), 1, 5, 0);
        assert_eq!(cam.latitude_tenth_udeg, -446_500_000);
        assert_eq!(cam.longitude_tenth_udeg, -109_000_000);
        assert_eq!(quantize_i32(-2.5), -3);
        assert_eq!(quantize_i32(2.5), 3);
    }

    #[test]
    fn config_validation() {
        let bad = CamTriggerConfig { t_gen_min_ms: 2000, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(CamTriggerConfig { speed_threshold_mps: 0.0, ..Default::default() }.validate().is_err());
        assert!(CamTriggerConfig::forced(0).validate().is_err());
    }

    #[test]
    fn forced_service_counts() {
        let mut svc = CamService::new(7, 5, CamTriggerConfig::forced(100)).unwrap();
        let mut n = 0;
        for t in (0..10_000).step_by(10) {
            if svc.poll(&state_at(origin(), 0.0, 0.0, t)).is_some() {
                n += 1;
            }
        }
        assert_eq!(n, 100);
    }

    proptest! {
        #[test]
        fn trigger_is_pure(dt in 0u64..2000, dh in 0.0f64..360.0, dd in 0.0f64..20.0, ds in 0.0f64..2.0) {
            let cfg = CamTriggerConfig::default();
            let now = state_at(origin().destination(45.0, dd), 10.0 + ds, dh, dt);
            prop_assert_eq!(check_cam_trigger(&prev_at(0), &now, &cfg), check_cam_trigger(&prev_at(0), &now, &cfg));
        }

        #[test]
        fn dynamic_gaps_stay_within_bounds(steps in proptest::collection::vec((0.0f64..3.0, -15.0f64..15.0, -1.0f64..1.0), 50..300)) {
            let cfg = CamTriggerConfig::default();
            let mut svc = CamService::new(1, 5, cfg).unwrap();
            let (mut pos, mut heading, mut speed) = (origin(), 0.0f64, 5.0f64);
            let mut times = Vec::new();
            for (i, (move_m, turn, accel)) in steps.into_iter().enumerate() {
                pos = pos.destination(heading, move_m);
                heading = crate::geo::normalize_heading(heading + turn);
                speed = (speed + accel).max(0.0);
                let t = i as u64 * 100;
                if svc.poll(&state_at(pos, speed, heading, t)).is_some() {
                    times.push(t);
                }
            }
            for w in times.windows(2) {
                let gap = w[1] - w[0];
                prop_assert!((cfg.t_gen_min_ms..=cfg.t_gen_max_ms).contains(&gap), "gap {}", gap);
            }
        }
    }
}
