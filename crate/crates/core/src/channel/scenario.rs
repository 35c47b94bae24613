//! Deterministic discrete-event scenario: stations driven by static
//! positions or GNSS traces, CAM services, and the simulated channel
//! between every transmitter/receiver pair.
//!
//! Scenario file (TOML):
//!
//! ```toml
//! duration_s = 60.0
//! tick_ms = 10            # optional, default 10
//! start_time_ms = 0       # optional, default: earliest trace start or 0
//!
//! [channel]
//! model = "free_space"    # or "two_ray" with h_tx_m, h_rx_m, reflection_coeff
//! tx_antenna_gain_dbi = 3.9
//! rx_antenna_gain_dbi = 3.9
//! cable_loss_db = 0.0
//! fc_hz = 5.9e9
//! sensitivity_dbm = -69.03
//! shadowing_sigma_db = 0.0
//! seed = 1
//!
//! [[stations]]
//! id = 1
//! role = "tx"             # tx | rx | txrx
//! lat = 44.65
//! lon = 10.93
//! tx_power_dbm = 26.0
//! forced_period_ms = 100
//!
//! [[stations]]
//! id = 2
//! role = "rx"
//! trace = "drive.csv"     # relative to the scenario file
//! ```
//!
//! Event log CSV:
//! `time_ms,event,sender_id,receiver_id,tx_lat,tx_lon,rx_lat,rx_lon,p_rx_dbm`.
//! TX rows leave the receiver columns empty.

use std::collections::HashSet;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::{received_power_dbm, reception_decision, LinkBudgetConfig, PropagationModel, Reception, Shadowing};
use crate::codec::{decode_cam, decode_frame, encode_frame, CodecError, Frame};
use crate::facilities::{CamService, CamTriggerConfig, STATION_TYPE_PASSENGER_CAR};
use crate::geo::{haversine_distance, GeoPosition, KinematicState};
use crate::gnss::{GnssError, Trace};
use crate::ldm::{Ldm, LdmConfig, LdmEntry};

/// Link distances below this are clamped; the far-field formulas do not
/// hold at shorter range.
pub const MIN_LINK_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("trace {path}: {source}")]
    Trace { path: PathBuf, source: GnssError },
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Tx,
    Rx,
    Txrx,
}

impl Role {
    pub fn transmits(self) -> bool {
        matches!(self, Role::Tx | Role::Txrx)
    }

    pub fn receives(self) -> bool {
        matches!(self, Role::Rx | Role::Txrx)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub id: u32,
    pub role: Role,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub trace: Option<PathBuf>,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    pub forced_period_ms: Option<u64>,
    #[serde(default = "default_station_type")]
    pub station_type: u8,
    #[serde(default)]
    pub cam: Option<CamTriggerConfig>,
}

fn default_tx_power() -> f64 {
    26.0
}

fn default_station_type() -> u8 {
    STATION_TYPE_PASSENGER_CAR
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChannelSpec {
    #[serde(flatten)]
    pub model: PropagationModel,
    #[serde(default = "default_gain")]
    pub tx_antenna_gain_dbi: f64,
    #[serde(default = "default_gain")]
    pub rx_antenna_gain_dbi: f64,
    #[serde(default)]
    pub cable_loss_db: f64,
    #[serde(default = "default_fc")]
    pub fc_hz: f64,
    pub sensitivity_dbm: f64,
    #[serde(default)]
    pub shadowing_sigma_db: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_gain() -> f64 {
    3.9
}

fn default_fc() -> f64 {
    5.9e9
}

impl ChannelSpec {
    pub fn budget(&self, tx_power_dbm: f64) -> LinkBudgetConfig {
        LinkBudgetConfig {
            tx_power_dbm,
            tx_antenna_gain_dbi: self.tx_antenna_gain_dbi,
            rx_antenna_gain_dbi: self.rx_antenna_gain_dbi,
            cable_loss_db: self.cable_loss_db,
            fc_hz: self.fc_hz,
            sensitivity_dbm: self.sensitivity_dbm,
            shadowing_sigma_db: self.shadowing_sigma_db,
            rng_seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
    pub start_time_ms: Option<u64>,
    pub channel: ChannelSpec,
    pub stations: Vec<StationSpec>,
    /// Directory that relative trace paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_tick() -> u64 {
    10
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
        Err(ScenarioError::Invalid(msg.into()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Self::invalid("duration_s must be > 0");
        }
        if self.tick_ms == 0 {
            return Self::invalid("tick_ms must be > 0");
        }
        if self.stations.is_empty() {
            return Self::invalid("no stations");
        }
        self.channel.model.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.channel
            .budget(26.0)
            .validate()
            .map_err(ScenarioError::Invalid)?;
        let mut ids = HashSet::new();
        for s in &self.stations {
            if !ids.insert(s.id) {
                return Self::invalid(format!("duplicate station id {}", s.id));
            }
            match (s.lat, s.lon, &s.trace) {
                (Some(lat), Some(lon), None) => {
                    GeoPosition::new(lat, lon).map_err(|e| ScenarioError::Invalid(format!("station {}: {e}", s.id)))?;
                }
                (None, None, Some(_)) => {}
                _ => {
                    return Self::invalid(format!(
                        "station {}: give either lat/lon or trace, not both or neither",
                        s.id
                    ))
                }
            }
            if !s.tx_power_dbm.is_finite() {
                return Self::invalid(format!("station {}: tx_power_dbm must be finite", s.id));
            }
            s.trigger_config()
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("station {}: {e}", s.id)))?;
        }
        Ok(())
    }
}

impl StationSpec {
    fn trigger_config(&self) -> CamTriggerConfig {
        let mut cfg = self.cam.unwrap_or_default();
        if self.forced_period_ms.is_some() {
            cfg.forced_period_ms = self.forced_period_ms;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Tx,
    Rx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time_ms: u64,
    pub kind: EventKind,
    pub sender_id: u32,
    pub receiver_id: Option<u32>,
    pub tx_position: GeoPosition,
    pub rx_position: Option<GeoPosition>,
    pub p_rx_dbm: Option<f64>,
}

pub const EVENT_LOG_HEADER: &str = "time_ms,event,sender_id,receiver_id,tx_lat,tx_lon,rx_lat,rx_lon,p_rx_dbm";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn tx_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Tx).count()
    }

    pub fn rx_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::Rx).count()
    }

    pub fn rx_for(&self, receiver_id: u32) -> impl Iterator<Item = &Event> {
        self.events
            .iter()
            .filter(move |e| e.kind == EventKind::Rx && e.receiver_id == Some(receiver_id))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{EVENT_LOG_HEADER}")?;
        for e in &self.events {
            write_event(&mut w, e)?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Writes one event row in the log format.
pub fn write_event<W: Write>(w: &mut W, e: &Event) -> io::Result<()> {
    match e.kind {
        EventKind::Tx => writeln!(
            w,
            "{},TX,{},,{:.7},{:.7},,,",
            e.time_ms,
            e.sender_id,
            e.tx_position.latitude_deg(),
            e.tx_position.longitude_deg()
        ),
        EventKind::Rx => {
            let rx = e.rx_position.unwrap_or(e.tx_position);
            let p = e.p_rx_dbm.map(|p| format!("{p:.3}")).unwrap_or_default();
            writeln!(
                w,
                "{},RX,{},{},{:.7},{:.7},{:.7},{:.7},{}",
                e.time_ms,
                e.sender_id,
                e.receiver_id.map(|r| r.to_string()).unwrap_or_default(),
                e.tx_position.latitude_deg(),
                e.tx_position.longitude_deg(),
                rx.latitude_deg(),
                rx.longitude_deg(),
                p
            )
        }
    }
}

enum Mobility {
    Static(GeoPosition),
    Trace(Trace),
}

struct SimStation {
    spec: StationSpec,
    mobility: Mobility,
    cam: Option<CamService>,
    ldm: Ldm,
}

impl SimStation {
    fn state_at(&self, t_ms: u64) -> KinematicState {
        match &self.mobility {
            Mobility::Static(p) => KinematicState::stationary(*p, t_ms),
            Mobility::Trace(tr) => tr.state_at(t_ms).expect("non-empty trace"),
        }
    }
}

/// Result of a scenario run: the event log plus each station's final LDM.
pub struct ScenarioOutcome {
    pub log: EventLog,
    pub ldm_sizes: Vec<(u32, usize)>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<EventLog, ScenarioError> {
    run_scenario_detailed(cfg).map(|o| o.log)
}

pub fn run_scenario_detailed(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    cfg.validate()?;

    let mut specs = cfg.stations.clone();
    specs.sort_by_key(|s| s.id);
    let mut stations = Vec::with_capacity(specs.len());
    for spec in specs {
        let mobility = match (&spec.trace, spec.lat, spec.lon) {
            (Some(rel), _, _) => {
                let path = cfg.base_dir.join(rel);
                let trace = Trace::load(&path).map_err(|source| ScenarioError::Trace {
                    path: path.clone(),
                    source,
                })?;
                if trace.is_empty() {
                    return Err(ScenarioError::Invalid(format!("trace {} is empty", path.display())));
                }
                Mobility::Trace(trace)
            }
            (None, Some(lat), Some(lon)) => {
                Mobility::Static(GeoPosition::new(lat, lon).map_err(|e| ScenarioError::Invalid(e.to_string()))?)
            }
            _ => unreachable!("validated"),
        };
        let cam = if spec.role.transmits() {
            Some(
                CamService::new(spec.id, spec.station_type, spec.trigger_config())
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
            )
        } else {
            None
        };
        stations.push(SimStation {
            spec,
            mobility,
            cam,
            ldm: Ldm::new(),
        });
    }

    let start_ms = cfg.start_time_ms.unwrap_or_else(|| {
        stations
            .iter()
            .filter_map(|s| match &s.mobility {
                Mobility::Trace(t) => t.start_ms(),
                Mobility::Static(_) => None,
            })
            .min()
            .unwrap_or(0)
    });
    let duration_ms = (cfg.duration_s * 1000.0).round() as u64;
    let mut shadowing = Shadowing::new(cfg.channel.shadowing_sigma_db, cfg.channel.seed);
    let ldm_cfg = LdmConfig::default();
    let mut log = EventLog::default();

    let mut offset = 0;
    while offset < duration_ms {
        let now = start_ms + offset;
        let states: Vec<KinematicState> = stations.iter().map(|s| s.state_at(now)).collect();

        for tx_idx in 0..stations.len() {
            let Some(cam) = stations[tx_idx].cam.as_mut().and_then(|svc| svc.poll(&states[tx_idx])) else {
                continue;
            };
            let frame_bytes = encode_frame(&Frame::cam(&cam, now)?)?;
            let tx_true = states[tx_idx].position;
            let tx_reported = GeoPosition::new(cam.latitude_deg(), cam.longitude_deg())
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            log.events.push(Event {
                time_ms: now,
                kind: EventKind::Tx,
                sender_id: cam.station_id,
                receiver_id: None,
                tx_position: tx_reported,
                rx_position: None,
                p_rx_dbm: None,
            });
            let budget = cfg.channel.budget(stations[tx_idx].spec.tx_power_dbm);

            for rx_idx in 0..stations.len() {
                if rx_idx == tx_idx || !stations[rx_idx].spec.role.receives() {
                    continue;
                }
                let rx_pos = states[rx_idx].position;
                let d = haversine_distance(&tx_true, &rx_pos).max(MIN_LINK_DISTANCE_M);
                let p_rx = received_power_dbm(d, &budget, &cfg.channel.model, shadowing.draw())
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                if reception_decision(p_rx, &budget) == Reception::Lost {
                    continue;
                }
                // the receiver goes through the real decode path
                let frame = decode_frame(&frame_bytes)?;
                let rx_cam = decode_cam(&frame.payload)?;
                let receiver = &stations[rx_idx];
                if let Some(entry) = LdmEntry::from_cam(&rx_cam, now) {
                    receiver.ldm.upsert(entry);
                }
                log.events.push(Event {
                    time_ms: now,
                    kind: EventKind::Rx,
                    sender_id: rx_cam.station_id,
                    receiver_id: Some(receiver.spec.id),
                    tx_position: GeoPosition::new(rx_cam.latitude_deg(), rx_cam.longitude_deg())
                        .map_err(|e| ScenarioError::Invalid(e.to_string()))?,
                    rx_position: Some(rx_pos),
                    p_rx_dbm: Some(p_rx.0),
                });
            }
        }

        if offset % ldm_cfg.sweep_period_ms < cfg.tick_ms {
            for s in &stations {
                s.ldm.purge_expired(now, &ldm_cfg);
            }
        }
        offset += cfg.tick_ms;
    }

    let ldm_sizes = stations.iter().map(|s| (s.spec.id, s.ldm.len())).collect();
    Ok(ScenarioOutcome { log, ldm_sizes })
}
