//! Live station runtime: GNSS input, CAM transmission on a 10 ms tick,
//! frame reception into the LDM, the LDM sweeper and its TCP API, all on
//! separate threads. TX/RX events are written as CSV rows in the scenario
//! log format.

use std::io::{self, Write};
use std::net::{SocketAddr, SocketAddrV4};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Deserialize;
use thiserror::Error;

use crate::channel::scenario::{write_event, Event, EventKind, EVENT_LOG_HEADER};
use crate::channel::udp::{FrameTransport, SimBus, UdpTransport};
use crate::codec::{decode_cam, decode_frame, encode_frame, Frame};
use crate::facilities::{CamService, CamTriggerConfig, STATION_TYPE_PASSENGER_CAR};
use crate::geo::KinematicState;
use crate::gnss::{GnssError, GpsdClient, Trace};
use crate::ldm::{serve_api, system_clock, ApiServer, Clock, Ldm, LdmConfig, LdmEntry, Sweeper};

pub const TX_TICK_MS: u64 = 10;
const GNSS_QUEUE: usize = 64;
const RX_POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum StationError {
    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("invalid {flag}: {msg}")]
    Flag { flag: &'static str, msg: String },
    #[error(transparent)]
    Gnss(#[from] GnssError),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: io::Error,
    },
}

/// Station configuration file (TOML):
///
/// ```toml
/// station_id = 101
/// station_type = 5
///
/// [cam]
/// forced_period_ms = 100
///
/// [ldm]
/// max_age_ms = 5000
/// api_listen_port = 9000
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    pub station_id: u32,
    #[serde(default = "default_station_type")]
    pub station_type: u8,
    #[serde(default)]
    pub cam: CamTriggerConfig,
    #[serde(default)]
    pub ldm: LdmConfig,
}

fn default_station_type() -> u8 {
    STATION_TYPE_PASSENGER_CAR
}

impl StationConfig {
    pub fn new(station_id: u32) -> Self {
        Self {
            station_id,
            station_type: STATION_TYPE_PASSENGER_CAR,
            cam: CamTriggerConfig::default(),
            ldm: LdmConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, StationError> {
        let err = |msg: String| StationError::Config {
            path: path.display().to_string(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.cam.validate().map_err(|e| e.to_string())?;
        self.ldm.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GnssSource {
    Trace(PathBuf),
    Gpsd(String),
}

impl FromStr for GnssSource {
    type Err = StationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| StationError::Flag {
            flag: "--gnss",
            msg: format!("{msg}: {s:?}"),
        };
        match s.split_once(':') {
            Some(("trace", p)) if !p.is_empty() => Ok(Self::Trace(PathBuf::from(p))),
            Some(("gpsd", a)) if !a.is_empty() => Ok(Self::Gpsd(a.to_string())),
            _ => Err(bad("expected trace:<file> or gpsd:<host:port>")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransportSpec {
    Sim,
    Udp(SocketAddrV4),
}

impl FromStr for TransportSpec {
    type Err = StationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "sim" {
            return Ok(Self::Sim);
        }
        let addr = s
            .strip_prefix("udp:")
            .and_then(|a| a.parse::<SocketAddrV4>().ok())
            .ok_or_else(|| StationError::Flag {
                flag: "--transport",
                msg: format!("expected sim or udp:<ipv4:port>, got {s:?}"),
            })?;
        Ok(Self::Udp(addr))
    }
}

impl TransportSpec {
    pub fn open(self) -> Result<Arc<dyn FrameTransport + Sync>, StationError> {
        match self {
            Self::Sim => Ok(Arc::new(SimBus::new().endpoint())),
            Self::Udp(addr) => UdpTransport::open(addr)
                .map(|t| Arc::new(t) as Arc<dyn FrameTransport + Sync>)
                .map_err(|source| StationError::Io {
                    what: format!("opening udp transport {addr}"),
                    source,
                }),
        }
    }
}

/// Starts the GNSS input thread and returns the receiving end of its
/// bounded queue.
pub fn spawn_gnss(source: &GnssSource, replay_speed: f64) -> Result<Receiver<KinematicState>, StationError> {
    match source {
        GnssSource::Trace(path) => Ok(Trace::load(path)?.spawn_replay(replay_speed, GNSS_QUEUE)),
        GnssSource::Gpsd(addr) => {
            let mut client = GpsdClient::connect(addr.as_str())?;
            let (tx, rx) = sync_channel(GNSS_QUEUE);
            thread::spawn(move || {
                while let Ok(Some(fix)) = client.next_fix() {
                    if let Some(state) = fix.to_kinematic() {
                        if tx.send(state).is_err() {
                            break;
                        }
                    }
                }
            });
            Ok(rx)
        }
    }
}

pub type LogSink = Arc<Mutex<Box<dyn Write + Send>>>;

pub fn log_sink<W: Write + Send + 'static>(w: W) -> LogSink {
    Arc::new(Mutex::new(Box::new(w)))
}

fn log(sink: &LogSink, e: &Event) {
    let mut w = sink.lock().unwrap();
    // a closed stdout must not take the station down
    let _ = write_event(&mut *w, e).and_then(|_| w.flush());
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StationSummary {
    pub tx_count: usize,
    pub rx_count: usize,
    pub ldm_size: usize,
}

pub struct StationHandle {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    sweeper: Option<Sweeper>,
    api: Option<ApiServer>,
    ldm: Arc<Ldm>,
    tx_count: Arc<AtomicUsize>,
    rx_count: Arc<AtomicUsize>,
}

impl StationHandle {
    pub fn api_addr(&self) -> SocketAddr {
        self.api.as_ref().expect("api runs until shutdown").local_addr()
    }

    pub fn ldm(&self) -> &Arc<Ldm> {
        &self.ldm
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Signals all threads and waits for them.
    pub fn shutdown(mut self) -> StationSummary {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(s) = self.sweeper.take() {
            s.stop();
        }
        if let Some(a) = self.api.take() {
            a.stop();
        }
        StationSummary {
            tx_count: self.tx_count.load(Ordering::SeqCst),
            rx_count: self.rx_count.load(Ordering::SeqCst),
            ldm_size: self.ldm.len(),
        }
    }

    /// Runs until `duration` elapses or the stop flag is raised.
    pub fn run_for(self, duration: Option<Duration>) -> StationSummary {
        let start = Instant::now();
        while !self.is_stopped() && duration.is_none_or(|d| start.elapsed() < d) {
            thread::sleep(Duration::from_millis(TX_TICK_MS));
        }
        self.shutdown()
    }
}

/// Starts a station. The CAM service runs on wall-clock time: each GNSS
/// state is re-stamped with the current time before the trigger check, so
/// trace replays keep their spatial profile while cadence follows real time.
pub fn start_station(
    cfg: &StationConfig,
    gnss: Receiver<KinematicState>,
    transport: Arc<dyn FrameTransport + Sync>,
    sink: LogSink,
    clock: Clock,
) -> Result<StationHandle, StationError> {
    cfg.validate().map_err(|msg| StationError::Config {
        path: "<station>".into(),
        msg,
    })?;
    let stop = Arc::new(AtomicBool::new(false));
    let ldm = Arc::new(Ldm::new());
    let latest: Arc<Mutex<Option<KinematicState>>> = Arc::new(Mutex::new(None));
    let tx_count = Arc::new(AtomicUsize::new(0));
    let rx_count = Arc::new(AtomicUsize::new(0));

    let port = cfg.ldm.api_listen_port;
    let api = serve_api(ldm.clone(), ("0.0.0.0", port), clock.clone()).map_err(|source| StationError::Io {
        what: format!("binding LDM API on port {port}"),
        source,
    })?;
    let sweeper = Sweeper::spawn(ldm.clone(), cfg.ldm, clock.clone());

    let mut threads = Vec::new();
    let mut service = CamService::new(cfg.station_id, cfg.station_type, cfg.cam).map_err(|e| {
        StationError::Config {
            path: "<station>".into(),
            msg: e.to_string(),
        }
    })?;

    {
        let (stop, latest, transport, sink, clock, tx_count) =
            (stop.clone(), latest.clone(), transport.clone(), sink.clone(), clock.clone(), tx_count.clone());
        let station_id = cfg.station_id;
        threads.push(thread::spawn(move || {
            let tick = Duration::from_millis(TX_TICK_MS);
            let mut next = Instant::now();
            while !stop.load(Ordering::SeqCst) {
                while let Ok(s) = gnss.try_recv() {
                    *latest.lock().unwrap() = Some(s);
                }
                let current = *latest.lock().unwrap();
                if let Some(mut state) = current {
                    let now = clock();
                    state.timestamp_ms = now;
                    if let Some(cam) = service.poll(&state) {
                        if let Ok(bytes) = Frame::cam(&cam, now).and_then(|f| encode_frame(&f)) {
                            if transport.send(&bytes).is_ok() {
                                tx_count.fetch_add(1, Ordering::SeqCst);
                                log(
                                    &sink,
                                    &Event {
                                        time_ms: now,
                                        kind: EventKind::Tx,
                                        sender_id: station_id,
                                        receiver_id: None,
                                        tx_position: state.position,
                                        rx_position: None,
                                        p_rx_dbm: None,
                                    },
                                );
                            }
                        }
                    }
                }
                next += tick;
                let now = Instant::now();
                if next > now {
                    thread::sleep(next - now);
                } else {
                    next = now;
                }
            }
        }));
    }

    {
        let (stop, latest, ldm, clock, rx_count) =
            (stop.clone(), latest.clone(), ldm.clone(), clock.clone(), rx_count.clone());
        let station_id = cfg.station_id;
        threads.push(thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                let Ok(Some(bytes)) = transport.recv(RX_POLL) else {
                    continue;
                };
                let Ok(frame) = decode_frame(&bytes) else {
                    continue;
                };
                let Ok(cam) = decode_cam(&frame.payload) else {
                    continue;
                };
                if cam.station_id == station_id {
                    continue;
                }
                let now = clock();
                let Some(entry) = LdmEntry::from_cam(&cam, now) else {
                    continue;
                };
                let tx_position = entry.position;
                ldm.upsert(entry);
                rx_count.fetch_add(1, Ordering::SeqCst);
                let rx_position = latest.lock().unwrap().map(|s| s.position);
                log(
                    &sink,
                    &Event {
                        time_ms: now,
                        kind: EventKind::Rx,
                        sender_id: cam.station_id,
                        receiver_id: Some(station_id),
                        tx_position,
                        rx_position,
                        p_rx_dbm: None,
                    },
                );
            }
        }));
    }

    Ok(StationHandle {
        stop,
        threads,
        sweeper: Some(sweeper),
        api: Some(api),
        ldm,
        tx_count,
        rx_count,
    })
}

/// Writes the log header to `sink`.
pub fn write_log_header(sink: &LogSink) -> io::Result<()> {
    let mut w = sink.lock().unwrap();
    writeln!(w, "{EVENT_LOG_HEADER}")?;
    w.flush()
}

pub fn default_clock() -> Clock {
    system_clock()
}
