//! Local Dynamic Map: a keyed store of received objects with aging, plus a
//! newline-delimited JSON query API over TCP.
//!
//! Requests (one JSON object per line):
//!
//! ```text
//! {"op":"all"}
//! {"op":"id","station_id":N}
//! {"op":"area","lat":deg,"lon":deg,"radius_m":M}
//! ```
//!
//! Responses (one line per request, in request order):
//!
//! ```text
//! {"ok":true,"objects":[{"station_id":N,"lat":..,"lon":..,"speed_mps":..,"heading_deg":..,"age_ms":..}]}
//! {"ok":false,"error":"parse"|"unknown_op"|"bad_request"}
//! ```

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::codec::CamPayload;
use crate::geo::{haversine_distance, GeoPosition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntryKind {
    Cam,
    Opaque,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdmEntry {
    pub station_id: u32,
    pub kind: EntryKind,
    pub position: GeoPosition,
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub last_update_ms: u64,
    pub raw_generation_delta_time: u16,
}

impl LdmEntry {
    /// Entry for a received CAM, stamped with the receiver clock.
    pub fn from_cam(cam: &CamPayload, rx_time_ms: u64) -> Option<LdmEntry> {
        let position = GeoPosition::with_altitude(
            cam.latitude_deg(),
            cam.longitude_deg(),
            cam.altitude_cm as f64 / 100.0,
        )
        .ok()?;
        Some(LdmEntry {
            station_id: cam.station_id,
            kind: EntryKind::Cam,
            position,
            speed_mps: cam.speed_mps(),
            heading_deg: cam.heading_deg(),
            last_update_ms: rx_time_ms,
            raw_generation_delta_time: cam.generation_delta_time,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdmConfig {
    pub max_age_ms: u64,
    pub sweep_period_ms: u64,
    /// 0 picks an ephemeral port.
    pub api_listen_port: u16,
}

impl Default for LdmConfig {
    fn default() -> Self {
        Self {
            max_age_ms: 5000,
            sweep_period_ms: 1000,
            api_listen_port: 9000,
        }
    }
}

impl LdmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.sweep_period_ms == 0 || self.sweep_period_ms > self.max_age_ms {
            return Err(format!(
                "sweep_period_ms ({}) must be in 1..=max_age_ms ({})",
                self.sweep_period_ms, self.max_age_ms
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    /// The stored entry is newer than the offered one; nothing changed.
    Stale,
}

/// Thread-safe LDM store. Every operation takes the lock once, so single-key
/// upserts and whole-store sweeps are atomic with respect to each other.
#[derive(Debug, Default)]
pub struct Ldm {
    entries: RwLock<BTreeMap<u32, LdmEntry>>,
}

impl Ldm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert(&self, e: LdmEntry) -> UpsertOutcome {
        let mut map = self.entries.write().unwrap();
        match map.get_mut(&e.station_id) {
            None => {
                map.insert(e.station_id, e);
                UpsertOutcome::Inserted
            }
            Some(old) if old.last_update_ms > e.last_update_ms => UpsertOutcome::Stale,
            Some(old) => {
                *old = e;
                UpsertOutcome::Updated
            }
        }
    }

    pub fn get(&self, station_id: u32) -> Option<LdmEntry> {
        self.entries.read().unwrap().get(&station_id).copied()
    }

    /// All entries, sorted by station id.
    pub fn all(&self) -> Vec<LdmEntry> {
        self.entries.read().unwrap().values().copied().collect()
    }

    /// Entries whose distance to `center` is at most `radius_m` (inclusive).
    pub fn query_area(&self, center: &GeoPosition, radius_m: f64) -> Vec<LdmEntry> {
        self.entries
            .read()
            .unwrap()
            .values()
            .filter(|e| haversine_distance(center, &e.position) <= radius_m)
            .copied()
            .collect()
    }

    /// Removes entries strictly older than `max_age_ms`.
    pub fn purge_expired(&self, now_ms: u64, cfg: &LdmConfig) -> usize {
        let mut map = self.entries.write().unwrap();
        let before = map.len();
        map.retain(|_, e| now_ms.saturating_sub(e.last_update_ms) <= cfg.max_age_ms);
        before - map.len()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Millisecond clock shared by the sweeper and the API (for `age_ms`).
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

/// Background task that purges expired entries every `sweep_period_ms`.
pub struct Sweeper {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Sweeper {
    pub fn spawn(store: Arc<Ldm>, cfg: LdmConfig, clock: Clock) -> Sweeper {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let period = Duration::from_millis(cfg.sweep_period_ms);
            let tick = Duration::from_millis(cfg.sweep_period_ms.min(20));
            let mut waited = Duration::ZERO;
            while !flag.load(Ordering::Relaxed) {
                thread::sleep(tick);
                waited += tick;
                if waited >= period {
                    waited = Duration::ZERO;
                    store.purge_expired(clock(), &cfg);
                }
            }
        });
        Sweeper {
            stop,
            handle: Some(handle),
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Sweeper {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request {
    All,
    Id { station_id: u32 },
    Area { lat: f64, lon: f64, radius_m: f64 },
}

fn error_response(code: &str) -> Value {
    json!({"ok": false, "error": code})
}

fn entry_json(e: &LdmEntry, now_ms: u64) -> Value {
    json!({
        "station_id": e.station_id,
        "lat": e.position.latitude_deg(),
        "lon": e.position.longitude_deg(),
        "speed_mps": e.speed_mps,
        "heading_deg": e.heading_deg,
        "age_ms": now_ms.saturating_sub(e.last_update_ms),
    })
}

/// Evaluates one request line against the store and returns the response
/// object. Transport-independent so it can be tested in-process.
pub fn handle_request(store: &Ldm, line: &str, now_ms: u64) -> Value {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(_) => return error_response("parse"),
    };
    let request: Request = match serde_json::from_value(value.clone()) {
        Ok(r) => r,
        Err(_) => {
            let known = matches!(value.get("op").and_then(Value::as_str), Some("all" | "id" | "area"));
            return error_response(if known { "bad_request" } else { "unknown_op" });
        }
    };
    let objects = match request {
        Request::All => store.all(),
        Request::Id { station_id } => store.get(station_id).into_iter().collect(),
        Request::Area { lat, lon, radius_m } => {
            let Ok(center) = GeoPosition::new(lat, lon) else {
                return error_response("bad_request");
            };
            if !(radius_m >= 0.0) {
                return error_response("bad_request");
            }
            store.query_area(&center, radius_m)
        }
    };
    let objects: Vec<Value> = objects.iter().map(|e| entry_json(e, now_ms)).collect();
    json!({"ok": true, "objects": objects})
}

/// Running TCP endpoint. Dropping it stops the accept loop.
pub struct ApiServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ApiServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `addr` and serves the query API; each connection gets its own
/// thread and is processed line by line.
pub fn serve_api<A: ToSocketAddrs>(store: Arc<Ldm>, addr: A, clock: Clock) -> io::Result<ApiServer> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let handle = thread::spawn(move || {
        while !flag.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let store = store.clone();
                    let clock = clock.clone();
                    let flag = flag.clone();
                    thread::spawn(move || {
                        let _ = serve_connection(stream, &store, &clock, &flag);
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(_) => thread::sleep(Duration::from_millis(10)),
            }
        }
    });
    Ok(ApiServer {
        addr: local,
        stop,
        handle: Some(handle),
    })
}

fn serve_connection(stream: TcpStream, store: &Ldm, clock: &Clock, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        if stop.load(Ordering::Relaxed) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                if buf.last() != Some(&b'\n') {
                    // EOF in the middle of a line
                    if buf.iter().all(u8::is_ascii_whitespace) {
                        return Ok(());
                    }
                }
                let line = String::from_utf8_lossy(&buf);
                let line = line.trim();
                if !line.is_empty() {
                    let response = handle_request(store, line, clock());
                    writer.write_all(response.to_string().as_bytes())?;
                    writer.write_all(b"\n")?;
                    writer.flush()?;
                }
                buf.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u32, pos: GeoPosition, t: u64) -> LdmEntry {
        LdmEntry {
            station_id: id,
            kind: EntryKind::Cam,
            position: pos,
            speed_mps: 1.0,
            heading_deg: 90.0,
            last_update_ms: t,
            raw_generation_delta_time: (t % 65536) as u16,
        }
    }

    fn center() -> GeoPosition {
        GeoPosition::new(44.65, 10.93).unwrap()
    }

    #[test]
    fn upsert_semantics() {
        let ldm = Ldm::new();
        assert_eq!(ldm.upsert(entry(1, center(), 10)), UpsertOutcome::Inserted);
        assert_eq!(ldm.len(), 1);
        assert_eq!(ldm.upsert(entry(1, center(), 20)), UpsertOutcome::Updated);
        assert_eq!(ldm.len(), 1);
        assert_eq!(ldm.upsert(entry(1, center(), 5)), UpsertOutcome::Stale);
        assert_eq!(ldm.get(1).unwrap().last_update_ms, 20);
        for id in 0..1000 {
            ldm.upsert(entry(id, center(), 30));
        }
        assert_eq!(ldm.len(), 1000);
    }

    #[test]
    fn area_boundaries() {
        let ldm = Ldm::new();
        ldm.upsert(entry(1, center(), 0));
        ldm.upsert(entry(2, center().destination(0.0, 100.0), 0));
        let at_center = ldm.query_area(&center(), 0.0);
        assert_eq!(at_center.len(), 1);
        assert_eq!(at_center[0].station_id, 1);
        assert_eq!(ldm.query_area(&center(), 50.0).len(), 1);
        assert_eq!(ldm.query_area(&center(), 150.0).len(), 2);
    }

    #[test]
    fn purge_boundaries() {
        let cfg = LdmConfig::default();
        let ldm = Ldm::new();
        assert_eq!(ldm.purge_expired(10_000, &cfg), 0);
        ldm.upsert(entry(1, center(), 0));
        assert_eq!(ldm.purge_expired(cfg.max_age_ms, &cfg), 0);
        assert_eq!(ldm.len(), 1);
        assert_eq!(ldm.purge_expired(cfg.max_age_ms + 1, &cfg), 1);
        assert!(ldm.is_empty());
    }

    #[test]
    fn request_handling() {
        let ldm = Ldm::new();
        ldm.upsert(entry(7, center(), 100));
        let all = handle_request(&ldm, r#"{"op":"all"}"#, 150);
        assert_eq!(all["ok"], true);
        assert_eq!(all["objects"][0]["station_id"], 7);
        assert_eq!(all["objects"][0]["age_ms"], 50);
        let by_id = handle_request(&ldm, r#"{"op":"id","station_id":8}"#, 150);
        assert_eq!(by_id["objects"].as_array().unwrap().len(), 0);
        assert_eq!(handle_request(&ldm, "not json", 0), json!({"ok":false,"error":"parse"}));
        assert_eq!(handle_request(&ldm, r#"{"op":"nope"}"#, 0)["error"], "unknown_op");
        assert_eq!(handle_request(&ldm, r#"{"op":"area","lat":1}"#, 0)["error"], "bad_request");
        assert_eq!(
            handle_request(&ldm, r#"{"op":"area","lat":95,"lon":0,"radius_m":1}"#, 0)["error"],
            "bad_request"
        );
    }

    #[test]
    fn config_validation() {
        assert!(LdmConfig::default().validate().is_ok());
        let bad = LdmConfig { sweep_period_ms: 6000, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sweeper_purges() {
        let store = Arc::new(Ldm::new());
        store.upsert(entry(1, center(), 0));
        let cfg = LdmConfig { max_age_ms: 10, sweep_period_ms: 10, api_listen_port: 0 };
        let sweeper = Sweeper::spawn(store.clone(), cfg, Arc::new(|| 1000));
        for _ in 0..100 {
            if store.is_empty() {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
        sweeper.stop();
        assert!(store.is_empty());
    }
}
