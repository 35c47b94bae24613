//! Drive-test log analysis: per-sender position clusters, one-second
//! reception windows, range estimation and GeoJSON rendering.
//!
//! Input CSV is either `rx_time_ms,sender_id,tx_lat,tx_lon,rx_lat,rx_lon[,p_rx_dbm]`
//! or a scenario event log (`time_ms,event,...`), from which RX rows are taken.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{haversine_distance, GeoPosition};
use crate::gnss::Trace;

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("{path}: line {line}: {msg}")]
    Format { path: String, line: u64, msg: String },
    #[error("rx log times go backwards at line {line}")]
    Unsorted { line: u64 },
    #[error("tx period {period_ms} ms does not divide window {window_ms} ms")]
    Period { period_ms: u64, window_ms: u64 },
    #[error("no window with at least one received message")]
    NoReception,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxLogRecord {
    pub rx_time_ms: u64,
    pub sender_id: u32,
    pub tx_position: GeoPosition,
    pub rx_position: GeoPosition,
    pub p_rx_dbm: Option<f64>,
    /// Present when read from a scenario event log.
    pub receiver_id: Option<u32>,
}

pub fn load_rx_log(path: &Path) -> Result<Vec<RxLogRecord>, TrialError> {
    let file = std::fs::File::open(path)
        .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_rx_log(file, &path.display().to_string())
}

pub fn read_rx_log<R: Read>(reader: R, name: &str) -> Result<Vec<RxLogRecord>, TrialError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    let mut event_log = false;
    let mut last_time = 0u64;
    for (idx, row) in rdr.records().enumerate() {
        let line = idx as u64 + 1;
        let err = |msg: String| TrialError::Format {
            path: name.to_string(),
            line,
            msg,
        };
        let row = row.map_err(|e| err(e.to_string()))?;
        if idx == 0 && row.get(0).is_some_and(|f| f.parse::<u64>().is_err()) {
            event_log = row.get(1) == Some("event");
            continue;
        }
        // event logs carry `event` and `receiver_id` columns
        if !event_log && row.get(1).is_some_and(|f| f == "TX" || f == "RX") {
            event_log = true;
        }
        let num = |i: usize| -> Result<f64, TrialError> {
            let raw = row.get(i).ok_or_else(|| err(format!("missing column {}", i + 1)))?;
            raw.parse::<f64>().map_err(|_| err(format!("column {} not numeric: {raw:?}", i + 1)))
        };
        let int = |i: usize| -> Result<u64, TrialError> {
            let raw = row.get(i).ok_or_else(|| err(format!("missing column {}", i + 1)))?;
            raw.parse::<u64>().map_err(|_| err(format!("column {} not an integer: {raw:?}", i + 1)))
        };
        let pos = |lat: usize, lon: usize| -> Result<GeoPosition, TrialError> {
            GeoPosition::new(num(lat)?, num(lon)?).map_err(|e| err(e.to_string()))
        };
        let record = if event_log {
            if row.len() != 9 {
                return Err(err(format!("expected 9 columns, got {}", row.len())));
            }
            if &row[1] != "RX" {
                continue;
            }
            RxLogRecord {
                rx_time_ms: int(0)?,
                sender_id: int(2)? as u32,
                receiver_id: Some(int(3)? as u32),
                tx_position: pos(4, 5)?,
                rx_position: pos(6, 7)?,
                p_rx_dbm: if row[8].is_empty() { None } else { Some(num(8)?) },
            }
        } else {
            if !(6..=7).contains(&row.len()) {
                return Err(err(format!("expected 6 or 7 columns, got {}", row.len())));
            }
            RxLogRecord {
                rx_time_ms: int(0)?,
                sender_id: int(1)? as u32,
                receiver_id: None,
                tx_position: pos(2, 3)?,
                rx_position: pos(4, 5)?,
                p_rx_dbm: match row.get(6) {
                    Some(s) if !s.is_empty() => Some(num(6)?),
                    _ => None,
                },
            }
        };
        if record.rx_time_ms < last_time {
            return Err(TrialError::Unsorted { line });
        }
        last_time = record.rx_time_ms;
        out.push(record);
    }
    Ok(out)
}

pub fn write_rx_log<W: Write>(records: &[RxLogRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "rx_time_ms,sender_id,tx_lat,tx_lon,rx_lat,rx_lon,p_rx_dbm")?;
    for r in records {
        writeln!(
            w,
            "{},{},{:.7},{:.7},{:.7},{:.7},{}",
            r.rx_time_ms,
            r.sender_id,
            r.tx_position.latitude_deg(),
            r.tx_position.longitude_deg(),
            r.rx_position.latitude_deg(),
            r.rx_position.longitude_deg(),
            r.p_rx_dbm.map(|p| format!("{p:.3}")).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Sender ids present in the log, ascending.
pub fn senders(records: &[RxLogRecord]) -> Vec<u32> {
    let mut ids: Vec<u32> = records.iter().map(|r| r.sender_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub sender_id: u32,
    pub mean_position: GeoPosition,
    pub first_flag: bool,
    pub first_rx_time_ms: u64,
    pub count: usize,
}

/// Groups each sender's messages, in arrival order, into blocks of
/// `group_size` and averages their transmitter positions. A trailing
/// partial block is dropped. Output is ordered by sender id.
pub fn cluster_by_sender(records: &[RxLogRecord], group_size: usize) -> Vec<Cluster> {
    let group_size = group_size.max(1);
    let mut by_sender: BTreeMap<u32, Vec<&RxLogRecord>> = BTreeMap::new();
    for r in records {
        by_sender.entry(r.sender_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (sender_id, msgs) in by_sender {
        for (i, block) in msgs.chunks_exact(group_size).enumerate() {
            out.push(Cluster {
                sender_id,
                mean_position: GeoPosition::mean(block.iter().map(|r| &r.tx_position)).expect("non-empty block"),
                first_flag: i == 0,
                first_rx_time_ms: block[0].rx_time_ms,
                count: block.len(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdrWindow {
    pub window_start_ms: u64,
    pub mean_rx_position: Option<GeoPosition>,
    pub received_count: usize,
    pub expected_count: usize,
    /// Distance from the mean receiver position to the transmitter.
    pub distance_m: Option<f64>,
    /// Farthest receiver position among the window's records.
    pub max_record_distance_m: Option<f64>,
}

impl PdrWindow {
    pub fn pdr(&self) -> f64 {
        self.received_count as f64 / self.expected_count as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WindowConfig {
    pub tx_period_ms: u64,
    pub window_ms: u64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            tx_period_ms: 100,
            window_ms: 1000,
        }
    }
}

/// Bins one sender's records into consecutive windows anchored at the
/// first record's window boundary. With a receiver trace, windows extend to
/// the end of the trace and empty windows are placed at the interpolated
/// receiver position; without one, empty windows carry no position.
pub fn window_pdr(
    records: &[RxLogRecord],
    cfg: WindowConfig,
    tx_position: &GeoPosition,
    rx_trace: Option<&Trace>,
) -> Result<Vec<PdrWindow>, TrialError> {
    if cfg.tx_period_ms == 0 || cfg.window_ms == 0 || !cfg.window_ms.is_multiple_of(cfg.tx_period_ms) {
        return Err(TrialError::Period {
            period_ms: cfg.tx_period_ms,
            window_ms: cfg.window_ms,
        });
    }
    let first = records
        .iter()
        .map(|r| r.rx_time_ms)
        .min()
        .or_else(|| rx_trace.and_then(Trace::start_ms));
    let Some(first) = first else {
        return Ok(Vec::new());
    };
    let mut last = records.iter().map(|r| r.rx_time_ms).max().unwrap_or(first);
    if let Some(end) = rx_trace.and_then(Trace::end_ms) {
        last = last.max(end);
    }
    let w = cfg.window_ms;
    let anchor = first / w * w;
    let n_windows = ((last - anchor) / w + 1) as usize;
    let mut bins: Vec<Vec<&RxLogRecord>> = vec![Vec::new(); n_windows];
    for r in records {
        bins[((r.rx_time_ms - anchor) / w) as usize].push(r);
    }
    let expected = (w / cfg.tx_period_ms) as usize;
    Ok(bins
        .into_iter()
        .enumerate()
        .map(|(k, bin)| {
            let start = anchor + k as u64 * w;
            let mean = GeoPosition::mean(bin.iter().map(|r| &r.rx_position))
                .or_else(|| rx_trace.and_then(|t| t.state_at(start + w / 2)).map(|s| s.position));
            let max_record = bin
                .iter()
                .map(|r| haversine_distance(tx_position, &r.rx_position))
                .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));
            PdrWindow {
                window_start_ms: start,
                mean_rx_position: mean,
                received_count: bin.len(),
                expected_count: expected,
                distance_m: mean.map(|p| haversine_distance(tx_position, &p)),
                max_record_distance_m: max_record,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeBin {
    pub bin_start_m: f64,
    pub bin_end_m: f64,
    pub mean_pdr: f64,
    pub windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeEstimate {
    pub max_rx_distance_m: f64,
    pub distance_pdr_curve: Vec<RangeBin>,
}

pub const RANGE_BIN_M: f64 = 10.0;

/// Maximum distance at which anything was received, plus mean PDR per
/// 10 m distance bin (by window mean position).
pub fn estimate_range(windows: &[PdrWindow]) -> Result<RangeEstimate, TrialError> {
    let max_rx_distance_m = windows
        .iter()
        .filter(|w| w.received_count >= 1)
        .filter_map(|w| w.max_record_distance_m.or(w.distance_m))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))))
        .ok_or(TrialError::NoReception)?;

    let mut bins: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for w in windows {
        if let Some(d) = w.distance_m {
            let e = bins.entry((d / RANGE_BIN_M).floor() as u64).or_default();
            e.0 += w.pdr();
            e.1 += 1;
        }
    }
    let distance_pdr_curve = bins
        .into_iter()
        .map(|(k, (sum, n))| RangeBin {
            bin_start_m: k as f64 * RANGE_BIN_M,
            bin_end_m: (k + 1) as f64 * RANGE_BIN_M,
            mean_pdr: sum / n as f64,
            windows: n,
        })
        .collect();
    Ok(RangeEstimate {
        max_rx_distance_m,
        distance_pdr_curve,
    })
}

/// Black (0) to dark green (`max`) ramp.
pub fn pdr_color(received: usize, max: usize) -> String {
    let frac = if max == 0 {
        0.0
    } else {
        (received as f64 / max as f64).clamp(0.0, 1.0)
    };
    format!("#00{:02x}00", (frac * 100.0).round() as u8)
}

fn point(p: &GeoPosition, properties: Value) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [p.longitude_deg(), p.latitude_deg()]},
        "properties": properties,
    })
}

fn collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

/// One point per cluster; the first cluster per sender is red.
pub fn clusters_geojson(clusters: &[Cluster]) -> Value {
    collection(
        clusters
            .iter()
            .map(|c| {
                point(
                    &c.mean_position,
                    json!({
                        "sender_id": c.sender_id,
                        "first_flag": c.first_flag,
                        "count": c.count,
                        "first_rx_time_ms": c.first_rx_time_ms,
                        "marker-color": if c.first_flag { "#ff0000" } else { "#1f77b4" },
                    }),
                )
            })
            .collect(),
    )
}

/// One point per window. Windows without a position are placed at the
/// transmitter so the feature count always equals the window count.
pub fn windows_geojson(windows: &[PdrWindow], sender_id: u32, tx_position: &GeoPosition) -> Value {
    collection(
        windows
            .iter()
            .map(|w| {
                point(
                    w.mean_rx_position.as_ref().unwrap_or(tx_position),
                    json!({
                        "sender_id": sender_id,
                        "window_start_ms": w.window_start_ms,
                        "received_count": w.received_count,
                        "expected_count": w.expected_count,
                        "distance_m": w.distance_m,
                        "positioned": w.mean_rx_position.is_some(),
                        "marker-color": pdr_color(w.received_count, w.expected_count),
                    }),
                )
            })
            .collect(),
    )
}

pub fn write_windows_csv<W: Write>(windows: &[PdrWindow], sender_id: u32, mut w: W) -> io::Result<()> {
    writeln!(w, "sender_id,window_start_ms,received_count,expected_count,mean_rx_lat,mean_rx_lon,distance_m")?;
    for win in windows {
        let (lat, lon) = win
            .mean_rx_position
            .map(|p| (format!("{:.7}", p.latitude_deg()), format!("{:.7}", p.longitude_deg())))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            sender_id,
            win.window_start_ms,
            win.received_count,
            win.expected_count,
            lat,
            lon,
            win.distance_m.map(|d| format!("{d:.2}")).unwrap_or_default()
        )?;
    }
    Ok(())
}
