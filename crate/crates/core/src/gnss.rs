//! Positioning ingestion: NMEA 0183 (RMC, GGA), gpsd JSON reports and
//! recorded CSV traces replayed as a timed stream of kinematic states.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDate, NaiveTime};
use serde::Deserialize;
use thiserror::Error;

use crate::geo::{GeoError, GeoPosition, KinematicState};

pub const MPS_PER_KNOT: f64 = 1852.0 / 3600.0;

#[derive(Debug, Error)]
pub enum GnssError {
    #[error("bad NMEA checksum")]
    Checksum,
    #[error("unexpected sentence type {0}")]
    SentenceType(String),
    #[error("{sentence}: expected {expected} fields, got {actual}")]
    FieldCount {
        sentence: &'static str,
        expected: &'static str,
        actual: usize,
    },
    #[error("invalid field {field}: {value:?}")]
    Field { field: &'static str, value: String },
    #[error("malformed gpsd JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("trace line {line}: {msg}")]
    Trace { line: u64, msg: String },
    #[error("trace not sorted: timestamp {ts} at line {line} precedes {prev}")]
    Unsorted { line: u64, ts: u64, prev: u64 },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<GnssError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One position report from any GNSS source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixUpdate {
    pub position: GeoPosition,
    pub speed_mps: Option<f64>,
    pub heading_deg: Option<f64>,
    pub fix_time_ms: u64,
    /// Consumers must not emit CAMs from an invalid fix.
    pub valid: bool,
}

impl FixUpdate {
    /// Converts a valid fix to a kinematic state; missing speed/heading
    /// default to zero.
    pub fn to_kinematic(&self) -> Option<KinematicState> {
        if !self.valid {
            return None;
        }
        KinematicState::new(
            self.position,
            self.speed_mps.unwrap_or(0.0),
            self.heading_deg.unwrap_or(0.0),
            self.fix_time_ms,
        )
        .ok()
    }
}

/// True iff the XOR of the bytes between `$` and `*` equals the two hex
/// digits following `*`.
pub fn validate_nmea_checksum(line: &str) -> bool {
    let line = line.trim_end_matches(['\r', '\n']);
    let Some(body) = line.strip_prefix('$') else {
        return false;
    };
    let Some((payload, sum)) = body.rsplit_once('*') else {
        return false;
    };
    // checksum digits are upper-case hex
    let is_hex = |b: u8| b.is_ascii_digit() || (b'A'..=b'F').contains(&b);
    if sum.len() != 2 || !sum.bytes().all(is_hex) || payload.contains('*') {
        return false;
    }
    let Ok(expected) = u8::from_str_radix(sum, 16) else {
        return false;
    };
    payload.bytes().fold(0u8, |acc, b| acc ^ b) == expected
}

/// Appends `*HH` to a sentence body (without `$`).
pub fn nmea_with_checksum(body: &str) -> String {
    let ck = body.bytes().fold(0u8, |acc, b| acc ^ b);
    format!("${body}*{ck:02X}")
}

fn sentence_fields(line: &str) -> Result<Vec<&str>, GnssError> {
    if !validate_nmea_checksum(line) {
        return Err(GnssError::Checksum);
    }
    let line = line.trim_end_matches(['\r', '\n']);
    let body = &line[1..line.rfind('*').unwrap_or(line.len())];
    Ok(body.split(',').collect())
}

fn sentence_kind(tag: &str) -> &str {
    // "GPRMC" / "GNRMC" -> "RMC"
    if tag.len() >= 3 {
        &tag[tag.len() - 3..]
    } else {
        tag
    }
}

/// `ddmm.mmmm` (or `dddmm.mmmm`) plus hemisphere into signed decimal degrees.
pub fn parse_nmea_coordinate(value: &str, hemisphere: &str, field: &'static str) -> Result<f64, GnssError> {
    let bad = || GnssError::Field {
        field,
        value: format!("{value},{hemisphere}"),
    };
    let raw: f64 = value.parse().map_err(|_| bad())?;
    if raw < 0.0 {
        return Err(bad());
    }
    let degrees = (raw / 100.0).trunc();
    let minutes = raw - degrees * 100.0;
    if minutes >= 60.0 {
        return Err(bad());
    }
    let decimal = degrees + minutes / 60.0;
    match hemisphere {
        "N" | "E" => Ok(decimal),
        "S" | "W" => Ok(-decimal),
        _ => Err(bad()),
    }
}

/// Inverse of [`parse_nmea_coordinate`]; `width` is 2 for latitude and 3 for
/// longitude.
pub fn format_nmea_coordinate(decimal: f64, width: usize, positive: char, negative: char) -> (String, char) {
    let hemi = if decimal < 0.0 { negative } else { positive };
    let abs = decimal.abs();
    let mut degrees = abs.trunc();
    let mut minutes = (abs - degrees) * 60.0;
    if (minutes * 1e6).round() >= 60e6 {
        degrees += 1.0;
        minutes = 0.0;
    }
    (
        format!("{:0width$}{:09.6}", degrees as u32, minutes, width = width),
        hemi,
    )
}

fn parse_time_of_day(s: &str) -> Result<NaiveTime, GnssError> {
    let bad = || GnssError::Field {
        field: "time",
        value: s.to_string(),
    };
    if s.len() < 6 {
        return Err(bad());
    }
    let h: u32 = s[0..2].parse().map_err(|_| bad())?;
    let m: u32 = s[2..4].parse().map_err(|_| bad())?;
    let sec: f64 = s[4..].parse().map_err(|_| bad())?;
    let whole = sec.trunc() as u32;
    let milli = ((sec - sec.trunc()) * 1000.0).round() as u32;
    NaiveTime::from_hms_milli_opt(h, m, whole, milli.min(999)).ok_or_else(bad)
}

fn parse_date(s: &str) -> Result<NaiveDate, GnssError> {
    let bad = || GnssError::Field {
        field: "date",
        value: s.to_string(),
    };
    if s.len() != 6 {
        return Err(bad());
    }
    let d: u32 = s[0..2].parse().map_err(|_| bad())?;
    let m: u32 = s[2..4].parse().map_err(|_| bad())?;
    let y: i32 = s[4..6].parse().map_err(|_| bad())?;
    // two-digit NMEA year: 80..99 -> 19xx
    let year = if y >= 80 { 1900 + y } else { 2000 + y };
    NaiveDate::from_ymd_opt(year, m, d).ok_or_else(bad)
}

fn optional_f64(s: &str, field: &'static str) -> Result<Option<f64>, GnssError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| GnssError::Field {
        field,
        value: s.to_string(),
    })
}

/// Parses a `$--RMC` sentence (12 to 14 fields depending on NMEA version).
pub fn parse_nmea_rmc(line: &str) -> Result<FixUpdate, GnssError> {
    let f = sentence_fields(line)?;
    if sentence_kind(f[0]) != "RMC" {
        return Err(GnssError::SentenceType(f[0].to_string()));
    }
    if !(12..=14).contains(&f.len()) {
        return Err(GnssError::FieldCount {
            sentence: "RMC",
            expected: "12..=14",
            actual: f.len(),
        });
    }
    let valid = f[2] == "A";
    let fix_time_ms = match (parse_time_of_day(f[1]), parse_date(f[9])) {
        (Ok(t), Ok(d)) => d.and_time(t).and_utc().timestamp_millis().max(0) as u64,
        (Ok(t), Err(_)) if !valid => {
            t.signed_duration_since(NaiveTime::MIN).num_milliseconds() as u64
        }
        (Err(e), _) | (_, Err(e)) => {
            if valid {
                return Err(e);
            }
            0
        }
    };
    if !valid {
        return Ok(FixUpdate {
            position: GeoPosition::new(0.0, 0.0)?,
            speed_mps: None,
            heading_deg: None,
            fix_time_ms,
            valid: false,
        });
    }
    let lat = parse_nmea_coordinate(f[3], f[4], "latitude")?;
    let lon = parse_nmea_coordinate(f[5], f[6], "longitude")?;
    Ok(FixUpdate {
        position: GeoPosition::new(lat, lon)?,
        speed_mps: optional_f64(f[7], "speed")?.map(|kn| kn * MPS_PER_KNOT),
        heading_deg: optional_f64(f[8], "course")?.map(crate::geo::normalize_heading),
        fix_time_ms,
        valid: true,
    })
}

/// Altitude and fix quality from a `$--GGA` sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GgaFix {
    pub position: Option<GeoPosition>,
    pub altitude_m: Option<f64>,
    pub quality: u8,
    pub time_of_day_ms: u64,
}

pub fn parse_nmea_gga(line: &str) -> Result<GgaFix, GnssError> {
    let f = sentence_fields(line)?;
    if sentence_kind(f[0]) != "GGA" {
        return Err(GnssError::SentenceType(f[0].to_string()));
    }
    if f.len() != 15 {
        return Err(GnssError::FieldCount {
            sentence: "GGA",
            expected: "15",
            actual: f.len(),
        });
    }
    let quality: u8 = f[6].parse().unwrap_or(0);
    let time = parse_time_of_day(f[1])?;
    let position = if quality > 0 {
        Some(GeoPosition::new(
            parse_nmea_coordinate(f[2], f[3], "latitude")?,
            parse_nmea_coordinate(f[4], f[5], "longitude")?,
        )?)
    } else {
        None
    };
    Ok(GgaFix {
        position,
        altitude_m: optional_f64(f[9], "altitude")?,
        quality,
        time_of_day_ms: time.signed_duration_since(NaiveTime::MIN).num_milliseconds() as u64,
    })
}

/// Stateful NMEA line consumer: RMC produces fixes, GGA enriches the next
/// RMC with altitude. Other sentences are ignored.
#[derive(Debug, Default)]
pub struct NmeaReader {
    altitude_m: Option<f64>,
}

impl NmeaReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, line: &str) -> Result<Option<FixUpdate>, GnssError> {
        let line = line.trim();
        if line.is_empty() {
            return Ok(None);
        }
        let tag = line.get(1..6).unwrap_or("");
        match sentence_kind(tag) {
            "RMC" => {
                let mut fix = parse_nmea_rmc(line)?;
                if let (true, Some(alt)) = (fix.valid, self.altitude_m) {
                    fix.position =
                        GeoPosition::with_altitude(fix.position.latitude_deg(), fix.position.longitude_deg(), alt)?;
                }
                Ok(Some(fix))
            }
            "GGA" => {
                let gga = parse_nmea_gga(line)?;
                if gga.quality > 0 {
                    self.altitude_m = gga.altitude_m;
                }
                Ok(None)
            }
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Deserialize)]
struct GpsdReport {
    class: String,
    #[serde(default)]
    mode: u8,
    lat: Option<f64>,
    lon: Option<f64>,
    #[serde(rename = "altHAE", alias = "alt")]
    alt: Option<f64>,
    speed: Option<f64>,
    track: Option<f64>,
    time: Option<String>,
}

/// Parses one gpsd JSON line. Non-TPV reports yield `Ok(None)`; a TPV with
/// `mode < 2` yields an invalid fix.
pub fn parse_gpsd_tpv(json_line: &str) -> Result<Option<FixUpdate>, GnssError> {
    let report: GpsdReport = serde_json::from_str(json_line)?;
    if report.class != "TPV" {
        return Ok(None);
    }
    let fix_time_ms = report
        .time
        .as_deref()
        .and_then(|t| DateTime::parse_from_rfc3339(t).ok())
        .map(|t| t.timestamp_millis().max(0) as u64)
        .unwrap_or(0);
    let (Some(lat), Some(lon), true) = (report.lat, report.lon, report.mode >= 2) else {
        return Ok(Some(FixUpdate {
            position: GeoPosition::new(0.0, 0.0)?,
            speed_mps: None,
            heading_deg: None,
            fix_time_ms,
            valid: false,
        }));
    };
    let alt = if report.mode >= 3 { report.alt.unwrap_or(0.0) } else { 0.0 };
    Ok(Some(FixUpdate {
        position: GeoPosition::with_altitude(lat, lon, alt)?,
        speed_mps: report.speed,
        heading_deg: report.track.map(crate::geo::normalize_heading),
        fix_time_ms,
        valid: true,
    }))
}

/// Minimal gpsd client: connects, enables JSON watch mode and yields
/// position fixes as they arrive.
pub struct GpsdClient {
    reader: BufReader<TcpStream>,
}

impl GpsdClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, GnssError> {
        let mut stream = TcpStream::connect(addr)?;
        stream.write_all(b"?WATCH={\"enable\":true,\"json\":true};\n")?;
        Ok(Self {
            reader: BufReader::new(stream),
        })
    }

    /// Blocks until the next TPV report; `Ok(None)` at end of stream.
    pub fn next_fix(&mut self) -> Result<Option<FixUpdate>, GnssError> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Ok(None);
            }
            if let Some(fix) = parse_gpsd_tpv(line.trim())? {
                return Ok(Some(fix));
            }
        }
    }
}

/// A recorded drive: `timestamp_ms,lat_deg,lon_deg,speed_mps,heading_deg`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    states: Vec<KinematicState>,
}

impl Trace {
    pub fn new(states: Vec<KinematicState>) -> Result<Self, GnssError> {
        for (i, w) in states.windows(2).enumerate() {
            if w[1].timestamp_ms < w[0].timestamp_ms {
                return Err(GnssError::Unsorted {
                    line: i as u64 + 2,
                    ts: w[1].timestamp_ms,
                    prev: w[0].timestamp_ms,
                });
            }
        }
        Ok(Self { states })
    }

    pub fn load(path: &Path) -> Result<Self, GnssError> {
        std::fs::File::open(path)
            .map_err(GnssError::from)
            .and_then(Self::from_reader)
            .map_err(|e| GnssError::File {
                path: path.display().to_string(),
                source: Box::new(e),
            })
    }

    /// Reads trace CSV; a header row is allowed and skipped.
    pub fn from_reader<R: io::Read>(reader: R) -> Result<Self, GnssError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut states = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let line = idx as u64 + 1;
            let record = record.map_err(|e| GnssError::Trace {
                line,
                msg: e.to_string(),
            })?;
            if idx == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            if record.len() != 5 {
                return Err(GnssError::Trace {
                    line,
                    msg: format!("expected 5 columns, got {}", record.len()),
                });
            }
            let num = |i: usize| -> Result<f64, GnssError> {
                record[i].parse::<f64>().map_err(|_| GnssError::Trace {
                    line,
                    msg: format!("column {} not numeric: {:?}", i + 1, &record[i]),
                })
            };
            let ts: u64 = record[0].parse().map_err(|_| GnssError::Trace {
                line,
                msg: format!("bad timestamp {:?}", &record[0]),
            })?;
            let position = GeoPosition::new(num(1)?, num(2)?).map_err(|e| GnssError::Trace {
                line,
                msg: e.to_string(),
            })?;
            let state = KinematicState::new(position, num(3)?, num(4)?, ts).map_err(|e| GnssError::Trace {
                line,
                msg: e.to_string(),
            })?;
            if let Some(prev) = states.last().map(|s: &KinematicState| s.timestamp_ms) {
                if ts < prev {
                    return Err(GnssError::Unsorted { line, ts, prev });
                }
            }
            states.push(state);
        }
        Ok(Self { states })
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "timestamp_ms,lat_deg,lon_deg,speed_mps,heading_deg")?;
        for s in &self.states {
            writeln!(
                w,
                "{},{:.9},{:.9},{:.3},{:.3}",
                s.timestamp_ms,
                s.position.latitude_deg(),
                s.position.longitude_deg(),
                s.speed_mps,
                s.heading_deg
            )?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[KinematicState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn start_ms(&self) -> Option<u64> {
        self.states.first().map(|s| s.timestamp_ms)
    }

    pub fn end_ms(&self) -> Option<u64> {
        self.states.last().map(|s| s.timestamp_ms)
    }

    /// State at `t_ms`, linearly interpolating position and speed between
    /// the surrounding records and clamping outside the trace. Heading is
    /// taken from the preceding record.
    pub fn state_at(&self, t_ms: u64) -> Option<KinematicState> {
        let first = self.states.first()?;
        let last = self.states.last()?;
        if t_ms <= first.timestamp_ms {
            return Some(KinematicState { timestamp_ms: t_ms, ..*first });
        }
        if t_ms >= last.timestamp_ms {
            return Some(KinematicState { timestamp_ms: t_ms, ..*last });
        }
        let idx = self.states.partition_point(|s| s.timestamp_ms <= t_ms);
        let (a, b) = (&self.states[idx - 1], &self.states[idx]);
        let span = (b.timestamp_ms - a.timestamp_ms) as f64;
        let frac = if span > 0.0 {
            (t_ms - a.timestamp_ms) as f64 / span
        } else {
            0.0
        };
        Some(KinematicState {
            position: a.position.lerp(&b.position, frac),
            speed_mps: a.speed_mps + (b.speed_mps - a.speed_mps) * frac,
            heading_deg: a.heading_deg,
            timestamp_ms: t_ms,
        })
    }

    /// Replays the trace. `speed_factor > 0` sleeps the recorded
    /// inter-arrival times divided by the factor; `0` delivers everything
    /// immediately with the recorded (virtual) timestamps.
    pub fn replay(&self, speed_factor: f64) -> Replay<'_> {
        Replay {
            states: &self.states,
            next: 0,
            speed_factor,
            started: None,
        }
    }

    /// Runs the replay on its own thread and hands states over through a
    /// bounded queue.
    pub fn spawn_replay(self, speed_factor: f64, capacity: usize) -> Receiver<KinematicState> {
        let (tx, rx) = sync_channel(capacity.max(1));
        thread::spawn(move || {
            for state in self.replay(speed_factor) {
                if tx.send(state).is_err() {
                    break;
                }
            }
        });
        rx
    }
}

pub struct Replay<'a> {
    states: &'a [KinematicState],
    next: usize,
    speed_factor: f64,
    started: Option<Instant>,
}

impl Iterator for Replay<'_> {
    type Item = KinematicState;

    fn next(&mut self) -> Option<KinematicState> {
        let state = *self.states.get(self.next)?;
        self.next += 1;
        if self.speed_factor > 0.0 {
            let start = *self.started.get_or_insert_with(Instant::now);
            let offset_ms = (state.timestamp_ms - self.states[0].timestamp_ms) as f64 / self.speed_factor;
            let due = start + Duration::from_secs_f64(offset_ms / 1000.0);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        Some(state)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.states.len() - self.next;
        (n, Some(n))
    }
}

/// Reads NMEA lines from any buffered source and collects valid fixes.
pub fn read_nmea<R: BufRead>(reader: R) -> Result<Vec<FixUpdate>, GnssError> {
    let mut nmea = NmeaReader::new();
    let mut out = Vec::new();
    for line in reader.lines() {
        if let Some(fix) = nmea.feed(&line?)? {
            out.push(fix);
        }
    }
    Ok(out)
}
