#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use itsbench::channel::scenario::{run_scenario, ScenarioConfig};
use itsbench::facilities::CamTriggerConfig;
use itsbench::geo::GeoPosition;
use itsbench::gnss::Trace;
use itsbench::rfanalysis::{
    check_mask, compute_average_power_dbm, compute_psd, detect_bursts, extract_segments, fit_power_linearity,
    load_iq_capture, EmissionMask, DEFAULT_GUARD_DB, DEFAULT_IMPEDANCE_OHM, DEFAULT_N_FFT,
};
use itsbench::station::{
    default_clock, log_sink, spawn_gnss, start_station, write_log_header, GnssSource, StationConfig, TransportSpec,
};
use itsbench::trial::{
    cluster_by_sender, clusters_geojson, estimate_range, load_rx_log, senders, window_pdr, windows_geojson,
    write_windows_csv, PdrWindow, WindowConfig,
};

const EXIT_ERROR: u8 = 1;
const EXIT_NONCOMPLIANT: u8 = 2;

#[derive(Parser)]
#[command(name = "itsbench", version, about = "C-ITS station testbed and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a live station until interrupted or --duration-s elapses
    Station(StationArgs),
    /// Simulated multi-station scenarios
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Offline analyses
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
}

#[derive(Args)]
struct StationArgs {
    #[arg(long)]
    config: PathBuf,
    /// trace:<file> or gpsd:<host:port>
    #[arg(long)]
    gnss: GnssSource,
    /// TCP port for the LDM API (overrides the config)
    #[arg(long)]
    ldm_port: Option<u16>,
    #[arg(long)]
    forced_period_ms: Option<u64>,
    /// sim or udp:<ipv4:port>
    #[arg(long, default_value = "sim")]
    transport: TransportSpec,
    #[arg(long)]
    duration_s: Option<f64>,
    /// Trace replay speed factor
    #[arg(long, default_value_t = 1.0)]
    replay_speed: f64,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// PSD and emission-mask check of an IQ capture
    Spectrum(SpectrumArgs),
    /// Average power of captures, or linearity of an input/output sweep
    Power(PowerArgs),
    /// Drive-test log analysis: clusters, PDR windows and range
    Trial(TrialArgs),
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    capture: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// JSON report path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    psd_csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N_FFT)]
    n_fft: usize,
    #[arg(long, default_value_t = DEFAULT_IMPEDANCE_OHM)]
    impedance_ohm: f64,
    #[arg(long, default_value_t = DEFAULT_GUARD_DB)]
    guard_db: f64,
    #[arg(long, default_value_t = 256)]
    burst_window: usize,
    /// Analyse the whole capture instead of detected bursts
    #[arg(long)]
    no_burst_filter: bool,
}

#[derive(Args)]
struct PowerArgs {
    #[arg(long, required_unless_present = "sweep")]
    capture: Vec<PathBuf>,
    /// CSV of `input_dbm,output` where output is dBm or a capture path
    #[arg(long, conflicts_with = "capture")]
    sweep: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IMPEDANCE_OHM)]
    impedance_ohm: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    log: PathBuf,
    /// Transmitter position; defaults to each sender's mean reported position
    #[arg(long, requires = "tx_lon", allow_hyphen_values = true)]
    tx_lat: Option<f64>,
    #[arg(long, requires = "tx_lat", allow_hyphen_values = true)]
    tx_lon: Option<f64>,
    #[arg(long)]
    rx_trace: Option<PathBuf>,
    #[arg(long)]
    sender: Option<u32>,
    /// Keep only RX rows logged by this receiver (scenario logs)
    #[arg(long)]
    receiver: Option<u32>,
    #[arg(long, default_value_t = 100)]
    tx_period_ms: u64,
    #[arg(long, default_value_t = 1000)]
    window_ms: u64,
    #[arg(long, default_value_t = 10)]
    group_size: usize,
    /// Output prefix: <out>_windows.geojson, _clusters.geojson, _windows.csv, _range.csv
    #[arg(long)]
    out: PathBuf,
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Station(a) => cmd_station(a),
        Command::Scenario {
            command: ScenarioCommand::Run { config, out },
        } => cmd_scenario(&config, &out),
        Command::Analyze { command } => match command {
            AnalyzeCommand::Spectrum(a) => cmd_spectrum(a),
            AnalyzeCommand::Power(a) => cmd_power(a),
            AnalyzeCommand::Trial(a) => cmd_trial(a),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn write_json(value: &Value, out: Option<&Path>) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text),
        None => io::stdout().write_all(text.as_bytes()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Box<dyn std::error::Error>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()).into())
}

fn cmd_station(a: StationArgs) -> CmdResult {
    let mut cfg = StationConfig::load(&a.config)?;
    if let Some(port) = a.ldm_port {
        cfg.ldm.api_listen_port = port;
    }
    if let Some(p) = a.forced_period_ms {
        cfg.cam = CamTriggerConfig { forced_period_ms: Some(p), ..cfg.cam };
    }
    cfg.validate().map_err(|m| format!("{}: {m}", a.config.display()))?;
    if !(a.replay_speed >= 0.0) {
        return Err("--replay-speed must be >= 0".into());
    }
    let duration = match a.duration_s {
        Some(s) if !(s > 0.0) || !s.is_finite() => return Err("--duration-s must be > 0".into()),
        Some(s) => Some(Duration::from_secs_f64(s)),
        None => None,
    };
    let transport = a.transport.open()?;
    let gnss = spawn_gnss(&a.gnss, a.replay_speed)?;
    let sink = log_sink(io::stdout());
    write_log_header(&sink)?;
    let handle = start_station(&cfg, gnss, transport, sink, default_clock())?;
    eprintln!("ldm api listening on {}", handle.api_addr());
    let summary = handle.run_for(duration);
    eprintln!(
        "station {}: tx {} rx {} ldm {}",
        cfg.station_id, summary.tx_count, summary.rx_count, summary.ldm_size
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_scenario(config: &Path, out: &Path) -> CmdResult {
    let cfg = ScenarioConfig::load(config)?;
    let log = run_scenario(&cfg)?;
    let mut w = create(out)?;
    log.write_csv(&mut w)?;
    w.flush()?;
    eprintln!("{} TX, {} RX -> {}", log.tx_count(), log.rx_count(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_spectrum(a: SpectrumArgs) -> CmdResult {
    let capture = load_iq_capture(&a.capture)?;
    let (samples, bursts) = if a.no_burst_filter {
        (capture.samples.clone(), None)
    } else {
        let segs = detect_bursts(&capture.samples, a.guard_db, a.burst_window);
        if segs.is_empty() {
            (capture.samples.clone(), Some(segs))
        } else {
            (extract_segments(&capture.samples, &segs), Some(segs))
        }
    };
    let n_fft = a.n_fft.min(samples.len());
    let power = compute_average_power_dbm(&samples, a.impedance_ohm)?;
    let psd = compute_psd(&samples, n_fft, capture.fs_hz, capture.fc_hz, a.impedance_ohm)?;
    if let Some(p) = &a.psd_csv {
        let mut w = create(p)?;
        psd.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut report = json!({
        "capture": a.capture.display().to_string(),
        "fs_hz": capture.fs_hz,
        "fc_hz": capture.fc_hz,
        "total_samples": capture.len(),
        "analysed_samples": samples.len(),
        "bursts": bursts.as_ref().map(|s| json!({
            "guard_db": a.guard_db,
            "window": a.burst_window,
            "count": s.len(),
            "segments": s,
        })),
        "average_power_dbm": power.0,
        "psd": {
            "n_fft": psd.n_fft,
            "bin_width_hz": psd.bin_width_hz,
            "segments": psd.segments,
            "impedance_ohm": psd.impedance_ohm,
            "peak_dbm_per_hz": psd.psd_dbm_per_hz.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
    });
    let mut code = ExitCode::SUCCESS;
    if let Some(mask_path) = &a.mask {
        let mask = EmissionMask::load(mask_path)?;
        let r = check_mask(&psd, &mask);
        if !r.compliant {
            code = ExitCode::from(EXIT_NONCOMPLIANT);
        }
        report["mask"] = json!({
            "path": mask_path.display().to_string(),
            "compliant": r.compliant,
            "checked_bins": r.checked_bins,
            "skipped_bins": r.skipped_bins,
            "worst_margin_db": r.worst_margin_db,
            "violation_count": r.violations.len(),
            "violations": r.violations,
        });
    }
    write_json(&report, a.out.as_deref())?;
    Ok(code)
}

fn cmd_power(a: PowerArgs) -> CmdResult {
    let report = if let Some(sweep) = &a.sweep {
        let base = sweep.parent().unwrap_or(Path::new("."));
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(sweep)
            .map_err(|e| format!("{}: {e}", sweep.display()))?;
        let mut points = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| format!("{}: {e}", sweep.display()))?;
            let at = |msg: String| format!("{}: line {}: {msg}", sweep.display(), i + 1);
            if row.len() != 2 {
                return Err(at(format!("expected 2 columns, got {}", row.len())).into());
            }
            let Ok(input) = row[0].parse::<f64>() else {
                if i == 0 {
                    continue;
                }
                return Err(at(format!("bad input power {:?}", &row[0])).into());
            };
            let output = match row[1].parse::<f64>() {
                Ok(v) => v,
                Err(_) => {
                    let cap = load_iq_capture(&base.join(&row[1]))?;
                    compute_average_power_dbm(&cap.samples, a.impedance_ohm)?.0
                }
            };
            points.push((input, output));
        }
        let fit = fit_power_linearity(&points)?;
        json!({
            "points": points.iter().map(|(x, y)| json!({"input_dbm": x, "output_dbm": y})).collect::<Vec<_>>(),
            "fit": fit,
        })
    } else {
        let mut rows = Vec::new();
        for path in &a.capture {
            let cap = load_iq_capture(path)?;
            let p = compute_average_power_dbm(&cap.samples, a.impedance_ohm)?;
            rows.push(json!({
                "capture": path.display().to_string(),
                "samples": cap.len(),
                "average_power_dbm": p.0,
            }));
        }
        json!({ "captures": rows })
    };
    write_json(&report, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_trial(a: TrialArgs) -> CmdResult {
    let mut records = load_rx_log(&a.log)?;
    if let Some(r) = a.receiver {
        records.retain(|rec| rec.receiver_id == Some(r));
    }
    let fixed_tx = match (a.tx_lat, a.tx_lon) {
        (Some(lat), Some(lon)) => Some(GeoPosition::new(lat, lon)?),
        _ => None,
    };
    let trace = a.rx_trace.as_deref().map(Trace::load).transpose()?;
    let cfg = WindowConfig {
        tx_period_ms: a.tx_period_ms,
        window_ms: a.window_ms,
    };
    let ids = match a.sender {
        Some(id) => vec![id],
        None => senders(&records),
    };

    let clusters = cluster_by_sender(&records, a.group_size);
    let mut window_features = Vec::new();
    let mut windows_csv = Vec::new();
    let mut range_csv = String::from("sender_id,bin_start_m,bin_end_m,mean_pdr,windows\n");
    let mut summary = Vec::new();
    for id in ids {
        let own: Vec<_> = records.iter().filter(|r| r.sender_id == id).copied().collect();
        let Some(tx) = fixed_tx.or_else(|| GeoPosition::mean(own.iter().map(|r| &r.tx_position))) else {
            return Err(format!("sender {id} has no records in {}", a.log.display()).into());
        };
        let windows: Vec<PdrWindow> = window_pdr(&own, cfg, &tx, trace.as_ref())?;
        let range = estimate_range(&windows).ok();
        let gj = windows_geojson(&windows, id, &tx);
        window_features.extend(gj["features"].as_array().cloned().unwrap_or_default());
        let mut buf = Vec::new();
        write_windows_csv(&windows, id, &mut buf)?;
        let text = String::from_utf8(buf)?;
        let skip = usize::from(!windows_csv.is_empty());
        windows_csv.extend(text.lines().skip(skip).map(str::to_string));
        if let Some(r) = &range {
            for b in &r.distance_pdr_curve {
                range_csv.push_str(&format!("{id},{},{},{:.6},{}\n", b.bin_start_m, b.bin_end_m, b.mean_pdr, b.windows));
            }
        }
        summary.push(json!({
            "sender_id": id,
            "tx_lat": tx.latitude_deg(),
            "tx_lon": tx.longitude_deg(),
            "records": own.len(),
            "windows": windows.len(),
            "received_sum": windows.iter().map(|w| w.received_count).sum::<usize>(),
            "clusters": clusters.iter().filter(|c| c.sender_id == id).count(),
            "max_rx_distance_m": range.as_ref().map(|r| r.max_rx_distance_m),
        }));
    }

    let windows_path = with_suffix(&a.out, "_windows.geojson");
    std::fs::write(
        &windows_path,
        serde_json::to_string_pretty(&json!({"type": "FeatureCollection", "features": window_features}))?,
    )?;
    let selected: Vec<_> = clusters
        .into_iter()
        .filter(|c| a.sender.is_none_or(|s| s == c.sender_id))
        .collect();
    std::fs::write(
        with_suffix(&a.out, "_clusters.geojson"),
        serde_json::to_string_pretty(&clusters_geojson(&selected))?,
    )?;
    let mut csv_text = windows_csv.join("\n");
    if !csv_text.is_empty() {
        csv_text.push('\n');
    }
    std::fs::write(with_suffix(&a.out, "_windows.csv"), csv_text)?;
    std::fs::write(with_suffix(&a.out, "_range.csv"), range_csv)?;
    write_json(
        &json!({
            "log": a.log.display().to_string(),
            "records": records.len(),
            "senders": summary,
        }),
        None,
    )?;
    Ok(ExitCode::SUCCESS)
}
