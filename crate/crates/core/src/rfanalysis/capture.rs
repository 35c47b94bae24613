//! IQC1 capture files: an ASCII header line
//! `IQC1 fs=<hz> fc=<hz> n=<count>\n` followed by `n` little-endian f32
//! pairs (I then Q).

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::RfError;

#[derive(Debug, Clone, PartialEq)]
pub struct IqCapture {
    pub fs_hz: f64,
    pub fc_hz: f64,
    pub samples: Vec<Complex64>,
}

impl IqCapture {
    pub fn new(fs_hz: f64, fc_hz: f64, samples: Vec<Complex64>) -> Result<Self, RfError> {
        if !(fs_hz > 0.0) || !fs_hz.is_finite() {
            return Err(RfError::Parameter(format!("fs must be > 0, got {fs_hz}")));
        }
        if !fc_hz.is_finite() {
            return Err(RfError::Parameter(format!("fc must be finite, got {fc_hz}")));
        }
        if samples.is_empty() {
            return Err(RfError::Empty);
        }
        Ok(Self { fs_hz, fc_hz, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs_hz
    }
}

pub fn load_iq_capture(path: &Path) -> Result<IqCapture, RfError> {
    let bytes = std::fs::read(path).map_err(|e| super::io_at(path, e))?;
    read_iq_capture(&bytes, &path.display().to_string())
}

/// Parses an in-memory IQC1 image; `name` is used in error messages.
pub fn read_iq_capture(bytes: &[u8], name: &str) -> Result<IqCapture, RfError> {
    if !bytes.starts_with(b"IQC1") {
        return Err(RfError::BadMagic { path: name.into() });
    }
    let header_err = |offset: usize, msg: String| RfError::Header {
        path: name.into(),
        offset,
        msg,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err(bytes.len(), "missing newline after header".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|e| header_err(e.valid_up_to(), "non-UTF-8 header".into()))?;

    let (mut fs, mut fc, mut n) = (None, None, None);
    let mut offset = 4;
    for token in header[4..].split(' ') {
        let here = offset;
        offset += token.len() + 1;
        if token.is_empty() {
            continue;
        }
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| header_err(here, format!("expected key=value, got {token:?}")))?;
        match key {
            "fs" => fs = Some(value.parse::<f64>().map_err(|_| header_err(here, format!("bad fs {value:?}")))?),
            "fc" => fc = Some(value.parse::<f64>().map_err(|_| header_err(here, format!("bad fc {value:?}")))?),
            "n" => n = Some(value.parse::<usize>().map_err(|_| header_err(here, format!("bad n {value:?}")))?),
            _ => return Err(header_err(here, format!("unknown key {key:?}"))),
        }
    }
    let fs = fs.ok_or_else(|| header_err(newline, "missing fs".into()))?;
    let fc = fc.ok_or_else(|| header_err(newline, "missing fc".into()))?;
    let n = n.ok_or_else(|| header_err(newline, "missing n".into()))?;

    let payload_start = newline + 1;
    let payload = &bytes[payload_start..];
    if payload.len() != n * 8 {
        return Err(RfError::SampleCount {
            path: name.into(),
            expected: n,
            actual: payload.len() / 8,
            offset: payload_start,
        });
    }
    let samples = payload
        .chunks_exact(8)
        .map(|c| {
            let i = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let q = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(i as f64, q as f64)
        })
        .collect();
    IqCapture::new(fs, fc, samples).map_err(|e| header_err(0, e.to_string()))
}

/// Samples are stored as f32, so values not representable in f32 are
/// rounded on save.
pub fn write_iq_capture<W: Write>(capture: &IqCapture, mut w: W) -> std::io::Result<()> {
    writeln!(w, "IQC1 fs={} fc={} n={}", capture.fs_hz, capture.fc_hz, capture.samples.len())?;
    let mut buf = Vec::with_capacity(capture.samples.len() * 8);
    for s in &capture.samples {
        buf.extend_from_slice(&(s.re as f32).to_le_bytes());
        buf.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()
}

pub fn save_iq_capture(capture: &IqCapture, path: &Path) -> Result<(), RfError> {
    let file = std::fs::File::create(path)?;
    write_iq_capture(capture, std::io::BufWriter::new(file))?;
    Ok(())
}

/// Reads a whole stream into memory and parses it.
pub fn read_iq_stream<R: Read>(mut r: R, name: &str) -> Result<IqCapture, RfError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    read_iq_capture(&bytes, name)
}
