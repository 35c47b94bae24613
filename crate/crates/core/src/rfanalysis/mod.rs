//! Post-processing of spectrum-analyzer IQ captures: noise/burst
//! separation, average power, PSD in dBm/Hz, emission-mask compliance and
//! input/output power linearity.

mod bursts;
mod capture;
mod linearity;
mod mask;
mod psd;

pub use bursts::{detect_bursts, extract_segments, Segment};
pub use capture::{load_iq_capture, read_iq_capture, read_iq_stream, save_iq_capture, write_iq_capture, IqCapture};
pub use linearity::{fit_power_linearity, LinearityFit};
pub use mask::{check_mask, EmissionMask, MaskReport, Violation};
pub use psd::{compute_average_power_dbm, compute_psd, dft_normalized, PsdEstimate};

use thiserror::Error;

/// Reference impedance for power computations, ohms.
pub const DEFAULT_IMPEDANCE_OHM: f64 = 50.0;
/// Segment length used for PSD estimation on full captures.
pub const DEFAULT_N_FFT: usize = 65_536;
/// Margin above the median window power that marks a burst, dB.
pub const DEFAULT_GUARD_DB: f64 = 10.0;

#[derive(Debug, Error)]
pub enum RfError {
    #[error("{path}: bad magic at offset 0, expected \"IQC1\"")]
    BadMagic { path: String },
    #[error("{path}: malformed header at offset {offset}: {msg}")]
    Header { path: String, offset: usize, msg: String },
    #[error("{path}: sample count mismatch: header says {expected}, payload holds {actual} (offset {offset})")]
    SampleCount {
        path: String,
        expected: usize,
        actual: usize,
        offset: usize,
    },
    #[error("empty sample set")]
    Empty,
    #[error("need at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{path}: line {line}: {msg}")]
    Mask { path: String, line: usize, msg: String },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn io_at(path: &std::path::Path, e: std::io::Error) -> RfError {
    RfError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
