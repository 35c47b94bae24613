use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::RfError;
use crate::link::PowerDbm;

/// Power spectral density over `n_fft` bins, ordered by increasing absolute
/// frequency (DC of the baseband at `fc`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdEstimate {
    pub freqs_hz: Vec<f64>,
    pub psd_dbm_per_hz: Vec<f64>,
    pub n_fft: usize,
    pub bin_width_hz: f64,
    pub impedance_ohm: f64,
    pub fc_hz: f64,
    pub segments: usize,
}

impl PsdEstimate {
    /// Total power implied by the PSD, in watts.
    pub fn total_power_watts(&self) -> f64 {
        self.psd_dbm_per_hz
            .iter()
            .map(|p| 10f64.powf((p - 30.0) / 10.0) * self.bin_width_hz)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "freq_hz,psd_dbm_per_hz")?;
        for (f, p) in self.freqs_hz.iter().zip(&self.psd_dbm_per_hz) {
            writeln!(w, "{f:.3},{p:.6}")?;
        }
        Ok(())
    }
}

/// Forward DFT scaled by `1/N`: `X_k = (1/N) sum_n x_n e^{-j 2 pi k n / N}`.
pub fn dft_normalized(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// `10 log10( sum |x_i|^2 / (N R) ) + 30`.
pub fn compute_average_power_dbm(samples: &[Complex64], impedance_ohm: f64) -> Result<PowerDbm, RfError> {
    if samples.is_empty() {
        return Err(RfError::Empty);
    }
    if !(impedance_ohm > 0.0) {
        return Err(RfError::Parameter(format!("impedance must be > 0, got {impedance_ohm}")));
    }
    let energy: f64 = samples.iter().map(|s| s.norm_sqr()).sum();
    Ok(PowerDbm(
        10.0 * (energy / (samples.len() as f64 * impedance_ohm)).log10() + 30.0,
    ))
}

/// Averaged periodogram over `floor(N / n_fft)` non-overlapping
/// rectangular segments, `P(f_j) = 10 log10(|X_j|^2 / (R b)) + 30` with
/// `b = fs / n_fft`. A single segment reproduces the plain one-FFT estimate.
pub fn compute_psd(
    samples: &[Complex64],
    n_fft: usize,
    fs_hz: f64,
    fc_hz: f64,
    impedance_ohm: f64,
) -> Result<PsdEstimate, RfError> {
    if n_fft == 0 {
        return Err(RfError::Parameter("n_fft must be > 0".into()));
    }
    if samples.len() < n_fft {
        return Err(RfError::TooFewSamples {
            needed: n_fft,
            actual: samples.len(),
        });
    }
    if !(fs_hz > 0.0) || !(impedance_ohm > 0.0) {
        return Err(RfError::Parameter("fs and impedance must be > 0".into()));
    }

    let segments = samples.len() / n_fft;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut acc = vec![0.0f64; n_fft];
    let mut buf = vec![Complex64::default(); n_fft];
    let scale = 1.0 / n_fft as f64;
    for seg in samples.chunks_exact(n_fft).take(segments) {
        buf.copy_from_slice(seg);
        fft.process(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += (v * scale).norm_sqr();
        }
    }

    let bin_width_hz = fs_hz / n_fft as f64;
    let half = n_fft / 2;
    let mut freqs_hz = Vec::with_capacity(n_fft);
    let mut psd = Vec::with_capacity(n_fft);
    // fftshift: bin (k + n - half) mod n sits at offset (k - half) * b
    for k in 0..n_fft {
        let bin = (k + n_fft - half) % n_fft;
        let mean_power = acc[bin] / segments as f64;
        freqs_hz.push(fc_hz + (k as f64 - half as f64) * bin_width_hz);
        psd.push(10.0 * (mean_power / (impedance_ohm * bin_width_hz)).log10() + 30.0);
    }

    Ok(PsdEstimate {
        freqs_hz,
        psd_dbm_per_hz: psd,
        n_fft,
        bin_width_hz,
        impedance_ohm,
        fc_hz,
        segments,
    })
}
