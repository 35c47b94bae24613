use std::path::Path;

use serde::Serialize;

use super::{PsdEstimate, RfError};

/// Piecewise-linear PSD limit relative to the carrier. When every
/// breakpoint offset is non-negative the mask is symmetric and is evaluated
/// at `|f - fc|`; otherwise it is applied as given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionMask {
    breakpoints: Vec<(f64, f64)>,
}

impl EmissionMask {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self, RfError> {
        if breakpoints.len() < 2 {
            return Err(RfError::Parameter("mask needs at least 2 breakpoints".into()));
        }
        if breakpoints.iter().any(|(f, l)| !f.is_finite() || !l.is_finite()) {
            return Err(RfError::Parameter("mask breakpoints must be finite".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(RfError::Parameter("mask offsets must be strictly increasing".into()));
        }
        Ok(Self { breakpoints })
    }

    pub fn load(path: &Path) -> Result<Self, RfError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::io_at(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `offset_hz limit_dbm_per_hz` lines; `#` starts a comment.
    pub fn parse(text: &str, name: &str) -> Result<Self, RfError> {
        let mut points = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| RfError::Mask {
                path: name.into(),
                line: idx + 1,
                msg,
            };
            let mut it = line.split_whitespace();
            let (Some(f), Some(l), None) = (it.next(), it.next(), it.next()) else {
                return Err(err(format!("expected `offset_hz limit_dbm_per_hz`, got {line:?}")));
            };
            let f: f64 = f.parse().map_err(|_| err(format!("bad offset {f:?}")))?;
            let l: f64 = l.parse().map_err(|_| err(format!("bad limit {l:?}")))?;
            points.push((f, l));
        }
        Self::new(points).map_err(|e| RfError::Mask {
            path: name.into(),
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn is_symmetric(&self) -> bool {
        self.breakpoints[0].0 >= 0.0
    }

    /// Limit at `offset_hz` from the carrier, `None` outside the mask extent.
    pub fn limit_at(&self, offset_hz: f64) -> Option<f64> {
        let x = if self.is_symmetric() { offset_hz.abs() } else { offset_hz };
        let first = self.breakpoints[0];
        let last = *self.breakpoints.last().unwrap();
        if x < first.0 || x > last.0 {
            return None;
        }
        let idx = self.breakpoints.partition_point(|p| p.0 <= x);
        if idx == self.breakpoints.len() {
            return Some(last.1);
        }
        let (a, b) = (self.breakpoints[idx - 1], self.breakpoints[idx]);
        let t = (x - a.0) / (b.0 - a.0);
        Some(a.1 + t * (b.1 - a.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub freq_hz: f64,
    pub psd_dbm_per_hz: f64,
    pub limit_dbm_per_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskReport {
    pub compliant: bool,
    pub violations: Vec<Violation>,
    pub checked_bins: usize,
    pub skipped_bins: usize,
    /// Smallest `limit - psd` over checked bins; negative when violated.
    pub worst_margin_db: Option<f64>,
}

/// Compares every PSD bin with the interpolated limit. Bins outside the
/// mask extent are skipped and counted.
pub fn check_mask(psd: &PsdEstimate, mask: &EmissionMask) -> MaskReport {
    let mut violations = Vec::new();
    let (mut checked, mut skipped) = (0, 0);
    let mut worst: Option<f64> = None;
    for (&f, &p) in psd.freqs_hz.iter().zip(&psd.psd_dbm_per_hz) {
        let Some(limit) = mask.limit_at(f - psd.fc_hz) else {
            skipped += 1;
            continue;
        };
        checked += 1;
        let margin = limit - p;
        worst = Some(worst.map_or(margin, |w: f64| w.min(margin)));
        if p > limit {
            violations.push(Violation {
                freq_hz: f,
                psd_dbm_per_hz: p,
                limit_dbm_per_hz: limit,
            });
        }
    }
    MaskReport {
        compliant: violations.is_empty(),
        violations,
        checked_bins: checked,
        skipped_bins: skipped,
        worst_margin_db: worst,
    }
}
