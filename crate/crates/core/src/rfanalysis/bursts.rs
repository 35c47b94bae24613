use num_complex::Complex64;
use serde::Serialize;

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Splits the capture into consecutive windows of `window` samples (the last
/// one may be shorter), takes the median window power as the noise floor and
/// returns maximal runs of windows whose mean power exceeds
/// `floor + guard_db`.
///
/// Segment edges are accurate to one window. The median is a noise-floor
/// estimate only while bursts occupy less than half of the capture.
pub fn detect_bursts(samples: &[Complex64], guard_db: f64, window: usize) -> Vec<Segment> {
    let window = window.max(1);
    if samples.is_empty() {
        return Vec::new();
    }
    let powers: Vec<f64> = samples
        .chunks(window)
        .map(|c| c.iter().map(Complex64::norm_sqr).sum::<f64>() / c.len() as f64)
        .collect();

    let mut sorted = powers.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let floor = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    let threshold = floor * 10f64.powf(guard_db / 10.0);

    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &p) in powers.iter().enumerate() {
        match (p > threshold, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                out.push(Segment {
                    start: s * window,
                    end: i * window,
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push(Segment {
            start: s * window,
            end: samples.len(),
        });
    }
    out
}

/// Concatenates the samples covered by `segments`.
pub fn extract_segments(samples: &[Complex64], segments: &[Segment]) -> Vec<Complex64> {
    segments
        .iter()
        .flat_map(|s| samples[s.start.min(samples.len())..s.end.min(samples.len())].iter().copied())
        .collect()
}
