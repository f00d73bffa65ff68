//! Machine-readable benchmark reports, one JSON document per run.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationStats {
    pub min: usize,
    pub median: usize,
    pub max: usize,
}

impl IterationStats {
    pub fn from_samples(samples: &[usize]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        IterationStats {
            min: sorted.first().copied().unwrap_or(0),
            median: sorted.get(sorted.len() / 2).copied().unwrap_or(0),
            max: sorted.last().copied().unwrap_or(0),
        }
    }
}

/// One trajectory run at one frame size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRun {
    /// Solved updates per second over the run's second half.
    pub update_hz: f64,
    /// Median over updates of 1 / processing-time; the solver-limited rate.
    pub median_instant_hz: f64,
    pub iterations: IterationStats,
    /// Median wall time of the LM solve alone, ms.
    pub median_solve_ms: f64,
    /// Median wall time extract -> solve -> encode, ms.
    pub median_processing_ms: f64,
    pub frames_solved: usize,
    pub frames_skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub frame_size: usize,
    /// Definitional: frame_size / sample_rate, ms.
    pub acquisition_latency_ms: f64,
    /// acquisition_latency_ms + median processing (static run), ms.
    pub end_to_end_latency_ms: f64,
    pub static_update_hz: f64,
    pub dynamic_update_hz: f64,
    #[serde(rename = "static")]
    pub static_run: TrajectoryRun,
    #[serde(rename = "dynamic")]
    pub dynamic_run: TrajectoryRun,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub sample_rate_hz: f64,
    pub seconds_per_run: f64,
    pub seed: u64,
    pub entries: Vec<LatencyEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per side of the square grid.
    pub points_per_side: usize,
    /// Meters between adjacent grid points.
    pub spacing_m: f64,
    /// Height above the transmitter plane, meters.
    pub z_m: f64,
    /// Position acquisitions per grid point.
    pub repetitions: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points_per_side: 7,
            spacing_m: 0.025,
            z_m: 0.070,
            repetitions: 150,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPointResult {
    pub truth_mm: [f64; 3],
    /// Mean solved position over all repetitions, mm.
    pub mean_mm: [f64; 3],
    /// |mean - truth|, mm.
    pub mean_error_mm: f64,
    /// RMS of the individual per-acquisition position errors, mm.
    pub single_acquisition_rms_mm: f64,
    pub solves: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridAggregate {
    pub max_error_mm: f64,
    pub min_error_mm: f64,
    pub rms_error_mm: f64,
    pub std_error_mm: f64,
    /// RMS over all points of the single-acquisition RMS error, mm.
    pub single_acquisition_rms_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub grid: GridSpec,
    pub noise_sigma: f64,
    pub seed: u64,
    pub points: Vec<GridPointResult>,
    pub aggregate: GridAggregate,
}

impl GridReport {
    /// RMS^2 equals the mean of squared per-point errors by construction;
    /// recompute to double-check report arithmetic.
    pub fn recompute_aggregate(&self) -> GridAggregate {
        let errors: Vec<f64> = self.points.iter().map(|p| p.mean_error_mm).collect();
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let rms = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let single = (self
            .points
            .iter()
            .map(|p| p.single_acquisition_rms_mm.powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        GridAggregate {
            max_error_mm: errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_error_mm: errors.iter().copied().fold(f64::INFINITY, f64::min),
            rms_error_mm: rms,
            std_error_mm: var.sqrt(),
            single_acquisition_rms_mm: single,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn iteration_stats() {
        let s = IterationStats::from_samples(&[5, 1, 3, 2, 9]);
        assert_eq!((s.min, s.median, s.max), (1, 3, 9));
    }
}
