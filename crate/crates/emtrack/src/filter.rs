//! Multi-tone demodulation: one signed amplitude per transmitter frequency,
//! extracted from each frame by projecting onto precomputed reference
//! sinusoids (a 2K x N matrix applied per frame).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::acquisition::SampleFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("frequency {frequency} Hz at or above Nyquist ({nyquist} Hz)")]
    NyquistViolation { frequency: f64, nyquist: f64 },
    #[error("duplicate frequency {0} Hz")]
    DuplicateFrequency(f64),
    #[error("frame length {got} does not match matrix frame size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frame size {0} too small, need at least 50 samples")]
    FrameTooShort(usize),
}

/// Precomputed projection coefficients for one (frequencies, N, fs) tuple.
/// Rows 0..K are cosine references, rows K..2K sine.
#[derive(Debug, Clone)]
pub struct DemodulationMatrix {
    rows: DMatrix<f64>,
    frequencies: Vec<f64>,
    frame_size: usize,
    sample_rate: f64,
    bin_aligned: Vec<bool>,
}

/// Signed per-coil amplitudes for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasurement {
    /// Volts, one entry per transmitter coil.
    pub amplitudes: Vec<f64>,
    pub frame_sequence: u64,
    pub frame_time_ns: u64,
}

/// Quadrature components kept for diagnostics; near zero for bin-aligned
/// phase-coherent tones.
#[derive(Debug, Clone)]
pub struct QuadratureDiagnostics {
    pub sine_amplitudes: Vec<f64>,
}

pub fn build_demod(
    frequencies: &[f64],
    frame_size: usize,
    sample_rate: f64,
) -> Result<DemodulationMatrix, FilterError> {
    if frame_size < 50 {
        return Err(FilterError::FrameTooShort(frame_size));
    }
    let nyquist = sample_rate / 2.0;
    for (i, &f) in frequencies.iter().enumerate() {
        if f >= nyquist {
            return Err(FilterError::NyquistViolation { frequency: f, nyquist });
        }
        if frequencies[..i].contains(&f) {
            return Err(FilterError::DuplicateFrequency(f));
        }
    }
    let k = frequencies.len();
    let mut rows = DMatrix::zeros(2 * k, frame_size);
    for (row, &f) in frequencies.iter().enumerate() {
        let w = std::f64::consts::TAU * f / sample_rate;
        for n in 0..frame_size {
            let (s, c) = (w * n as f64).sin_cos();
            rows[(row, n)] = c;
            rows[(k + row, n)] = s;
        }
    }
    let bin_aligned = frequencies
        .iter()
        .map(|&f| {
            let bins = f * frame_size as f64 / sample_rate;
            (bins - bins.round()).abs() < 1e-9
        })
        .collect::<Vec<_>>();
    for (i, aligned) in bin_aligned.iter().enumerate() {
        if !aligned {
            log::warn!(
                "frequency {} Hz is not bin-aligned at N={frame_size}, fs={sample_rate}; spectral leakage expected",
                frequencies[i]
            );
        }
    }
    Ok(DemodulationMatrix {
        rows,
        frequencies: frequencies.to_vec(),
        frame_size,
        sample_rate,
        bin_aligned,
    })
}

impl DemodulationMatrix {
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn bin_aligned(&self) -> &[bool] {
        &self.bin_aligned
    }

    pub fn all_bin_aligned(&self) -> bool {
        self.bin_aligned.iter().all(|&a| a)
    }

    /// Raw projection row, for tests. Row k is the cosine reference for
    /// frequency k, row K + k the sine reference.
    pub fn row(&self, index: usize) -> Vec<f64> {
        self.rows.row(index).iter().copied().collect()
    }

    /// Signed amplitude per frequency: a_k = (2/N) * sum_n x[n] cos(w_k n).
    /// Transmit is phase-coherent with zero phase at frame start, so the
    /// cosine projection carries the full signed amplitude.
    pub fn extract(&self, frame: &SampleFrame) -> Result<SpectralMeasurement, FilterError> {
        Ok(self.extract_with_quadrature(frame)?.0)
    }

    pub fn extract_with_quadrature(
        &self,
        frame: &SampleFrame,
    ) -> Result<(SpectralMeasurement, QuadratureDiagnostics), FilterError> {
        if frame.samples.len() != self.frame_size {
            return Err(FilterError::LengthMismatch {
                expected: self.frame_size,
                got: frame.samples.len(),
            });
        }
        let x = DVector::from_column_slice(&frame.samples);
        let projections = &self.rows * x;
        let k = self.frequencies.len();
        let gain = 2.0 / self.frame_size as f64;
        let amplitudes = (0..k).map(|i| gain * projections[i]).collect();
        let sine_amplitudes = (0..k).map(|i| gain * projections[k + i]).collect();
        Ok((
            SpectralMeasurement {
                amplitudes,
                frame_sequence: frame.sequence,
                frame_time_ns: frame.start_time_ns,
            },
            QuadratureDiagnostics { sine_amplitudes },
        ))
    }
}
