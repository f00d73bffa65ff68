//! Frame acquisition from a pluggable signal source.
//!
//! The shipped source synthesizes sensor voltages from the forward field
//! model: each frame is the phase-coherent sum of one cosine per transmitter
//! plus optional white Gaussian noise. Real hardware can replace it by
//! honoring the same contract: fixed-size frames, monotonic sequence numbers
//! and timestamps.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldmodel::{forward_model, FieldError, SensorSpec, TransmitterArray};
use crate::solver::Pose5DOF;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("source stopped")]
    SourceStopped,
    #[error("acquisition config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pacing {
    /// Deliver frame i no earlier than stream start + i * N / fs.
    Realtime,
    /// Deliver frames back to back.
    Unpaced,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    /// Hz.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// Samples per frame.
    #[serde(default = "default_frame_size")]
    pub frame_size: usize,
    /// Volts RMS of additive white Gaussian noise on raw samples.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "default_pacing")]
    pub pacing: Pacing,
}

fn default_sample_rate() -> f64 {
    100_000.0
}

fn default_frame_size() -> usize {
    1000
}

fn default_pacing() -> Pacing {
    Pacing::Realtime
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            sample_rate: 100_000.0,
            frame_size: 1000,
            noise_sigma: 0.0,
            pacing: Pacing::Realtime,
        }
    }
}

impl AcquisitionConfig {
    /// Seconds from first to last sample of a frame; the latency floor.
    pub fn acquisition_latency(&self) -> f64 {
        self.frame_size as f64 / self.sample_rate
    }

    pub fn frame_duration(&self) -> Duration {
        Duration::from_secs_f64(self.acquisition_latency())
    }

    pub fn validate(&self, max_frequency: f64) -> Result<(), AcquisitionError> {
        if self.frame_size < 50 {
            return Err(AcquisitionError::InvalidConfig(format!(
                "frame_size {} < 50",
                self.frame_size
            )));
        }
        if !(self.sample_rate > 2.0 * max_frequency) {
            return Err(AcquisitionError::InvalidConfig(format!(
                "sample_rate {} Hz violates Nyquist for max transmit frequency {} Hz",
                self.sample_rate, max_frequency
            )));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(AcquisitionError::InvalidConfig(
                "noise_sigma must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One acquisition frame of raw sensor voltage samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub samples: Vec<f64>,
    /// Start of the sample window, nanoseconds on the stream's monotonic
    /// clock.
    pub start_time_ns: u64,
    pub sequence: u64,
    pub sample_rate: f64,
    pub frame_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Static,
    LinearPath,
}

/// Simulated sensor motion. The benchmark presets: "static" < 5 cm/s,
/// "dynamic" > 50 cm/s.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default = "default_kind")]
    pub kind: TrajectoryKind,
    #[serde(default = "default_start_pose")]
    pub start_pose: Pose5DOF,
    /// m/s, linear_path only.
    #[serde(default)]
    pub velocity: [f64; 3],
    /// rad/s applied to theta.
    #[serde(default)]
    pub angular_velocity: f64,
}

fn default_kind() -> TrajectoryKind {
    TrajectoryKind::Static
}

fn default_start_pose() -> Pose5DOF {
    Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.3)
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::fixed(default_start_pose())
    }
}

impl TrajectorySpec {
    pub fn fixed(pose: Pose5DOF) -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::Static,
            start_pose: pose,
            velocity: [0.0; 3],
            angular_velocity: 0.0,
        }
    }

    /// Static preset: slow drift at 0.03 m/s along +x.
    pub fn static_preset(pose: Pose5DOF) -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::LinearPath,
            start_pose: pose,
            velocity: [0.03, 0.0, 0.0],
            angular_velocity: 0.0,
        }
    }

    /// Dynamic preset: 0.6 m/s along +x.
    pub fn dynamic_preset(pose: Pose5DOF) -> Self {
        TrajectorySpec {
            kind: TrajectoryKind::LinearPath,
            start_pose: pose,
            velocity: [0.6, 0.0, 0.0],
            angular_velocity: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.kind == TrajectoryKind::Static && self.velocity != [0.0; 3] {
            return Err(AcquisitionError::InvalidConfig(
                "static trajectory must have zero velocity".into(),
            ));
        }
        Ok(())
    }

    /// Pose at time t seconds from stream start. Linear paths reflect off the
    /// given position bounds so long runs stay inside the tracking volume.
    pub fn pose_at(&self, t: f64) -> Pose5DOF {
        match self.kind {
            TrajectoryKind::Static => self.start_pose,
            TrajectoryKind::LinearPath => Pose5DOF::new(
                self.start_pose.x + self.velocity[0] * t,
                self.start_pose.y + self.velocity[1] * t,
                self.start_pose.z + self.velocity[2] * t,
                self.start_pose.theta + self.angular_velocity * t,
                self.start_pose.phi,
            ),
        }
    }

    /// Like `pose_at` but folding the position back into [lo, hi] per axis
    /// (triangle-wave reflection), for indefinitely long runs.
    pub fn pose_at_reflected(&self, t: f64, lower: &[f64; 3], upper: &[f64; 3]) -> Pose5DOF {
        let raw = self.pose_at(t);
        let mut p = [raw.x, raw.y, raw.z];
        for i in 0..3 {
            let span = upper[i] - lower[i];
            if span > 0.0 {
                let phase = (p[i] - lower[i]).rem_euclid(2.0 * span);
                p[i] = lower[i] + if phase <= span { phase } else { 2.0 * span - phase };
            }
        }
        Pose5DOF::new(p[0], p[1], p[2], raw.theta, raw.phi)
    }
}

/// Synthesize one frame at a fixed pose.
///
/// samples[n] = sum_k V_k cos(2 pi f_k n / fs) + noise, with V from the
/// forward model. Every coil has zero phase at n = 0, so frames are
/// phase-coherent by construction.
pub fn synth_frame(
    array: &TransmitterArray,
    pose: &Pose5DOF,
    sensor: &SensorSpec,
    config: &AcquisitionConfig,
    rng_seed: u64,
) -> Result<SampleFrame, AcquisitionError> {
    let samples = synth_samples(array, pose, sensor, config, rng_seed)?;
    Ok(SampleFrame {
        samples,
        start_time_ns: 0,
        sequence: 0,
        sample_rate: config.sample_rate,
        frame_size: config.frame_size,
    })
}

fn synth_samples(
    array: &TransmitterArray,
    pose: &Pose5DOF,
    sensor: &SensorSpec,
    config: &AcquisitionConfig,
    rng_seed: u64,
) -> Result<Vec<f64>, AcquisitionError> {
    let amplitudes = forward_model(array, pose, sensor)?;
    let n = config.frame_size;
    let mut samples = vec![0.0f64; n];
    for (coil, &v) in array.coils.iter().zip(&amplitudes) {
        let w = std::f64::consts::TAU * coil.frequency / config.sample_rate;
        for (i, s) in samples.iter_mut().enumerate() {
            *s += v * (w * i as f64).cos();
        }
    }
    if config.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for s in samples.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *s += config.noise_sigma * g;
        }
    }
    Ok(samples)
}

/// Shared stop flag for a frame stream.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::Relaxed);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

/// Iterator of frames from the simulated source. The pose for frame i is the
/// trajectory evaluated at the frame's midpoint time.
pub struct FrameStream {
    array: TransmitterArray,
    sensor: SensorSpec,
    config: AcquisitionConfig,
    trajectory: TrajectorySpec,
    base_seed: u64,
    sequence: u64,
    started: Instant,
    stop: StopHandle,
    /// Position reflection box for long linear paths; None disables folding.
    reflect_box: Option<([f64; 3], [f64; 3])>,
}

impl FrameStream {
    pub fn new(
        array: TransmitterArray,
        sensor: SensorSpec,
        config: AcquisitionConfig,
        trajectory: TrajectorySpec,
        base_seed: u64,
    ) -> Self {
        FrameStream {
            array,
            sensor,
            config,
            trajectory,
            base_seed,
            sequence: 0,
            started: Instant::now(),
            stop: StopHandle::new(),
            reflect_box: None,
        }
    }

    pub fn with_reflection(mut self, lower: [f64; 3], upper: [f64; 3]) -> Self {
        self.reflect_box = Some((lower, upper));
        self
    }

    pub fn stop_handle(&self) -> StopHandle {
        self.stop.clone()
    }

    /// Ground-truth pose used for the frame with this sequence number.
    pub fn pose_for_sequence(&self, sequence: u64) -> Pose5DOF {
        let frame_s = self.config.acquisition_latency();
        let midpoint = (sequence as f64 + 0.5) * frame_s;
        match self.reflect_box {
            Some((lo, hi)) => self.trajectory.pose_at_reflected(midpoint, &lo, &hi),
            None => self.trajectory.pose_at(midpoint),
        }
    }

    fn next_frame(&mut self) -> Result<SampleFrame, AcquisitionError> {
        if self.stop.is_stopped() {
            return Err(AcquisitionError::SourceStopped);
        }
        let seq = self.sequence;
        let frame_s = self.config.acquisition_latency();
        let pose = self.pose_for_sequence(seq);
        let seed = self.base_seed.wrapping_add(seq.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let samples = synth_samples(&self.array, &pose, &self.sensor, &self.config, seed)?;

        if self.config.pacing == Pacing::Realtime {
            // The frame is only complete once its whole sample window has
            // elapsed.
            let ready_at = self.started + Duration::from_secs_f64((seq as f64 + 1.0) * frame_s);
            pace_until(ready_at);
        }
        self.sequence += 1;
        Ok(SampleFrame {
            samples,
            start_time_ns: (seq as f64 * frame_s * 1e9) as u64,
            sequence: seq,
            sample_rate: self.config.sample_rate,
            frame_size: self.config.frame_size,
        })
    }
}

impl Iterator for FrameStream {
    type Item = SampleFrame;

    fn next(&mut self) -> Option<SampleFrame> {
        match self.next_frame() {
            Ok(frame) => Some(frame),
            Err(AcquisitionError::SourceStopped) => None,
            Err(err) => {
                log::error!("frame synthesis failed: {err}");
                None
            }
        }
    }
}

/// Sleep until `target` with a short spin tail for sub-scheduler precision.
pub fn pace_until(target: Instant) {
    loop {
        let now = Instant::now();
        if now >= target {
            return;
        }
        let remaining = target - now;
        if remaining > Duration::from_micros(300) {
            std::thread::sleep(remaining - Duration::from_micros(200));
        } else {
            std::hint::spin_loop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::build_demod;
    use approx::assert_relative_eq;

    fn unpaced_config() -> AcquisitionConfig {
        AcquisitionConfig {
            pacing: Pacing::Unpaced,
            ..AcquisitionConfig::default()
        }
    }

    #[test]
    fn latency_identity_table() {
        for (n, expected_ms) in [(250, 2.5), (500, 5.0), (1000, 10.0), (2000, 20.0), (5000, 50.0)] {
            let config = AcquisitionConfig {
                frame_size: n,
                ..AcquisitionConfig::default()
            };
            assert_relative_eq!(config.acquisition_latency() * 1e3, expected_ms);
        }
    }

    #[test]
    fn single_coil_pure_cosine() {
        let mut array = TransmitterArray::default_planar();
        array.coils.truncate(5);
        for (k, coil) in array.coils.iter_mut().enumerate() {
            coil.id = k;
        }
        // Zero out all but coil 0 by moving the sensor on coil 0's axis and
        // keeping only coil 0's amplitude in the expectation.
        let pose = Pose5DOF::new(-0.07, -0.07, 0.1, 0.0, 0.0);
        let sensor = SensorSpec::default();
        let config = unpaced_config();
        let frame = synth_frame(&array, &pose, &sensor, &config, 0).unwrap();
        let v = forward_model(&array, &pose, &sensor).unwrap();
        for (i, &s) in frame.samples.iter().enumerate() {
            let expected: f64 = array
                .coils
                .iter()
                .zip(&v)
                .map(|(c, &vk)| {
                    vk * (std::f64::consts::TAU * c.frequency * i as f64 / config.sample_rate).cos()
                })
                .sum();
            assert_relative_eq!(s, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn synth_extract_round_trip_noiseless() {
        let array = TransmitterArray::default_planar();
        let sensor = SensorSpec::default();
        let pose = Pose5DOF::new(0.02, -0.05, 0.12, 0.7, 0.6);
        for n in [250usize, 500, 1000, 2000, 5000] {
            let config = AcquisitionConfig {
                frame_size: n,
                ..unpaced_config()
            };
            let frame = synth_frame(&array, &pose, &sensor, &config, 0).unwrap();
            let demod = build_demod(&array.frequencies(), n, config.sample_rate).unwrap();
            let meas = demod.extract(&frame).unwrap();
            let expected = forward_model(&array, &pose, &sensor).unwrap();
            for k in 0..array.len() {
                assert_relative_eq!(meas.amplitudes[k], expected[k], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_bit_identical() {
        let array = TransmitterArray::default_planar();
        let sensor = SensorSpec::default();
        let pose = Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.3);
        let config = AcquisitionConfig {
            noise_sigma: 1e-4,
            ..unpaced_config()
        };
        let a = synth_frame(&array, &pose, &sensor, &config, 42).unwrap();
        let b = synth_frame(&array, &pose, &sensor, &config, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_frame(&array, &pose, &sensor, &config, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        // Tone amplitudes zeroed: place the sensor normal orthogonal to B so
        // only noise remains.
        let array = TransmitterArray::default_planar();
        let sensor = SensorSpec::default();
        let sigma = 1e-4;
        let config = AcquisitionConfig {
            frame_size: 5000,
            noise_sigma: sigma,
            ..unpaced_config()
        };
        let mut within = 0;
        let trials = 100;
        for seed in 0..trials {
            let mut frame = synth_frame(
                &array,
                &Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.0),
                &sensor,
                &config,
                seed,
            )
            .unwrap();
            // Remove the deterministic tone part to leave pure noise.
            let clean = synth_frame(
                &array,
                &Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.0),
                &sensor,
                &AcquisitionConfig { noise_sigma: 0.0, ..config },
                seed,
            )
            .unwrap();
            for (s, c) in frame.samples.iter_mut().zip(&clean.samples) {
                *s -= c;
            }
            let mean: f64 = frame.samples.iter().sum::<f64>() / frame.samples.len() as f64;
            let var: f64 = frame.samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>()
                / (frame.samples.len() - 1) as f64;
            if (var - sigma * sigma).abs() < 0.05 * sigma * sigma {
                within += 1;
            }
        }
        assert!(within >= 95, "only {within}/{trials} frames within 5% of sigma^2");
    }

    #[test]
    fn unpaced_static_stream_identical_frames() {
        let array = TransmitterArray::default_planar();
        let config = unpaced_config();
        let trajectory = TrajectorySpec::fixed(Pose5DOF::new(0.01, 0.02, 0.1, 0.2, 0.4));
        let frames: Vec<_> = FrameStream::new(array, SensorSpec::default(), config, trajectory, 7)
            .take(5)
            .collect();
        assert_eq!(frames.len(), 5);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.sequence, i as u64);
            assert_eq!(f.samples, frames[0].samples);
        }
        for w in frames.windows(2) {
            assert!(w[1].start_time_ns > w[0].start_time_ns);
        }
    }

    #[test]
    fn linear_path_midpoint_spacing() {
        // 0.6 m/s with 20 ms frames: consecutive frame poses 12 mm apart.
        let trajectory = TrajectorySpec::dynamic_preset(Pose5DOF::new(-0.1, 0.0, 0.1, 0.0, 0.3));
        let config = AcquisitionConfig {
            frame_size: 2000,
            ..unpaced_config()
        };
        let stream = FrameStream::new(
            TransmitterArray::default_planar(),
            SensorSpec::default(),
            config,
            trajectory,
            0,
        );
        let p0 = stream.pose_for_sequence(0);
        let p1 = stream.pose_for_sequence(1);
        assert_relative_eq!((p1.position() - p0.position()).norm(), 0.012, max_relative = 1e-12);
    }

    #[test]
    fn realtime_pacing_interval() {
        let config = AcquisitionConfig {
            frame_size: 2000,
            pacing: Pacing::Realtime,
            ..AcquisitionConfig::default()
        };
        let trajectory = TrajectorySpec::fixed(Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.3));
        let mut stream = FrameStream::new(
            TransmitterArray::default_planar(),
            SensorSpec::default(),
            config,
            trajectory,
            0,
        );
        let start = Instant::now();
        let mut times = Vec::new();
        for _ in 0..5 {
            stream.next().unwrap();
            times.push(start.elapsed());
        }
        // Frame i completes no earlier than (i+1) * 20 ms.
        for (i, t) in times.iter().enumerate() {
            let floor = Duration::from_millis(20 * (i as u64 + 1));
            assert!(*t >= floor, "frame {i} delivered at {t:?}, before {floor:?}");
        }
        assert!(times[4] < Duration::from_millis(160), "pacing too slow: {:?}", times[4]);
    }

    #[test]
    fn stop_handle_ends_stream() {
        let config = unpaced_config();
        let trajectory = TrajectorySpec::fixed(Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.3));
        let mut stream = FrameStream::new(
            TransmitterArray::default_planar(),
            SensorSpec::default(),
            config,
            trajectory,
            0,
        );
        assert!(stream.next().is_some());
        stream.stop_handle().stop();
        assert!(stream.next().is_none());
    }

    #[test]
    fn config_validation() {
        let bad = AcquisitionConfig { frame_size: 10, ..AcquisitionConfig::default() };
        assert!(bad.validate(34_000.0).is_err());
        let bad = AcquisitionConfig { sample_rate: 60_000.0, ..AcquisitionConfig::default() };
        assert!(bad.validate(34_000.0).is_err());
        assert!(AcquisitionConfig::default().validate(34_000.0).is_ok());
    }

    #[test]
    fn reflection_keeps_position_in_box() {
        let trajectory = TrajectorySpec::dynamic_preset(Pose5DOF::new(0.0, 0.0, 0.1, 0.0, 0.3));
        let lower = [-0.1, -0.1, 0.05];
        let upper = [0.1, 0.1, 0.25];
        for i in 0..200 {
            let p = trajectory.pose_at_reflected(i as f64 * 0.05, &lower, &upper);
            assert!(p.x >= lower[0] - 1e-12 && p.x <= upper[0] + 1e-12, "x = {}", p.x);
        }
    }
}
