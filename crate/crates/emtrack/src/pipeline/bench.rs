//! Benchmark protocols: the frame-size latency/update-rate sweep and the
//! planar accuracy grid.
//!
//! Both run the full extract -> solve -> encode path on synthesized frames.
//! Acquisition latency is definitional (frame_size / sample_rate); the
//! acquisition window itself is not waited out, so update rates reflect the
//! solver-limited throughput rather than scheduler jitter.

use std::time::Instant;

use crate::acquisition::{AcquisitionConfig, FrameStream, Pacing, TrajectorySpec};
use crate::filter::build_demod;
use crate::igtlink::{encode_transform, pose_to_matrix, TransformMessage};
use crate::pipeline::config::PipelineConfig;
use crate::pipeline::report::{
    median, BenchmarkReport, GridAggregate, GridPointResult, GridReport, GridSpec,
    IterationStats, LatencyEntry, TrajectoryRun,
};
use crate::pipeline::PipelineError;
use crate::solver::{Pose5DOF, SolverError, SolverSession};

/// Default frame sizes for the latency sweep.
pub const DEFAULT_FRAME_SIZES: [usize; 5] = [250, 500, 1000, 2000, 5000];

fn bench_start_pose() -> Pose5DOF {
    Pose5DOF::new(-0.08, 0.0, 0.10, 0.3, 0.6)
}

fn run_trajectory(
    config: &PipelineConfig,
    acquisition: &AcquisitionConfig,
    trajectory: TrajectorySpec,
    seconds: f64,
    seed: u64,
) -> Result<TrajectoryRun, PipelineError> {
    let frames_total =
        ((seconds * acquisition.sample_rate / acquisition.frame_size as f64).ceil() as usize)
            .max(4);
    let demod = build_demod(
        &config.array.frequencies(),
        acquisition.frame_size,
        acquisition.sample_rate,
    )?;
    let mut session = SolverSession::new(
        config.array.clone(),
        config.sensor,
        config.solver.settings,
        config.solver.bounds,
    );
    let stream = FrameStream::new(
        config.array.clone(),
        config.sensor,
        *acquisition,
        trajectory,
        seed,
    )
    .with_reflection([-0.12, -0.12, 0.06], [0.12, 0.12, 0.20]);

    let mut iterations = Vec::new();
    let mut solve_ms = Vec::new();
    let mut processing_ms = Vec::new();
    let mut skipped = 0usize;
    let half_start = frames_total / 2;
    let mut half_clock: Option<Instant> = None;
    let mut half_solved = 0usize;

    for (index, frame) in stream.take(frames_total).enumerate() {
        let in_second_half = index >= half_start;
        if in_second_half && half_clock.is_none() {
            half_clock = Some(Instant::now());
        }
        let t0 = Instant::now();
        let measurement = demod.extract(&frame)?;
        let result = match session.solve(&measurement) {
            Ok(r) => r,
            Err(SolverError::NoConvergence) => {
                skipped += 1;
                continue;
            }
            Err(err) => return Err(err.into()),
        };
        let message = TransformMessage::new(
            &config.server.device_name,
            0,
            0,
            pose_to_matrix(&result.pose),
        );
        let _bytes = encode_transform(&message)?;
        let elapsed = t0.elapsed();

        if in_second_half {
            iterations.push(result.iterations);
            solve_ms.push(result.solve_time.as_secs_f64() * 1e3);
            processing_ms.push(elapsed.as_secs_f64() * 1e3);
            half_solved += 1;
        }
    }

    let half_elapsed = half_clock
        .map(|t| t.elapsed().as_secs_f64())
        .unwrap_or(f64::NAN);
    let median_processing = median(&processing_ms);
    Ok(TrajectoryRun {
        update_hz: half_solved as f64 / half_elapsed,
        median_instant_hz: 1e3 / median_processing,
        iterations: IterationStats::from_samples(&iterations),
        median_solve_ms: median(&solve_ms),
        median_processing_ms: median_processing,
        frames_solved: half_solved,
        frames_skipped: skipped,
    })
}

/// Latency/update-rate sweep over frame sizes, static and dynamic
/// trajectories.
pub fn bench_latency(
    config: &PipelineConfig,
    frame_sizes: &[usize],
    seconds_per_run: f64,
    seed: u64,
) -> Result<BenchmarkReport, PipelineError> {
    assert!(!frame_sizes.is_empty(), "frame_sizes must be non-empty");
    let mut entries = Vec::new();
    for &frame_size in frame_sizes {
        let acquisition = AcquisitionConfig {
            frame_size,
            pacing: Pacing::Unpaced,
            ..config.acquisition
        };
        let static_run = run_trajectory(
            config,
            &acquisition,
            TrajectorySpec::static_preset(bench_start_pose()),
            seconds_per_run,
            seed,
        )?;
        let dynamic_run = run_trajectory(
            config,
            &acquisition,
            TrajectorySpec::dynamic_preset(bench_start_pose()),
            seconds_per_run,
            seed.wrapping_add(1),
        )?;
        let acquisition_latency_ms = acquisition.acquisition_latency() * 1e3;
        entries.push(LatencyEntry {
            frame_size,
            acquisition_latency_ms,
            end_to_end_latency_ms: acquisition_latency_ms + static_run.median_processing_ms,
            static_update_hz: static_run.median_instant_hz,
            dynamic_update_hz: dynamic_run.median_instant_hz,
            static_run,
            dynamic_run,
        });
    }
    Ok(BenchmarkReport {
        sample_rate_hz: config.acquisition.sample_rate,
        seconds_per_run,
        seed,
        entries,
    })
}

/// The planar accuracy protocol: a square x-y grid at fixed height, many
/// acquisitions per point, cold-started across points.
pub fn bench_grid(
    config: &PipelineConfig,
    grid: &GridSpec,
    seed: u64,
) -> Result<GridReport, PipelineError> {
    let n = grid.points_per_side;
    if n == 0 || grid.repetitions == 0 {
        return Err(PipelineError::GridOutOfBounds(
            "grid needs at least one point and one repetition".into(),
        ));
    }
    let half_extent = (n as f64 - 1.0) / 2.0 * grid.spacing_m;
    let bounds = &config.solver.bounds;
    if -half_extent < bounds.lower[0]
        || half_extent > bounds.upper[0]
        || -half_extent < bounds.lower[1]
        || half_extent > bounds.upper[1]
        || grid.z_m < bounds.lower[2]
        || grid.z_m > bounds.upper[2]
    {
        return Err(PipelineError::GridOutOfBounds(format!(
            "grid extent +/-{half_extent} m at z = {} m exceeds solver bounds",
            grid.z_m
        )));
    }

    let demod = build_demod(
        &config.array.frequencies(),
        config.acquisition.frame_size,
        config.acquisition.sample_rate,
    )?;
    let acquisition = AcquisitionConfig {
        pacing: Pacing::Unpaced,
        ..config.acquisition
    };

    let mut points = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let x = (ix as f64 - (n as f64 - 1.0) / 2.0) * grid.spacing_m;
            let y = (iy as f64 - (n as f64 - 1.0) / 2.0) * grid.spacing_m;
            let truth = Pose5DOF::new(x, y, grid.z_m, 0.0, 0.0);
            // Cold across points: a fresh session per grid point. Warm starts
            // within a point are allowed.
            let mut session = SolverSession::new(
                config.array.clone(),
                config.sensor,
                config.solver.settings,
                config.solver.bounds,
            );
            let mut positions = Vec::with_capacity(grid.repetitions);
            for rep in 0..grid.repetitions {
                let frame_seed = seed
                    .wrapping_add((iy * n + ix) as u64 * 1_000_003)
                    .wrapping_add(rep as u64);
                let frame = crate::acquisition::synth_frame(
                    &config.array,
                    &truth,
                    &config.sensor,
                    &acquisition,
                    frame_seed,
                )?;
                let measurement = demod.extract(&frame)?;
                let result = session.solve(&measurement)?;
                positions.push(result.pose.position());
            }
            let mean = positions.iter().sum::<nalgebra::Vector3<f64>>()
                / positions.len() as f64;
            let truth_pos = truth.position();
            let single_rms = (positions
                .iter()
                .map(|p| (p - truth_pos).norm_squared())
                .sum::<f64>()
                / positions.len() as f64)
                .sqrt();
            points.push(GridPointResult {
                truth_mm: [x * 1e3, y * 1e3, grid.z_m * 1e3],
                mean_mm: [mean.x * 1e3, mean.y * 1e3, mean.z * 1e3],
                mean_error_mm: (mean - truth_pos).norm() * 1e3,
                single_acquisition_rms_mm: single_rms * 1e3,
                solves: positions.len(),
            });
        }
    }

    let mut report = GridReport {
        grid: grid.clone(),
        noise_sigma: config.acquisition.noise_sigma,
        seed,
        points,
        aggregate: GridAggregate {
            max_error_mm: 0.0,
            min_error_mm: 0.0,
            rms_error_mm: 0.0,
            std_error_mm: 0.0,
            single_acquisition_rms_mm: 0.0,
        },
    };
    report.aggregate = report.recompute_aggregate();
    Ok(report)
}
