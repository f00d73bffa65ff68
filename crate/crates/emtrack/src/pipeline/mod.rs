//! Orchestration: configuration loading, the live tracking loop, and the
//! latency and accuracy benchmark protocols.

mod bench;
pub mod config;
mod report;
mod tracking;

pub use bench::{bench_grid, bench_latency, DEFAULT_FRAME_SIZES};
pub use config::{load_config, parse_config, ConfigError, PipelineConfig, ServerConfig, SolverConfig};
pub use report::{
    median, BenchmarkReport, GridAggregate, GridPointResult, GridReport, GridSpec,
    IterationStats, LatencyEntry, TrajectoryRun,
};
pub use tracking::{run_tracking, TrackingStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Acquisition(#[from] crate::acquisition::AcquisitionError),
    #[error(transparent)]
    Filter(#[from] crate::filter::FilterError),
    #[error(transparent)]
    Solver(#[from] crate::solver::SolverError),
    #[error(transparent)]
    Server(#[from] crate::igtlink::ServerError),
    #[error(transparent)]
    Wire(#[from] crate::igtlink::WireError),
    #[error("grid out of bounds: {0}")]
    GridOutOfBounds(String),
}
