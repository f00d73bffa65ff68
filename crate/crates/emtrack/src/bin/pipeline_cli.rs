//! Command-line front end: live tracking, the latency sweep, the accuracy
//! grid, and config utilities.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use emtrack::pipeline::{
    bench_grid, bench_latency, load_config, run_tracking, ConfigError, GridSpec, PipelineConfig,
    PipelineError, DEFAULT_FRAME_SIZES,
};

#[derive(Parser)]
#[command(name = "pipeline-cli", version, about = "Electromagnetic tracking pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the live tracking loop and stream poses over OpenIGTLink.
    Track(TrackArgs),
    /// Benchmark protocols.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Configuration utilities.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the server port.
    #[arg(long)]
    port: Option<u16>,
    /// Override the OpenIGTLink device name.
    #[arg(long)]
    device: Option<String>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Latency and update-rate sweep over acquisition frame sizes.
    Latency(LatencyArgs),
    /// Planar accuracy grid.
    Grid(GridArgs),
}

#[derive(Args)]
struct LatencyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated frame sizes.
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
    /// Simulated seconds per trajectory run.
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    /// Write the JSON report here.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Grid height above the transmitter plane, millimeters.
    #[arg(long, default_value_t = 70.0)]
    z_mm: f64,
    /// Grid size as NxN.
    #[arg(long, default_value = "7x7")]
    points: String,
    /// Position acquisitions per grid point.
    #[arg(long, default_value_t = 150)]
    reps: usize,
    /// Grid point spacing, millimeters.
    #[arg(long, default_value_t = 25.0)]
    spacing_mm: f64,
    /// Write the JSON report here.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Print the full default configuration as JSON.
    PrintDefault,
}

fn seed_from_env() -> u64 {
    std::env::var("EMTRACK_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| std::time::UNIX_EPOCH.elapsed().map(|d| d.as_nanos() as u64).unwrap_or(0))
}

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    INTERRUPTED.store(true, Ordering::Relaxed);
}

fn install_sigint_handler(flag: Arc<AtomicBool>) {
    unsafe {
        libc::signal(libc::SIGINT, on_sigint as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_sigint as *const () as libc::sighandler_t);
    }
    std::thread::spawn(move || loop {
        if INTERRUPTED.load(Ordering::Relaxed) {
            flag.store(true, Ordering::Relaxed);
            return;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    });
}

fn parse_points(spec: &str) -> Result<usize, String> {
    let parts: Vec<&str> = spec.split('x').collect();
    match parts.as_slice() {
        [a, b] if a == b => a.parse().map_err(|_| format!("bad grid size {spec:?}")),
        _ => Err(format!("grid size must be NxN, got {spec:?}")),
    }
}

fn run() -> Result<(), PipelineError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Track(args) => {
            let mut config = load_config(&args.config)?;
            if let Some(port) = args.port {
                config.server.port = port;
            }
            if let Some(device) = args.device {
                config.server.device_name = device;
            }
            config.validate()?;
            let shutdown = Arc::new(AtomicBool::new(false));
            install_sigint_handler(shutdown.clone());
            let stats = run_tracking(&config, seed_from_env(), shutdown, None)?;
            eprintln!(
                "shutdown: {} frames in, {} solved, {} skipped, {} dropped",
                stats.frames_in, stats.frames_solved, stats.frames_skipped, stats.frames_dropped
            );
            Ok(())
        }
        Command::Bench(BenchCommand::Latency(args)) => {
            let config = load_config(&args.config)?;
            let frames = args.frames.unwrap_or_else(|| DEFAULT_FRAME_SIZES.to_vec());
            let report = bench_latency(&config, &frames, args.seconds, seed_from_env())?;
            println!(
                "{:>10} {:>16} {:>16} {:>14} {:>14}",
                "frame", "acq lat (ms)", "e2e lat (ms)", "static (Hz)", "dynamic (Hz)"
            );
            for e in &report.entries {
                println!(
                    "{:>10} {:>16.2} {:>16.3} {:>14.0} {:>14.0}",
                    e.frame_size,
                    e.acquisition_latency_ms,
                    e.end_to_end_latency_ms,
                    e.static_update_hz,
                    e.dynamic_update_hz
                );
            }
            write_json(&args.out, &report)
        }
        Command::Bench(BenchCommand::Grid(args)) => {
            let config = load_config(&args.config)?;
            let points = parse_points(&args.points)
                .map_err(|m| PipelineError::GridOutOfBounds(m))?;
            let grid = GridSpec {
                points_per_side: points,
                spacing_m: args.spacing_mm * 1e-3,
                z_m: args.z_mm * 1e-3,
                repetitions: args.reps,
            };
            let report = bench_grid(&config, &grid, seed_from_env())?;
            println!(
                "grid {}x{} at z = {:.1} mm, {} reps/point, noise sigma {:.1e} V",
                points, points, args.z_mm, args.reps, report.noise_sigma
            );
            println!(
                "errors (mm): max {:.4}  min {:.4}  rms {:.4}  std {:.4}",
                report.aggregate.max_error_mm,
                report.aggregate.min_error_mm,
                report.aggregate.rms_error_mm,
                report.aggregate.std_error_mm
            );
            write_json(&args.out, &report)
        }
        Command::Config(ConfigCommand::PrintDefault) => {
            println!("{}", PipelineConfig::default().to_json_pretty());
            Ok(())
        }
    }
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|source| {
        PipelineError::Config(ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    })?;
    eprintln!("report written to {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(PipelineError::Config(err)) => {
            eprintln!("configuration error: {err}");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("fatal: {err}");
            ExitCode::from(2)
        }
    }
}
