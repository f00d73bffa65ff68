//! 5-DOF pose recovery by bounded nonlinear least squares.
//!
//! The residual vector compares the forward field model against the
//! demodulated per-coil amplitudes; a damped Levenberg-Marquardt loop with
//! componentwise clamping keeps iterates inside the configured tracking
//! volume. Warm starting from the previous pose is the fast path; a lattice
//! multi-start is the fallback.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldmodel::{forward_model, FieldError, SensorSpec, TransmitterArray};
use crate::filter::SpectralMeasurement;

/// Measurements with every amplitude below this are pure noise; refuse to
/// solve them.
pub const DEGENERACY_THRESHOLD_V: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("all measured amplitudes below {DEGENERACY_THRESHOLD_V} V")]
    DegenerateMeasurement,
    #[error("no start converged")]
    NoConvergence,
    #[error("damped normal equations singular beyond lambda = 1e12")]
    NumericalBreakdown,
    #[error("measurement length {got} does not match array size {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Position plus sensor-axis yaw/pitch. Canonical form keeps the sensor
/// normal in the +z hemisphere: phi in [0, pi/2], theta in [-pi, pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose5DOF {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Yaw: azimuth about +z, radians.
    pub theta: f64,
    /// Pitch: inclination from +z, radians.
    pub phi: f64,
}

impl Pose5DOF {
    pub fn new(x: f64, y: f64, z: f64, theta: f64, phi: f64) -> Self {
        Pose5DOF { x, y, z, theta, phi }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.x, self.y, self.z, self.theta, self.phi]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Pose5DOF::new(a[0], a[1], a[2], a[3], a[4])
    }
}

fn wrap_angle(t: f64) -> f64 {
    // Into [-pi, pi).
    let tau = std::f64::consts::TAU;
    let mut w = (t + std::f64::consts::PI).rem_euclid(tau) - std::f64::consts::PI;
    if w >= std::f64::consts::PI {
        w = -std::f64::consts::PI;
    }
    w
}

/// Map a pose onto the canonical hemisphere. A symmetric sensor coil cannot
/// distinguish n from -n, so (theta, phi) and (theta + pi, pi - phi) describe
/// the same physical measurement; the canonical pick has phi in [0, pi/2].
pub fn canonicalize(pose: &Pose5DOF) -> Pose5DOF {
    if pose.phi >= 0.0
        && pose.phi <= std::f64::consts::FRAC_PI_2
        && pose.theta >= -std::f64::consts::PI
        && pose.theta < std::f64::consts::PI
    {
        return *pose;
    }
    let mut theta = pose.theta;
    let mut phi = wrap_angle(pose.phi);
    if phi < 0.0 {
        theta += std::f64::consts::PI;
        phi = -phi;
    }
    if phi > std::f64::consts::FRAC_PI_2 {
        theta += std::f64::consts::PI;
        phi = std::f64::consts::PI - phi;
    }
    Pose5DOF::new(pose.x, pose.y, pose.z, wrap_angle(theta), phi)
}

/// Box constraints on [x, y, z, theta, phi].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    #[serde(default = "default_lower")]
    pub lower: [f64; 5],
    #[serde(default = "default_upper")]
    pub upper: [f64; 5],
}

fn default_lower() -> [f64; 5] {
    Bounds::default().lower
}

fn default_upper() -> [f64; 5] {
    Bounds::default().upper
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lower: [-0.25, -0.25, 0.02, -std::f64::consts::PI, 0.0],
            upper: [0.25, 0.25, 0.30, std::f64::consts::PI, std::f64::consts::FRAC_PI_2],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), String> {
        for i in 0..5 {
            if !(self.lower[i] < self.upper[i]) {
                return Err(format!(
                    "bounds component {i}: lower {} must be < upper {}",
                    self.lower[i], self.upper[i]
                ));
            }
        }
        Ok(())
    }

    pub fn clamp(&self, pose: &Pose5DOF) -> Pose5DOF {
        let mut a = pose.to_array();
        // theta is periodic: when its bounds span the full circle, reduce
        // modulo 2 pi instead of pinning at the box edge, so that descent
        // paths crossing +/- pi are not blocked by an artificial boundary.
        if self.lower[3] <= -std::f64::consts::PI && self.upper[3] >= std::f64::consts::PI {
            a[3] = wrap_angle(a[3]);
        }
        for i in 0..5 {
            a[i] = a[i].clamp(self.lower[i], self.upper[i]);
        }
        Pose5DOF::from_array(a)
    }

    pub fn contains(&self, pose: &Pose5DOF) -> bool {
        let a = pose.to_array();
        (0..5).all(|i| a[i] >= self.lower[i] && a[i] <= self.upper[i])
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// On the sum of squared normalized residuals.
    pub residual_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Central finite-difference step, meters for positions and radians for
    /// angles.
    pub fd_step: f64,
    /// Number of fallback start positions; each is tried with three azimuths.
    pub multistart_grid: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 300,
            residual_tolerance: 1e-12,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            fd_step: 1e-6,
            multistart_grid: 27,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations < 1 {
            return Err("max_iterations must be >= 1".into());
        }
        for (name, v) in [
            ("residual_tolerance", self.residual_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("initial_damping", self.initial_damping),
            ("fd_step", self.fd_step),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be > 0"));
            }
        }
        if self.multistart_grid < 1 {
            return Err("multistart_grid must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveResult {
    pub pose: Pose5DOF,
    /// sqrt of the sum of squared normalized residuals.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warm_started: bool,
    pub solve_time: Duration,
}

/// Normalized residual vector: the model prediction and the measurement are
/// each scaled to unit Euclidean norm before differencing,
/// f_i = model_i / ||model|| - sigma * measured_i / ||measured||,
/// with sigma = sign(<model, measured>).
///
/// Two-sided normalization makes both the tolerances and the fitted pose
/// independent of the overall measurement amplitude (sensor gain), while
/// residuals are still exactly zero when the measurement came from the model.
/// The sign factor cancels a global polarity flip: a sensor wound or wired
/// the opposite way negates every channel at once, and a symmetric pickup
/// coil cannot distinguish the two, so the fit must not either.
pub fn residuals(
    pose: &Pose5DOF,
    measured: &[f64],
    array: &TransmitterArray,
    sensor: &SensorSpec,
) -> Result<DVector<f64>, SolverError> {
    if measured.len() != array.len() {
        return Err(SolverError::LengthMismatch {
            expected: array.len(),
            got: measured.len(),
        });
    }
    measurement_scale(measured)?;
    let meas_norm = measured.iter().map(|y| y * y).sum::<f64>().sqrt();
    let model = forward_model(array, pose, sensor)?;
    let model_norm = model
        .iter()
        .map(|m| m * m)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let dot: f64 = model.iter().zip(measured).map(|(m, y)| m * y).sum();
    let sigma = if dot < 0.0 { -1.0 } else { 1.0 };
    Ok(DVector::from_iterator(
        measured.len(),
        model
            .iter()
            .zip(measured)
            .map(|(m, y)| m / model_norm - sigma * y / meas_norm),
    ))
}

fn measurement_scale(measured: &[f64]) -> Result<f64, SolverError> {
    let max_abs = measured.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs < DEGENERACY_THRESHOLD_V {
        return Err(SolverError::DegenerateMeasurement);
    }
    Ok(max_abs)
}

/// Central finite-difference Jacobian of the residuals, K x 5.
pub fn jacobian(
    pose: &Pose5DOF,
    measured: &[f64],
    array: &TransmitterArray,
    sensor: &SensorSpec,
    settings: &SolverSettings,
) -> Result<DMatrix<f64>, SolverError> {
    fd_jacobian(
        &|p: &Pose5DOF| residuals(p, measured, array, sensor),
        pose,
        settings.fd_step,
    )
}

fn fd_jacobian<F>(f: &F, pose: &Pose5DOF, step: f64) -> Result<DMatrix<f64>, SolverError>
where
    F: Fn(&Pose5DOF) -> Result<DVector<f64>, SolverError>,
{
    let base = pose.to_array();
    let mut columns = Vec::with_capacity(5);
    for j in 0..5 {
        let mut hi = base;
        let mut lo = base;
        hi[j] += step;
        lo[j] -= step;
        let f_hi = f(&Pose5DOF::from_array(hi))?;
        let f_lo = f(&Pose5DOF::from_array(lo))?;
        columns.push((f_hi - f_lo) / (2.0 * step));
    }
    let rows = columns[0].len();
    Ok(DMatrix::from_fn(rows, 5, |i, j| columns[j][i]))
}

/// Damped LM iteration with componentwise clamping into `bounds`.
///
/// Accepted steps shrink the damping, rejected steps grow it; the loop stops
/// on the residual or step tolerance, or when max_iterations is exhausted.
pub fn levenberg_marquardt<F>(
    init: &Pose5DOF,
    residual_fn: &F,
    settings: &SolverSettings,
    bounds: &Bounds,
) -> Result<SolveResult, SolverError>
where
    F: Fn(&Pose5DOF) -> Result<DVector<f64>, SolverError>,
{
    let started = Instant::now();
    let mut x = bounds.clamp(init);
    let mut f = residual_fn(&x)?;
    let mut cost = f.norm_squared();
    let mut lambda = settings.initial_damping;
    let mut iterations = 0;
    let mut converged = cost <= settings.residual_tolerance;

    while !converged && iterations < settings.max_iterations {
        iterations += 1;
        let jac = fd_jacobian(residual_fn, &x, settings.fd_step)?;
        let jtj = jac.transpose() * &jac;
        let gradient = jac.transpose() * &f;
        let max_diag = (0..5).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        if max_diag <= 0.0 || !max_diag.is_finite() {
            return Err(SolverError::NumericalBreakdown);
        }

        let mut accepted = false;
        while lambda <= 1e12 {
            let mut damped = jtj.clone();
            for i in 0..5 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= settings.damping_up;
                continue;
            };
            let delta = chol.solve(&(-&gradient));
            let mut candidate = x.to_array();
            for i in 0..5 {
                candidate[i] += delta[i];
            }
            let candidate = bounds.clamp(&Pose5DOF::from_array(candidate));
            let f_new = residual_fn(&candidate)?;
            let cost_new = f_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let step_norm = {
                    let a = x.to_array();
                    let b = candidate.to_array();
                    (0..5).map(|i| (b[i] - a[i]).powi(2)).sum::<f64>().sqrt()
                };
                x = candidate;
                f = f_new;
                cost = cost_new;
                lambda = (lambda * settings.damping_down).max(1e-15);
                accepted = true;
                if cost <= settings.residual_tolerance
                    || step_norm <= settings.step_tolerance
                {
                    converged = true;
                }
                break;
            }
            lambda *= settings.damping_up;
        }
        if !accepted {
            // No downhill step exists at any damping: stationary (possibly at
            // a bound). Converged only if the residual tolerance is met.
            converged = cost <= settings.residual_tolerance;
            break;
        }
    }

    Ok(SolveResult {
        pose: x,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        warm_started: false,
        solve_time: started.elapsed(),
    })
}

/// Lattice of fallback starts: an interior position grid crossed with three
/// azimuths at phi = pi/4. Every azimuth is tried at every position — cheaper
/// schemes that cycle one azimuth per position miss orientation basins for
/// poses near the volume edges.
fn multistart_points(bounds: &Bounds, count: usize) -> Vec<Pose5DOF> {
    let thetas = [0.0, 2.0 * std::f64::consts::FRAC_PI_3, -2.0 * std::f64::consts::FRAC_PI_3];
    let n = (count as f64).cbrt().ceil() as usize;
    let n = n.max(1);
    let frac = |i: usize| (i as f64 + 1.0) / (n as f64 + 1.0);
    let mut positions = Vec::with_capacity(count);
    'outer: for iz in 0..n {
        for iy in 0..n {
            for ix in 0..n {
                positions.push([
                    bounds.lower[0] + frac(ix) * (bounds.upper[0] - bounds.lower[0]),
                    bounds.lower[1] + frac(iy) * (bounds.upper[1] - bounds.lower[1]),
                    bounds.lower[2] + frac(iz) * (bounds.upper[2] - bounds.lower[2]),
                ]);
                if positions.len() == count {
                    break 'outer;
                }
            }
        }
    }
    let mut starts = Vec::with_capacity(count * thetas.len());
    for p in positions {
        for theta in thetas {
            starts.push(Pose5DOF::new(
                p[0],
                p[1],
                p[2],
                theta,
                std::f64::consts::FRAC_PI_4,
            ));
        }
    }
    starts
}

/// Solve one measurement, preferring the warm start and falling back to the
/// multi-start lattice. The returned pose is canonical.
pub fn solve_pose(
    measurement: &SpectralMeasurement,
    warm_start: Option<Pose5DOF>,
    array: &TransmitterArray,
    sensor: &SensorSpec,
    settings: &SolverSettings,
    bounds: &Bounds,
) -> Result<SolveResult, SolverError> {
    let started = Instant::now();
    let measured = measurement.amplitudes.as_slice();
    measurement_scale(measured)?;
    let residual_fn = |p: &Pose5DOF| residuals(p, measured, array, sensor);

    if let Some(warm) = warm_start {
        let mut result = levenberg_marquardt(&warm, &residual_fn, settings, bounds)?;
        if result.converged && bounds.contains(&result.pose) {
            result.pose = canonicalize(&result.pose);
            result.warm_started = true;
            result.solve_time = started.elapsed();
            return Ok(result);
        }
    }

    let mut best: Option<SolveResult> = None;
    let mut total_iterations = 0;
    for start in multistart_points(bounds, settings.multistart_grid) {
        let result = levenberg_marquardt(&start, &residual_fn, settings, bounds)?;
        total_iterations += result.iterations;
        if !result.converged {
            continue;
        }
        let better = best
            .as_ref()
            .map(|b| result.residual_norm < b.residual_norm)
            .unwrap_or(true);
        if better {
            let essentially_exact =
                result.residual_norm * result.residual_norm <= settings.residual_tolerance;
            best = Some(result);
            if essentially_exact {
                break;
            }
        }
    }
    let mut best = best.ok_or(SolverError::NoConvergence)?;
    best.pose = canonicalize(&best.pose);
    best.iterations = total_iterations;
    best.warm_started = false;
    best.solve_time = started.elapsed();
    Ok(best)
}

/// Owns the warm-start slot across consecutive frames. One session per
/// tracked sensor; not for concurrent use.
pub struct SolverSession {
    pub array: TransmitterArray,
    pub sensor: SensorSpec,
    pub settings: SolverSettings,
    pub bounds: Bounds,
    warm: Option<Pose5DOF>,
}

impl SolverSession {
    pub fn new(
        array: TransmitterArray,
        sensor: SensorSpec,
        settings: SolverSettings,
        bounds: Bounds,
    ) -> Self {
        SolverSession { array, sensor, settings, bounds, warm: None }
    }

    pub fn warm_start(&self) -> Option<Pose5DOF> {
        self.warm
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, measurement: &SpectralMeasurement) -> Result<SolveResult, SolverError> {
        let result = solve_pose(
            measurement,
            self.warm,
            &self.array,
            &self.sensor,
            &self.settings,
            &self.bounds,
        )?;
        self.warm = Some(result.pose);
        Ok(result)
    }
}
