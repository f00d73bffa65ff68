//! Magnetic field model of the transmitter array.
//!
//! Each transmitter coil is modelled as a point magnetic dipole, which is fast
//! to evaluate and smooth everywhere outside the singularity guard radius. A
//! Biot-Savart integrator over the physical current loop is provided as a slow
//! numerical reference for validating the dipole model at tracking distances.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::Pose5DOF;

/// Vacuum permeability, exact SI definition at the precision relevant here.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Points closer than this to a coil center (or its wire path) are rejected.
pub const SINGULARITY_GUARD_M: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("evaluation point within {guard} m of coil {coil}", guard = SINGULARITY_GUARD_M)]
    SingularPoint { coil: usize },
    #[error("coil {coil}: {reason}")]
    InvalidCoil { coil: usize, reason: String },
    #[error("transmitter array: {0}")]
    InvalidArray(String),
}

/// One transmitter coil: dipole parameters plus the loop radius used by the
/// Biot-Savart reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilSpec {
    /// 0-based index within the array.
    pub id: usize,
    /// Coil center, meters.
    pub center: [f64; 3],
    /// Dipole moment direction, unit vector.
    pub axis: [f64; 3],
    /// Aggregate moment magnitude N_t * I * A_t, A m^2.
    pub moment_magnitude: f64,
    /// Drive frequency, Hz.
    pub frequency: f64,
    /// Physical loop radius, meters. Only the Biot-Savart reference uses it.
    pub loop_radius: f64,
    /// Per-coil calibration scale, dimensionless.
    #[serde(default = "default_calibration_scale")]
    pub calibration_scale: f64,
}

fn default_calibration_scale() -> f64 {
    1.0
}

impl CoilSpec {
    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn axis_vec(&self) -> Vector3<f64> {
        Vector3::from(self.axis)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let err = |reason: &str| FieldError::InvalidCoil {
            coil: self.id,
            reason: reason.to_string(),
        };
        if (self.axis_vec().norm() - 1.0).abs() > 1e-12 {
            return Err(err("axis must be a unit vector"));
        }
        if !(self.moment_magnitude > 0.0) {
            return Err(err("moment_magnitude must be > 0"));
        }
        if !(self.frequency > 0.0) {
            return Err(err("frequency must be > 0"));
        }
        if !(self.loop_radius > 0.0) {
            return Err(err("loop_radius must be > 0"));
        }
        if !self.calibration_scale.is_finite() {
            return Err(err("calibration_scale must be finite"));
        }
        Ok(())
    }
}

/// Ordered set of transmitter coils.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterArray {
    pub coils: Vec<CoilSpec>,
}

impl TransmitterArray {
    pub fn len(&self) -> usize {
        self.coils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coils.is_empty()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.coils.iter().map(|c| c.frequency).collect()
    }

    /// At least 5 coils (one residual per unknown), ids 0..K-1 in order,
    /// pairwise-distinct frequencies, each coil individually valid.
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.coils.len() < 5 {
            return Err(FieldError::InvalidArray(format!(
                "need at least 5 coils, got {}",
                self.coils.len()
            )));
        }
        for (k, coil) in self.coils.iter().enumerate() {
            if coil.id != k {
                return Err(FieldError::InvalidArray(format!(
                    "coil ids must be 0..K-1 in order; index {k} has id {}",
                    coil.id
                )));
            }
            coil.validate()?;
        }
        for i in 0..self.coils.len() {
            for j in (i + 1)..self.coils.len() {
                if self.coils[i].frequency == self.coils[j].frequency {
                    return Err(FieldError::InvalidArray(format!(
                        "coils {i} and {j} share frequency {} Hz",
                        self.coils[i].frequency
                    )));
                }
            }
        }
        Ok(())
    }

    /// The default planar generator: 8 coils on the z = 0 plane at the 3x3
    /// grid positions (excluding the center), all axes +z, moment 0.5 A m^2,
    /// frequencies 20 kHz + 2 kHz * k.
    pub fn default_planar() -> Self {
        let positions: [(f64, f64); 8] = [
            (-0.07, -0.07),
            (-0.07, 0.0),
            (-0.07, 0.07),
            (0.0, -0.07),
            (0.0, 0.07),
            (0.07, -0.07),
            (0.07, 0.0),
            (0.07, 0.07),
        ];
        let coils = positions
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| CoilSpec {
                id: k,
                center: [x, y, 0.0],
                axis: [0.0, 0.0, 1.0],
                moment_magnitude: 0.5,
                frequency: 20_000.0 + 2_000.0 * k as f64,
                loop_radius: 0.01,
                calibration_scale: 1.0,
            })
            .collect();
        TransmitterArray { coils }
    }
}

impl Default for TransmitterArray {
    fn default() -> Self {
        Self::default_planar()
    }
}

/// Magnetic flux density at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldVector {
    /// [B_x, B_y, B_z], tesla.
    pub b: Vector3<f64>,
    /// Evaluation point, meters.
    pub at: Vector3<f64>,
}

/// Sensing coil parameters. The sensor normal comes from the pose.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    /// Effective area times turns, N_s * A_s, m^2.
    #[serde(default = "default_turns_area")]
    pub turns_area: f64,
}

fn default_turns_area() -> f64 {
    2.5e-5
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec { turns_area: 2.5e-5 }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.turns_area > 0.0) {
            return Err(FieldError::InvalidArray(
                "sensor turns_area must be > 0".to_string(),
            ));
        }
        Ok(())
    }
}

/// Point-dipole flux density of one coil at `p`.
///
/// B(p) = (mu0 / 4 pi) * (3 (m . r_hat) r_hat - m) / |r|^3 with
/// r = p - center and m = moment_magnitude * axis.
pub fn dipole_field(coil: &CoilSpec, p: Vector3<f64>) -> Result<FieldVector, FieldError> {
    let r = p - coil.center_vec();
    let dist = r.norm();
    if dist <= SINGULARITY_GUARD_M {
        return Err(FieldError::SingularPoint { coil: coil.id });
    }
    let r_hat = r / dist;
    let m = coil.moment_magnitude * coil.axis_vec();
    let b = (MU_0 / (4.0 * std::f64::consts::PI)) * (3.0 * m.dot(&r_hat) * r_hat - m)
        / (dist * dist * dist);
    Ok(FieldVector { b, at: p })
}

/// Biot-Savart field of the physical loop, summed over straight segments.
///
/// The loop carries I = moment_magnitude / (pi * loop_radius^2) so that its
/// dipole moment matches the coil spec. Slow by design; used as the reference
/// the dipole model is validated against.
pub fn biot_savart_field(
    coil: &CoilSpec,
    p: Vector3<f64>,
    segments: usize,
) -> Result<FieldVector, FieldError> {
    assert!(segments >= 64, "need at least 64 segments");
    let a = coil.loop_radius;
    let current = coil.moment_magnitude / (std::f64::consts::PI * a * a);
    let center = coil.center_vec();
    let normal = coil.axis_vec();

    // Orthonormal frame (u, v, normal) spanning the loop plane.
    let u = orthogonal_unit(&normal);
    let v = normal.cross(&u);

    let mut b = Vector3::zeros();
    let dphi = 2.0 * std::f64::consts::PI / segments as f64;
    for s in 0..segments {
        // Midpoint rule over the polygonal approximation of the loop.
        let phi0 = s as f64 * dphi;
        let phi1 = phi0 + dphi;
        let p0 = center + a * (phi0.cos() * u + phi0.sin() * v);
        let p1 = center + a * (phi1.cos() * u + phi1.sin() * v);
        let mid = 0.5 * (p0 + p1);
        let dl = p1 - p0;
        let r = p - mid;
        let dist = r.norm();
        if dist <= SINGULARITY_GUARD_M {
            return Err(FieldError::SingularPoint { coil: coil.id });
        }
        b += dl.cross(&r) / (dist * dist * dist);
    }
    b *= MU_0 * current / (4.0 * std::f64::consts::PI);
    Ok(FieldVector { b, at: p })
}

fn orthogonal_unit(n: &Vector3<f64>) -> Vector3<f64> {
    let trial = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    n.cross(&trial).normalize()
}

/// Sensor normal from the 5-DOF pose angles: yaw theta about +z, pitch phi
/// measured from +z.
pub fn sensor_normal(pose: &Pose5DOF) -> Vector3<f64> {
    let (st, ct) = pose.theta.sin_cos();
    let (sp, cp) = pose.phi.sin_cos();
    Vector3::new(ct * sp, st * sp, cp)
}

/// Predicted signed demodulated amplitude for every coil at the given pose.
///
/// V_k = omega_k * turns_area * g_k * (B_k(p) . n_hat), volts.
pub fn forward_model(
    array: &TransmitterArray,
    pose: &Pose5DOF,
    sensor: &SensorSpec,
) -> Result<Vec<f64>, FieldError> {
    let n_hat = sensor_normal(pose);
    let p = pose.position();
    array
        .coils
        .iter()
        .map(|coil| {
            let field = dipole_field(coil, p)?;
            let omega = 2.0 * std::f64::consts::PI * coil.frequency;
            Ok(omega * sensor.turns_area * coil.calibration_scale * field.b.dot(&n_hat))
        })
        .collect()
}
