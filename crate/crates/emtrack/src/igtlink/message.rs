//! OpenIGTLink v1 TRANSFORM message encoding.
//!
//! Wire layout: a 58-byte big-endian header (version, type name, device name,
//! timestamp, body size, body CRC) followed by a 48-byte body of 12 IEEE-754
//! 32-bit floats: the rotation columns then the translation, millimeters.

use nalgebra::{Matrix3, Matrix4, Vector3};
use thiserror::Error;

use super::crc64::crc64;
use crate::fieldmodel::sensor_normal;
use crate::solver::Pose5DOF;

pub const HEADER_SIZE: usize = 58;
pub const BODY_SIZE: usize = 48;
pub const MESSAGE_SIZE: usize = HEADER_SIZE + BODY_SIZE;
pub const PROTOCOL_VERSION: u16 = 1;
pub const TYPE_NAME: &str = "TRANSFORM";
pub const MAX_DEVICE_NAME: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("device name longer than {MAX_DEVICE_NAME} bytes")]
    DeviceNameTooLong,
    #[error("device name must be ASCII")]
    DeviceNameNotAscii,
    #[error("message truncated: {got} bytes, need {need}")]
    Truncated { got: usize, need: usize },
    #[error("unsupported protocol version {0}")]
    BadVersion(u16),
    #[error("unexpected message type {0:?}")]
    BadType(String),
    #[error("body size {0} is not {BODY_SIZE}")]
    BadBodySize(u64),
    #[error("body CRC mismatch: header {header:#018x}, computed {computed:#018x}")]
    CrcMismatch { header: u64, computed: u64 },
    #[error("rotation block is not a proper rotation")]
    NotARotation,
}

/// A TRANSFORM message: device name, timestamp and a rigid 4x4 matrix with
/// millimeter translation.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMessage {
    pub device_name: String,
    /// Seconds since the Unix epoch.
    pub timestamp_seconds: u32,
    /// Binary fraction of a second (value / 2^32 seconds).
    pub timestamp_fraction: u32,
    pub matrix: Matrix4<f64>,
}

impl TransformMessage {
    pub fn new(
        device_name: &str,
        timestamp_seconds: u32,
        timestamp_fraction: u32,
        matrix: Matrix4<f64>,
    ) -> Self {
        TransformMessage {
            device_name: device_name.to_string(),
            timestamp_seconds,
            timestamp_fraction,
            matrix,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation_mm(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.device_name.len() > MAX_DEVICE_NAME {
            return Err(WireError::DeviceNameTooLong);
        }
        if !self.device_name.is_ascii() {
            return Err(WireError::DeviceNameNotAscii);
        }
        let r = self.rotation();
        let orth = (r.transpose() * r - Matrix3::identity()).norm();
        if orth > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(WireError::NotARotation);
        }
        Ok(())
    }
}

/// Build the 4x4 matrix for a canonical pose: translation in millimeters and
/// the minimal rotation taking +z onto the sensor normal. Roll about the
/// sensor axis is unobservable for a symmetric coil, so the minimal rotation
/// pins it deterministically; the third column of R equals the normal.
pub fn pose_to_matrix(pose: &Pose5DOF) -> Matrix4<f64> {
    let n = sensor_normal(pose);
    let c = n.z;
    let v = Vector3::z().cross(&n);
    let rotation = if v.norm() < 1e-15 {
        if c > 0.0 {
            Matrix3::identity()
        } else {
            // n = -z; excluded by canonicalization but kept total: rotate by
            // pi about x.
            Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
        }
    } else {
        let vx = skew(&v);
        Matrix3::identity() + vx + vx * vx / (1.0 + c)
    };
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&(1000.0 * pose.position()));
    m
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Encode to the 106-byte wire form.
pub fn encode_transform(msg: &TransformMessage) -> Result<Vec<u8>, WireError> {
    if msg.device_name.len() > MAX_DEVICE_NAME {
        return Err(WireError::DeviceNameTooLong);
    }
    if !msg.device_name.is_ascii() {
        return Err(WireError::DeviceNameNotAscii);
    }

    let mut body = Vec::with_capacity(BODY_SIZE);
    for col in 0..4 {
        for row in 0..3 {
            body.extend_from_slice(&(msg.matrix[(row, col)] as f32).to_be_bytes());
        }
    }
    debug_assert_eq!(body.len(), BODY_SIZE);

    let mut out = Vec::with_capacity(MESSAGE_SIZE);
    out.extend_from_slice(&PROTOCOL_VERSION.to_be_bytes());
    let mut type_name = [0u8; 12];
    type_name[..TYPE_NAME.len()].copy_from_slice(TYPE_NAME.as_bytes());
    out.extend_from_slice(&type_name);
    let mut device = [0u8; MAX_DEVICE_NAME];
    device[..msg.device_name.len()].copy_from_slice(msg.device_name.as_bytes());
    out.extend_from_slice(&device);
    let timestamp =
        ((msg.timestamp_seconds as u64) << 32) | msg.timestamp_fraction as u64;
    out.extend_from_slice(&timestamp.to_be_bytes());
    out.extend_from_slice(&(BODY_SIZE as u64).to_be_bytes());
    out.extend_from_slice(&crc64(&body).to_be_bytes());
    out.extend_from_slice(&body);
    debug_assert_eq!(out.len(), MESSAGE_SIZE);
    Ok(out)
}

/// Decode a wire message, verifying the header fields and body CRC. Accepts
/// untrusted input.
pub fn decode_transform(bytes: &[u8]) -> Result<TransformMessage, WireError> {
    if bytes.len() < HEADER_SIZE {
        return Err(WireError::Truncated { got: bytes.len(), need: HEADER_SIZE });
    }
    let version = u16::from_be_bytes([bytes[0], bytes[1]]);
    if version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let type_name = trim_padded(&bytes[2..14]);
    if type_name != TYPE_NAME.as_bytes() {
        return Err(WireError::BadType(
            String::from_utf8_lossy(type_name).into_owned(),
        ));
    }
    let device_name = String::from_utf8_lossy(trim_padded(&bytes[14..34])).into_owned();
    let timestamp = u64::from_be_bytes(bytes[34..42].try_into().unwrap());
    let body_size = u64::from_be_bytes(bytes[42..50].try_into().unwrap());
    if body_size != BODY_SIZE as u64 {
        return Err(WireError::BadBodySize(body_size));
    }
    let header_crc = u64::from_be_bytes(bytes[50..58].try_into().unwrap());
    if bytes.len() < MESSAGE_SIZE {
        return Err(WireError::Truncated { got: bytes.len(), need: MESSAGE_SIZE });
    }
    let body = &bytes[HEADER_SIZE..MESSAGE_SIZE];
    let computed = crc64(body);
    if computed != header_crc {
        return Err(WireError::CrcMismatch { header: header_crc, computed });
    }

    let mut matrix = Matrix4::identity();
    let mut offset = 0;
    for col in 0..4 {
        for row in 0..3 {
            let bits: [u8; 4] = body[offset..offset + 4].try_into().unwrap();
            matrix[(row, col)] = f32::from_be_bytes(bits) as f64;
            offset += 4;
        }
    }
    Ok(TransformMessage {
        device_name,
        timestamp_seconds: (timestamp >> 32) as u32,
        timestamp_fraction: timestamp as u32,
        matrix,
    })
}

fn trim_padded(bytes: &[u8]) -> &[u8] {
    let end = bytes.iter().position(|&b| b == 0).unwrap_or(bytes.len());
    &bytes[..end]
}
