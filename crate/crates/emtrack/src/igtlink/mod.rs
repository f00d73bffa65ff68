//! OpenIGTLink output stage: TRANSFORM message encoding and the TCP
//! broadcast server navigation clients connect to.

pub mod crc64;
mod message;
mod server;

pub use message::{
    decode_transform, encode_transform, pose_to_matrix, TransformMessage, WireError, BODY_SIZE,
    HEADER_SIZE, MAX_DEVICE_NAME, MESSAGE_SIZE, PROTOCOL_VERSION, TYPE_NAME,
};
pub use server::{IgtServer, ServerError, DEFAULT_PORT};
