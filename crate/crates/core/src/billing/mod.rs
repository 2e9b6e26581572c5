//! Priced billing logs: compression, plaintext layout, sealing with
//! AES-256-GCM, and the node-to-collector wire frame.

mod codec;
mod frame;
mod log;
mod meter;
mod seal;

pub use codec::{compress, decompress};
pub use frame::{
    Ack, AckStatus, FrameHeader, WireFrame, ACK_LEN, FRAME_HEADER_LEN, FRAME_MAGIC, FRAME_VERSION, MAX_PAYLOAD,
};
pub use log::{
    encode_plaintext, parse_plaintext, LogBuilder, LogHeader, LogStream, StreamId, DEFAULT_MAX_SAMPLES, LOG_HEADER_LEN,
    LOG_MAGIC, LOG_VERSION,
};
pub use meter::GpuMeter;
pub use seal::{decrypt_log, seal_plaintext, LogKey, SealedLog, NONCE_LEN, TAG_LEN};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BillingError {
    #[error("sampling period must be positive")]
    BadPeriod,
    #[error("log is sealed")]
    Sealed,
    #[error("log is full ({max} samples)")]
    LogFull { max: u32 },
    #[error("charged amount overflows")]
    AmountOverflow,
    #[error("authentication failed")]
    AuthFailure,
    #[error("malformed log: {0}")]
    Malformed(&'static str),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversize(usize),
}
