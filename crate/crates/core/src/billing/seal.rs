use alloc::vec::Vec;
use core::fmt;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce};

use super::{parse_plaintext, BillingError, LogHeader};
use crate::telemetry::Sample;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// 256-bit per-customer log key.
#[derive(Clone, PartialEq, Eq)]
pub struct LogKey([u8; 32]);

impl LogKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    fn cipher(&self) -> Aes256Gcm {
        Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&self.0))
    }
}

impl fmt::Debug for LogKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LogKey(..)")
    }
}

/// An encrypted log: nonce plus ciphertext with the GCM tag appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedLog {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

impl SealedLog {
    pub fn encoded_len(&self) -> usize {
        NONCE_LEN + self.ciphertext.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, BillingError> {
        if b.len() < NONCE_LEN + TAG_LEN {
            return Err(BillingError::Truncated {
                need: NONCE_LEN + TAG_LEN,
                have: b.len(),
            });
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&b[..NONCE_LEN]);
        Ok(Self {
            nonce,
            ciphertext: b[NONCE_LEN..].to_vec(),
        })
    }
}

/// Nonce layout: log_seq (8, big-endian) ‖ gpu_id (1) ‖ salt (3).
pub fn seal_plaintext(plaintext: &[u8], key: &LogKey, log_seq: u64, gpu_id: u8, salt: [u8; 3]) -> SealedLog {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..8].copy_from_slice(&log_seq.to_be_bytes());
    nonce[8] = gpu_id;
    nonce[9..].copy_from_slice(&salt);
    let ciphertext = key
        .cipher()
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("in-memory AES-GCM encryption cannot fail");
    SealedLog { nonce, ciphertext }
}

/// Authenticates and decrypts a sealed log, then parses it.
pub fn decrypt_log(sealed: &SealedLog, key: &LogKey) -> Result<(LogHeader, Vec<Sample>), BillingError> {
    let plaintext = key
        .cipher()
        .decrypt(Nonce::from_slice(&sealed.nonce), sealed.ciphertext.as_slice())
        .map_err(|_| BillingError::AuthFailure)?;
    parse_plaintext(&plaintext)
}
