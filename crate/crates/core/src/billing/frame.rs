use alloc::vec::Vec;

use super::{BillingError, SealedLog, StreamId};

pub const FRAME_MAGIC: u32 = 0x4147_4F52;
pub const FRAME_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 38;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
pub const ACK_LEN: usize = 24;
const ACK_MAGIC: [u8; 4] = *b"AACK";
const SEND_TS_LEN: usize = 8;

/// Fixed-size frame prefix. `payload_len` bytes follow it on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub stream: StreamId,
    pub log_seq: u64,
    pub payload_len: u32,
}

impl FrameHeader {
    pub fn to_bytes(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut b = [0u8; FRAME_HEADER_LEN];
        b[..4].copy_from_slice(&FRAME_MAGIC.to_be_bytes());
        b[4] = FRAME_VERSION;
        b[5..13].copy_from_slice(&self.stream.customer_id.to_be_bytes());
        b[13..21].copy_from_slice(&self.stream.rental_id.to_be_bytes());
        b[21..25].copy_from_slice(&self.stream.node_id.to_be_bytes());
        b[25] = self.stream.gpu_id;
        b[26..34].copy_from_slice(&self.log_seq.to_be_bytes());
        b[34..38].copy_from_slice(&self.payload_len.to_be_bytes());
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self, BillingError> {
        if b.len() < FRAME_HEADER_LEN {
            return Err(BillingError::Truncated {
                need: FRAME_HEADER_LEN,
                have: b.len(),
            });
        }
        let u32_at = |i: usize| u32::from_be_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_be_bytes(b[i..i + 8].try_into().unwrap());
        if u32_at(0) != FRAME_MAGIC {
            return Err(BillingError::BadMagic);
        }
        if b[4] != FRAME_VERSION {
            return Err(BillingError::BadVersion(b[4]));
        }
        let payload_len = u32_at(34);
        if payload_len as usize > MAX_PAYLOAD {
            return Err(BillingError::Oversize(payload_len as usize));
        }
        Ok(Self {
            stream: StreamId {
                customer_id: u64_at(5),
                rental_id: u64_at(13),
                node_id: u32_at(21),
                gpu_id: b[25],
            },
            log_seq: u64_at(26),
            payload_len,
        })
    }
}

/// A routed sealed log. The payload is the sender's timestamp (µs,
/// big-endian, not encrypted) followed by the sealed log bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub stream: StreamId,
    pub log_seq: u64,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn new(stream: StreamId, log_seq: u64, send_ts: u64, sealed: &SealedLog) -> Self {
        let mut payload = Vec::with_capacity(SEND_TS_LEN + sealed.encoded_len());
        payload.extend_from_slice(&send_ts.to_be_bytes());
        payload.extend_from_slice(&sealed.nonce);
        payload.extend_from_slice(&sealed.ciphertext);
        Self {
            stream,
            log_seq,
            payload,
        }
    }

    pub fn header(&self) -> FrameHeader {
        FrameHeader {
            stream: self.stream,
            log_seq: self.log_seq,
            payload_len: self.payload.len() as u32,
        }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, BillingError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(BillingError::Oversize(self.payload.len()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header().to_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes one frame from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), BillingError> {
        let h = FrameHeader::parse(bytes)?;
        let end = FRAME_HEADER_LEN + h.payload_len as usize;
        if bytes.len() < end {
            return Err(BillingError::Truncated {
                need: end,
                have: bytes.len(),
            });
        }
        Ok((Self::from_parts(h, bytes[FRAME_HEADER_LEN..end].to_vec()), end))
    }

    pub fn from_parts(header: FrameHeader, payload: Vec<u8>) -> Self {
        Self {
            stream: header.stream,
            log_seq: header.log_seq,
            payload,
        }
    }

    /// Splits the payload into the send timestamp and the sealed log.
    pub fn open_payload(&self) -> Result<(u64, SealedLog), BillingError> {
        if self.payload.len() < SEND_TS_LEN {
            return Err(BillingError::Truncated {
                need: SEND_TS_LEN,
                have: self.payload.len(),
            });
        }
        let ts = u64::from_be_bytes(self.payload[..SEND_TS_LEN].try_into().unwrap());
        Ok((ts, SealedLog::from_bytes(&self.payload[SEND_TS_LEN..])?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AckStatus {
    Stored = 0,
    Duplicate = 1,
    AuthFailure = 2,
    UnknownCustomer = 3,
    Mismatch = 4,
}

impl AckStatus {
    /// Positive acks let the sender drop its copy.
    pub fn is_positive(self) -> bool {
        matches!(self, Self::Stored | Self::Duplicate)
    }

    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Stored,
            1 => Self::Duplicate,
            2 => Self::AuthFailure,
            3 => Self::UnknownCustomer,
            4 => Self::Mismatch,
            _ => return None,
        })
    }
}

/// Collector reply: "AACK", node_id u32, gpu_id u8, log_seq u64, status u8,
/// zero padding to 24 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub node_id: u32,
    pub gpu_id: u8,
    pub log_seq: u64,
    pub status: AckStatus,
}

impl Ack {
    pub fn to_bytes(&self) -> [u8; ACK_LEN] {
        let mut b = [0u8; ACK_LEN];
        b[..4].copy_from_slice(&ACK_MAGIC);
        b[4..8].copy_from_slice(&self.node_id.to_be_bytes());
        b[8] = self.gpu_id;
        b[9..17].copy_from_slice(&self.log_seq.to_be_bytes());
        b[17] = self.status as u8;
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self, BillingError> {
        if b.len() < ACK_LEN {
            return Err(BillingError::Truncated {
                need: ACK_LEN,
                have: b.len(),
            });
        }
        if b[..4] != ACK_MAGIC {
            return Err(BillingError::BadMagic);
        }
        Ok(Self {
            node_id: u32::from_be_bytes(b[4..8].try_into().unwrap()),
            gpu_id: b[8],
            log_seq: u64::from_be_bytes(b[9..17].try_into().unwrap()),
            status: AckStatus::from_u8(b[17]).ok_or(BillingError::Malformed("unknown ack status"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn frame(seq: u64, n: usize) -> WireFrame {
        WireFrame {
            stream: StreamId {
                customer_id: 1,
                rental_id: 2,
                node_id: 3,
                gpu_id: 4,
            },
            log_seq: seq,
            payload: vec![seq as u8; n],
        }
    }

    #[test]
    fn layout_and_round_trip() {
        let f = frame(9, 5);
        let b = f.encode().unwrap();
        assert_eq!(&b[..5], &[0x41, 0x47, 0x4f, 0x52, 1]);
        assert_eq!(&b[34..38], &[0, 0, 0, 5]);
        assert_eq!(WireFrame::decode(&b).unwrap(), (f, 43));
    }

    #[test]
    fn errors() {
        let b = frame(1, 10).encode().unwrap();
        let mut bad = b.clone();
        bad[0] ^= 0xff;
        assert_eq!(WireFrame::decode(&bad), Err(BillingError::BadMagic));
        bad = b.clone();
        bad[4] = 9;
        assert_eq!(WireFrame::decode(&bad), Err(BillingError::BadVersion(9)));
        assert!(matches!(
            WireFrame::decode(&b[..b.len() - 1]),
            Err(BillingError::Truncated { .. })
        ));
        assert!(matches!(
            WireFrame::decode(&b[..20]),
            Err(BillingError::Truncated { .. })
        ));
        bad = b.clone();
        bad[34..38].copy_from_slice(&(MAX_PAYLOAD as u32 + 1).to_be_bytes());
        assert!(matches!(WireFrame::decode(&bad), Err(BillingError::Oversize(_))));
        assert!(matches!(
            frame(0, MAX_PAYLOAD + 1).encode(),
            Err(BillingError::Oversize(_))
        ));
    }

    #[test]
    fn concatenated_frames_decode_in_order() {
        let frames: Vec<_> = (0..5).map(|i| frame(i, i as usize * 3)).collect();
        let mut buf = Vec::new();
        for f in &frames {
            buf.extend(f.encode().unwrap());
        }
        let mut pos = 0;
        let mut out = Vec::new();
        while pos < buf.len() {
            let (f, n) = WireFrame::decode(&buf[pos..]).unwrap();
            out.push(f);
            pos += n;
        }
        assert_eq!(out, frames);
    }

    #[test]
    fn ack_round_trip() {
        let a = Ack {
            node_id: 7,
            gpu_id: 2,
            log_seq: 99,
            status: AckStatus::Duplicate,
        };
        let b = a.to_bytes();
        assert_eq!(&b[..4], b"AACK");
        assert_eq!(Ack::parse(&b).unwrap(), a);
        assert!(Ack::parse(&b[..10]).is_err());
        let mut bad = b;
        bad[17] = 77;
        assert!(Ack::parse(&bad).is_err());
    }
}
