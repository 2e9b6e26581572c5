use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{compress, decompress, seal_plaintext, BillingError, LogKey, SealedLog};
use crate::money::Nanodollars;
use crate::telemetry::Sample;

pub const LOG_MAGIC: [u8; 4] = *b"ALOG";
pub const LOG_VERSION: u8 = 1;
/// Serialized header size including magic and version.
pub const LOG_HEADER_LEN: usize = 66;
pub const DEFAULT_MAX_SAMPLES: u32 = 65_536;

/// Identity of one metered GPU stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamId {
    pub customer_id: u64,
    pub rental_id: u64,
    pub node_id: u32,
    pub gpu_id: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub amount: Nanodollars,
    /// Log open time, µs since the Unix epoch.
    pub date: u64,
    pub customer_id: u64,
    pub rental_id: u64,
    pub node_id: u32,
    pub gpu_id: u8,
    pub log_seq: u64,
    pub period_us: u32,
    /// Trace time of the first sample, µs.
    pub start_ts: u64,
    pub sample_count: u32,
}

impl LogHeader {
    pub fn stream(&self) -> StreamId {
        StreamId {
            customer_id: self.customer_id,
            rental_id: self.rental_id,
            node_id: self.node_id,
            gpu_id: self.gpu_id,
        }
    }

    pub fn to_bytes(&self) -> [u8; LOG_HEADER_LEN] {
        let mut b = [0u8; LOG_HEADER_LEN];
        let mut w = Writer { buf: &mut b, pos: 0 };
        w.put(&LOG_MAGIC);
        w.put(&[LOG_VERSION]);
        w.put(&self.amount.0.to_be_bytes());
        w.put(&self.date.to_be_bytes());
        w.put(&self.customer_id.to_be_bytes());
        w.put(&self.rental_id.to_be_bytes());
        w.put(&self.node_id.to_be_bytes());
        w.put(&[self.gpu_id]);
        w.put(&self.log_seq.to_be_bytes());
        w.put(&self.period_us.to_be_bytes());
        w.put(&self.start_ts.to_be_bytes());
        w.put(&self.sample_count.to_be_bytes());
        debug_assert_eq!(w.pos, LOG_HEADER_LEN);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, BillingError> {
        if b.len() < LOG_HEADER_LEN {
            return Err(BillingError::Truncated {
                need: LOG_HEADER_LEN,
                have: b.len(),
            });
        }
        if b[..4] != LOG_MAGIC {
            return Err(BillingError::BadMagic);
        }
        if b[4] != LOG_VERSION {
            return Err(BillingError::BadVersion(b[4]));
        }
        let mut r = Reader { buf: b, pos: 5 };
        let h = Self {
            amount: Nanodollars(r.u64()),
            date: r.u64(),
            customer_id: r.u64(),
            rental_id: r.u64(),
            node_id: r.u32(),
            gpu_id: r.u8(),
            log_seq: r.u64(),
            period_us: r.u32(),
            start_ts: r.u64(),
            sample_count: r.u32(),
        };
        if h.period_us == 0 {
            return Err(BillingError::BadPeriod);
        }
        Ok(h)
    }
}

struct Writer<'a> {
    buf: &'a mut [u8],
    pos: usize,
}

impl Writer<'_> {
    fn put(&mut self, bytes: &[u8]) {
        self.buf[self.pos..self.pos + bytes.len()].copy_from_slice(bytes);
        self.pos += bytes.len();
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        a
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_be_bytes(self.take())
    }
}

/// Header followed by the compressed body.
pub fn encode_plaintext(header: &LogHeader, samples: &[Sample]) -> Vec<u8> {
    let body = compress(samples);
    let mut out = Vec::with_capacity(LOG_HEADER_LEN + body.len());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn parse_plaintext(bytes: &[u8]) -> Result<(LogHeader, Vec<Sample>), BillingError> {
    let header = LogHeader::from_bytes(bytes)?;
    let samples = decompress(&bytes[LOG_HEADER_LEN..], header.sample_count as usize)?;
    Ok((header, samples))
}

/// An open log accumulating priced samples.
#[derive(Debug, Clone)]
pub struct LogBuilder {
    header: LogHeader,
    samples: Vec<Sample>,
    max_samples: u32,
    sealed: bool,
}

impl LogBuilder {
    pub fn open(
        stream: StreamId,
        log_seq: u64,
        period_us: u32,
        start_ts: u64,
        date: u64,
    ) -> Result<Self, BillingError> {
        if period_us == 0 {
            return Err(BillingError::BadPeriod);
        }
        Ok(Self {
            header: LogHeader {
                amount: Nanodollars::ZERO,
                date,
                customer_id: stream.customer_id,
                rental_id: stream.rental_id,
                node_id: stream.node_id,
                gpu_id: stream.gpu_id,
                log_seq,
                period_us,
                start_ts,
                sample_count: 0,
            },
            samples: Vec::new(),
            max_samples: DEFAULT_MAX_SAMPLES,
            sealed: false,
        })
    }

    pub fn with_max_samples(mut self, max: u32) -> Self {
        self.max_samples = max.max(1);
        self
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn is_full(&self) -> bool {
        self.header.sample_count >= self.max_samples
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn append(&mut self, sample: Sample, increment: Nanodollars) -> Result<(), BillingError> {
        if self.sealed {
            return Err(BillingError::Sealed);
        }
        if self.is_full() {
            return Err(BillingError::LogFull { max: self.max_samples });
        }
        self.header.amount = self
            .header
            .amount
            .checked_add(increment)
            .ok_or(BillingError::AmountOverflow)?;
        self.header.sample_count += 1;
        self.samples.push(sample);
        Ok(())
    }

    /// Serialized plaintext as it would be sealed now.
    pub fn plaintext(&self) -> Vec<u8> {
        encode_plaintext(&self.header, &self.samples)
    }

    /// Closes the log and encrypts it. Further appends fail with `Sealed`.
    pub fn seal(&mut self, key: &LogKey, salt: [u8; 3]) -> Result<SealedLog, BillingError> {
        if self.sealed {
            return Err(BillingError::Sealed);
        }
        self.sealed = true;
        Ok(seal_plaintext(
            &self.plaintext(),
            key,
            self.header.log_seq,
            self.header.gpu_id,
            salt,
        ))
    }
}

/// Hands out builders for one stream with consecutive sequence numbers.
#[derive(Debug, Clone)]
pub struct LogStream {
    stream: StreamId,
    next_seq: u64,
    max_samples: u32,
}

impl LogStream {
    pub fn new(stream: StreamId) -> Self {
        Self::resume(stream, 0)
    }

    /// Continues a stream whose last issued sequence number was `next_seq - 1`.
    pub fn resume(stream: StreamId, next_seq: u64) -> Self {
        Self {
            stream,
            next_seq,
            max_samples: DEFAULT_MAX_SAMPLES,
        }
    }

    pub fn with_max_samples(mut self, max: u32) -> Self {
        self.max_samples = max.max(1);
        self
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn open(&mut self, period_us: u32, start_ts: u64, date: u64) -> Result<LogBuilder, BillingError> {
        let b =
            LogBuilder::open(self.stream, self.next_seq, period_us, start_ts, date)?.with_max_samples(self.max_samples);
        self.next_seq += 1;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billing::decrypt_log;

    const STREAM: StreamId = StreamId {
        customer_id: 7,
        rental_id: 8,
        node_id: 9,
        gpu_id: 3,
    };

    #[test]
    fn open_is_empty() {
        let b = LogBuilder::open(STREAM, 0, 50, 0, 0).unwrap();
        assert_eq!(b.header().amount, Nanodollars::ZERO);
        assert_eq!(b.header().sample_count, 0);
        assert_eq!(
            LogBuilder::open(STREAM, 0, 0, 0, 0).unwrap_err(),
            BillingError::BadPeriod
        );
    }

    #[test]
    fn stream_sequences_increase_by_one() {
        let mut s = LogStream::resume(STREAM, 41);
        let a = s.open(50, 0, 0).unwrap();
        let b = s.open(50, 0, 0).unwrap();
        assert_eq!(a.header().log_seq, 41);
        assert_eq!(b.header().log_seq, 42);
    }

    #[test]
    fn appends_accumulate() {
        let mut b = LogBuilder::open(STREAM, 0, 50, 0, 0).unwrap();
        for _ in 0..3 {
            b.append(Sample::default(), Nanodollars(70)).unwrap();
        }
        assert_eq!(b.header().amount, Nanodollars(210));
        assert_eq!(b.header().sample_count, 3);
        let key = LogKey::new([1; 32]);
        b.seal(&key, [0; 3]).unwrap();
        assert_eq!(b.append(Sample::default(), Nanodollars(1)), Err(BillingError::Sealed));
        assert_eq!(b.seal(&key, [0; 3]).unwrap_err(), BillingError::Sealed);
    }

    #[test]
    fn full_log_rejects() {
        let mut b = LogBuilder::open(STREAM, 0, 50, 0, 0).unwrap().with_max_samples(2);
        b.append(Sample::default(), Nanodollars(1)).unwrap();
        b.append(Sample::default(), Nanodollars(1)).unwrap();
        assert!(b.is_full());
        assert_eq!(
            b.append(Sample::default(), Nanodollars(1)),
            Err(BillingError::LogFull { max: 2 })
        );
    }

    #[test]
    fn header_layout() {
        let h = LogHeader {
            amount: Nanodollars(0x0102),
            date: 3,
            customer_id: 4,
            rental_id: 5,
            node_id: 6,
            gpu_id: 7,
            log_seq: 8,
            period_us: 50,
            start_ts: 10,
            sample_count: 11,
        };
        let b = h.to_bytes();
        assert_eq!(&b[..5], b"ALOG\x01");
        assert_eq!(&b[5..13], &[0, 0, 0, 0, 0, 0, 1, 2]);
        assert_eq!(b[41], 7);
        assert_eq!(&b[62..], &[0, 0, 0, 11]);
        assert_eq!(LogHeader::from_bytes(&b).unwrap(), h);
        let mut bad = b;
        bad[0] = b'X';
        assert_eq!(LogHeader::from_bytes(&bad), Err(BillingError::BadMagic));
        bad = b;
        bad[4] = 2;
        assert_eq!(LogHeader::from_bytes(&bad), Err(BillingError::BadVersion(2)));
        assert!(matches!(
            LogHeader::from_bytes(&b[..10]),
            Err(BillingError::Truncated { .. })
        ));
    }

    #[test]
    fn empty_log_seals() {
        let key = LogKey::new([9; 32]);
        let mut b = LogBuilder::open(STREAM, 5, 50, 100, 200).unwrap();
        let sealed = b.seal(&key, [1, 2, 3]).unwrap();
        let (h, s) = decrypt_log(&sealed, &key).unwrap();
        assert_eq!(h, *b.header());
        assert!(s.is_empty());
        assert_eq!(h.amount, Nanodollars::ZERO);
    }

    #[test]
    fn round_trip() {
        let key = LogKey::new([9; 32]);
        let mut b = LogBuilder::open(STREAM, 5, 50, 100, 200).unwrap();
        for i in 0..100u32 {
            b.append(Sample::new(i * 1000, (i % 7) as u16, 3), Nanodollars(i as u64))
                .unwrap();
        }
        let samples = b.samples().to_vec();
        let sealed = b.seal(&key, [1, 2, 3]).unwrap();
        let (h, s) = decrypt_log(&sealed, &key).unwrap();
        assert_eq!(h, *b.header());
        assert_eq!(s, samples);
        assert_eq!(h.amount, Nanodollars((0..100).sum()));
    }
}
