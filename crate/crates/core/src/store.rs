//! The collector's rolling-frame ledger.
//!
//! Every accepted log keeps its header forever. Only the newest `n` logs of
//! each stream keep their body (the sealed bytes); older ones are
//! truncated to header-only. Billing reads headers alone, so truncation
//! never changes an invoice.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::billing::{decrypt_log, AckStatus, LogHeader, LogKey, StreamId, WireFrame};
use crate::money::Nanodollars;

pub const DEFAULT_KEEP_BODIES: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredLog {
    pub header: LogHeader,
    pub body: Option<Vec<u8>>,
    pub paid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InvoiceLine {
    pub rental_id: u64,
    pub node_id: u32,
    pub gpu_id: u8,
    pub log_seq: u64,
    pub date: u64,
    pub amount: Nanodollars,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoice {
    pub customer_id: u64,
    /// Half-open window `[start, end)` over log dates, µs.
    pub window_start: u64,
    pub window_end: u64,
    pub total: Nanodollars,
    pub lines: Vec<InvoiceLine>,
}

impl Invoice {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Subtotals per rental.
    pub fn by_rental(&self) -> BTreeMap<u64, Nanodollars> {
        let mut m: BTreeMap<u64, Nanodollars> = BTreeMap::new();
        for l in &self.lines {
            *m.entry(l.rental_id).or_default() += l.amount;
        }
        m
    }
}

/// A frame whose payload authenticated and whose header matches its routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedLog {
    pub header: LogHeader,
    pub send_ts: u64,
    pub sealed_bytes: Vec<u8>,
}

/// Authenticates a frame with its customer's key. The error is the negative
/// ack status to return.
pub fn verify_frame<F>(frame: &WireFrame, key_for: F) -> Result<VerifiedLog, AckStatus>
where
    F: FnOnce(u64) -> Option<LogKey>,
{
    let key = key_for(frame.stream.customer_id).ok_or(AckStatus::UnknownCustomer)?;
    let (send_ts, sealed) = frame.open_payload().map_err(|_| AckStatus::Mismatch)?;
    let (header, _) = decrypt_log(&sealed, &key).map_err(|_| AckStatus::AuthFailure)?;
    if header.stream() != frame.stream || header.log_seq != frame.log_seq {
        return Err(AckStatus::Mismatch);
    }
    Ok(VerifiedLog {
        header,
        send_ts,
        sealed_bytes: sealed.to_bytes(),
    })
}

#[derive(Debug, Clone)]
pub struct RollingStore {
    keep: usize,
    streams: BTreeMap<StreamId, BTreeMap<u64, StoredLog>>,
}

impl Default for RollingStore {
    fn default() -> Self {
        Self::new(DEFAULT_KEEP_BODIES)
    }
}

impl RollingStore {
    /// `keep` is the number of newest logs per stream that retain bodies.
    pub fn new(keep: usize) -> Self {
        Self {
            keep,
            streams: BTreeMap::new(),
        }
    }

    pub fn keep(&self) -> usize {
        self.keep
    }

    pub fn contains(&self, stream: &StreamId, log_seq: u64) -> bool {
        self.streams.get(stream).is_some_and(|s| s.contains_key(&log_seq))
    }

    /// Adds a log unless its `(stream, log_seq)` is already present.
    pub fn insert(&mut self, header: LogHeader, body: Vec<u8>) -> InsertOutcome {
        self.restore(StoredLog {
            header,
            body: Some(body),
            paid: false,
        })
    }

    /// Adds a log in whatever state it was persisted in.
    pub fn restore(&mut self, log: StoredLog) -> InsertOutcome {
        let logs = self.streams.entry(log.header.stream()).or_default();
        if logs.contains_key(&log.header.log_seq) {
            return InsertOutcome::Duplicate;
        }
        logs.insert(log.header.log_seq, log);
        InsertOutcome::Stored
    }

    /// Insert followed by rolling truncation of the log's stream.
    pub fn ingest(&mut self, header: LogHeader, body: Vec<u8>) -> InsertOutcome {
        let stream = header.stream();
        let out = self.insert(header, body);
        if out == InsertOutcome::Stored {
            self.truncate_rolling(&stream);
        }
        out
    }

    /// Drops bodies of all but the newest `keep` logs of a stream. Returns
    /// how many bodies were removed.
    pub fn truncate_rolling(&mut self, stream: &StreamId) -> usize {
        self.truncated_seqs(stream).len()
    }

    /// Like [`truncate_rolling`](Self::truncate_rolling) but returns the
    /// sequence numbers that lost their bodies.
    pub fn truncated_seqs(&mut self, stream: &StreamId) -> Vec<u64> {
        let Some(logs) = self.streams.get_mut(stream) else {
            return Vec::new();
        };
        let n = logs.len().saturating_sub(self.keep);
        logs.iter_mut()
            .take(n)
            .filter_map(|(&seq, l)| l.body.take().map(|_| seq))
            .collect()
    }

    pub fn truncate_all(&mut self) -> usize {
        let keys: Vec<StreamId> = self.streams.keys().copied().collect();
        keys.iter().map(|k| self.truncate_rolling(k)).sum()
    }

    pub fn streams(&self) -> impl Iterator<Item = &StreamId> {
        self.streams.keys()
    }

    pub fn logs(&self, stream: &StreamId) -> impl Iterator<Item = &StoredLog> {
        self.streams.get(stream).into_iter().flat_map(|s| s.values())
    }

    pub fn len(&self) -> usize {
        self.streams.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Missing sequence numbers between the lowest and highest stored ones.
    pub fn gaps(&self, stream: &StreamId) -> Vec<Range<u64>> {
        let mut out = Vec::new();
        let Some(logs) = self.streams.get(stream) else {
            return out;
        };
        let mut prev: Option<u64> = None;
        for &seq in logs.keys() {
            if let Some(p) = prev {
                if seq > p + 1 {
                    out.push(p + 1..seq);
                }
            }
            prev = Some(seq);
        }
        out
    }

    /// Sum of every stored header amount for a customer, paid or not.
    pub fn customer_total(&self, customer_id: u64) -> Nanodollars {
        self.streams
            .iter()
            .filter(|(k, _)| k.customer_id == customer_id)
            .flat_map(|(_, logs)| logs.values())
            .map(|l| l.header.amount)
            .sum()
    }

    pub fn customers(&self) -> BTreeSet<u64> {
        self.streams.keys().map(|k| k.customer_id).collect()
    }

    /// Unpaid logs of a customer dated in `window`, without marking them.
    pub fn invoice_preview(&self, customer_id: u64, window: Range<u64>) -> Invoice {
        let lines: Vec<InvoiceLine> = self
            .streams
            .iter()
            .filter(|(k, _)| k.customer_id == customer_id)
            .flat_map(|(_, logs)| logs.values())
            .filter(|l| !l.paid && window.contains(&l.header.date))
            .map(|l| InvoiceLine {
                rental_id: l.header.rental_id,
                node_id: l.header.node_id,
                gpu_id: l.header.gpu_id,
                log_seq: l.header.log_seq,
                date: l.header.date,
                amount: l.header.amount,
            })
            .collect();
        Invoice {
            customer_id,
            window_start: window.start,
            window_end: window.end,
            total: lines.iter().map(|l| l.amount).sum(),
            lines,
        }
    }

    /// Marks every line of `invoice` paid.
    pub fn mark_paid(&mut self, invoice: &Invoice) {
        for l in &invoice.lines {
            let key = StreamId {
                customer_id: invoice.customer_id,
                rental_id: l.rental_id,
                node_id: l.node_id,
                gpu_id: l.gpu_id,
            };
            if let Some(log) = self.streams.get_mut(&key).and_then(|s| s.get_mut(&l.log_seq)) {
                log.paid = true;
            }
        }
    }

    /// Collects and marks paid the customer's unpaid logs dated in `window`.
    pub fn billing_export(&mut self, customer_id: u64, window: Range<u64>) -> Invoice {
        let inv = self.invoice_preview(customer_id, window);
        self.mark_paid(&inv);
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billing::{LogBuilder, LogStream, SealedLog};
    use crate::telemetry::Sample;
    use alloc::vec;

    fn stream(rental: u64) -> StreamId {
        StreamId {
            customer_id: 1,
            rental_id: rental,
            node_id: 2,
            gpu_id: 0,
        }
    }

    fn header(s: StreamId, seq: u64, amount: u64, date: u64) -> LogHeader {
        let mut b = LogBuilder::open(s, seq, 50, 0, date).unwrap();
        b.append(Sample::default(), Nanodollars(amount)).unwrap();
        *b.header()
    }

    #[test]
    fn truncation_counts() {
        let mut st = RollingStore::new(3);
        for i in 0..5 {
            st.insert(header(stream(1), i, 10, i), vec![1]);
        }
        assert_eq!(st.truncate_rolling(&stream(1)), 2);
        assert_eq!(st.truncate_rolling(&stream(1)), 0);
        let bodies: Vec<bool> = st.logs(&stream(1)).map(|l| l.body.is_some()).collect();
        assert_eq!(bodies, [false, false, true, true, true]);

        let mut small = RollingStore::new(3);
        small.insert(header(stream(1), 0, 10, 0), vec![1]);
        small.insert(header(stream(1), 1, 10, 0), vec![1]);
        assert_eq!(small.truncate_rolling(&stream(1)), 0);
    }

    #[test]
    fn duplicates_are_ignored() {
        let mut st = RollingStore::new(3);
        assert_eq!(st.ingest(header(stream(1), 0, 10, 0), vec![]), InsertOutcome::Stored);
        assert_eq!(st.ingest(header(stream(1), 0, 10, 0), vec![]), InsertOutcome::Duplicate);
        assert_eq!(st.len(), 1);
    }

    #[test]
    fn export_sums_and_marks_paid() {
        let mut st = RollingStore::new(64);
        for i in 0..3 {
            st.insert(header(stream(1), i, 210, 100 + i), vec![]);
        }
        let inv = st.billing_export(1, 0..1000);
        assert_eq!(inv.total, Nanodollars(630));
        assert_eq!(inv.lines.len(), 3);
        assert!(st.billing_export(1, 0..1000).is_empty());
    }

    #[test]
    fn export_groups_rentals_and_respects_window() {
        let mut st = RollingStore::new(64);
        st.insert(header(stream(1), 0, 100, 10), vec![]);
        st.insert(header(stream(1), 1, 100, 20), vec![]);
        st.insert(header(stream(2), 0, 7, 15), vec![]);
        st.insert(header(stream(2), 1, 7, 30), vec![]);
        let inv = st.billing_export(1, 0..30);
        assert_eq!(inv.total, Nanodollars(207));
        let groups = inv.by_rental();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[&1], Nanodollars(200));
        assert_eq!(groups[&2], Nanodollars(7));
        assert_eq!(st.billing_export(1, 30..31).total, Nanodollars(7));
        assert!(st.billing_export(9, 0..100).is_empty());
    }

    #[test]
    fn truncation_does_not_change_invoices() {
        let mut a = RollingStore::new(2);
        for i in 0..6 {
            a.insert(header(stream(1), i, 3 * i + 1, i), vec![0; 4]);
        }
        let mut b = a.clone();
        b.truncate_all();
        assert_eq!(a.billing_export(1, 0..100), b.billing_export(1, 0..100));
    }

    #[test]
    fn gaps_are_reported() {
        let mut st = RollingStore::new(4);
        for i in [0, 1, 4, 5, 7] {
            st.insert(header(stream(1), i, 1, 0), vec![]);
        }
        assert_eq!(st.gaps(&stream(1)), vec![2..4, 6..7]);
        st.insert(header(stream(1), 6, 1, 0), vec![]);
        assert_eq!(st.gaps(&stream(1)), vec![2..4]);
        let seqs: Vec<u64> = st.logs(&stream(1)).map(|l| l.header.log_seq).collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    fn sealed_frame(key: &LogKey, seq: u64) -> (WireFrame, SealedLog) {
        let mut ls = LogStream::resume(stream(1), seq);
        let mut b = ls.open(50, 0, 0).unwrap();
        b.append(Sample::new(1, 2, 3), Nanodollars(5)).unwrap();
        let s = b.seal(key, [0; 3]).unwrap();
        (WireFrame::new(stream(1), seq, 42, &s), s)
    }

    #[test]
    fn verify_frame_outcomes() {
        let key = LogKey::new([3; 32]);
        let (f, s) = sealed_frame(&key, 4);
        let v = verify_frame(&f, |_| Some(key.clone())).unwrap();
        assert_eq!(v.send_ts, 42);
        assert_eq!(v.sealed_bytes, s.to_bytes());
        assert_eq!(v.header.amount, Nanodollars(5));

        assert_eq!(verify_frame(&f, |_| None), Err(AckStatus::UnknownCustomer));
        assert_eq!(
            verify_frame(&f, |_| Some(LogKey::new([4; 32]))),
            Err(AckStatus::AuthFailure)
        );
        let mut tampered = f.clone();
        let last = tampered.payload.len() - 1;
        tampered.payload[last] ^= 1;
        assert_eq!(
            verify_frame(&tampered, |_| Some(key.clone())),
            Err(AckStatus::AuthFailure)
        );
        let mut rerouted = f.clone();
        rerouted.log_seq = 5;
        assert_eq!(verify_frame(&rerouted, |_| Some(key.clone())), Err(AckStatus::Mismatch));
    }
}
