//! Filesystem persistence for the collector's rolling-frame store.
//!
//! Layout under the store root:
//!
//! ```text
//! customer-<id>/r<rental>-n<node>-g<gpu>/index.log
//! customer-<id>/r<rental>-n<node>-g<gpu>/<seq>.log
//! invoices.wal
//! ```
//!
//! `index.log` is append-only with one record per line: `L <seq> <hex
//! header>` when a log is stored, `T <seq>` when its body is truncated and
//! `P <seq>` when it is paid. Body files hold the sealed bytes until
//! truncation rewrites them to the 66 plaintext header bytes.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use agora_core::billing::{LogHeader, StreamId};
use agora_core::store::{InsertOutcome, Invoice, RollingStore, StoredLog};
use serde::{Deserialize, Serialize};

use crate::error::{AgoraError, Result};

pub const INDEX_FILE: &str = "index.log";
pub const INVOICE_WAL: &str = "invoices.wal";

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum WalEntry {
    Begin { id: u64, invoice: Invoice },
    Commit { id: u64 },
}

#[derive(Debug)]
pub struct DiskStore {
    root: PathBuf,
    mem: RollingStore,
    indexes: HashMap<StreamId, File>,
    wal: File,
    next_invoice: u64,
}

pub fn stream_dir(root: &Path, s: &StreamId) -> PathBuf {
    root.join(format!("customer-{}", s.customer_id))
        .join(format!("r{}-n{}-g{}", s.rental_id, s.node_id, s.gpu_id))
}

fn body_path(dir: &Path, seq: u64) -> PathBuf {
    dir.join(format!("{seq:020}.log"))
}

fn parse_stream_dir(customer: &str, name: &str) -> Option<StreamId> {
    let customer_id = customer.strip_prefix("customer-")?.parse().ok()?;
    let rest = name.strip_prefix('r')?;
    let (rental, rest) = rest.split_once("-n")?;
    let (node, gpu) = rest.split_once("-g")?;
    Some(StreamId {
        customer_id,
        rental_id: rental.parse().ok()?,
        node_id: node.parse().ok()?,
        gpu_id: gpu.parse().ok()?,
    })
}

enum IndexLine {
    Log(LogHeader),
    Truncated(u64),
    Paid(u64),
}

fn parse_index_line(line: &str) -> Option<IndexLine> {
    let mut it = line.split(' ');
    let tag = it.next()?;
    let seq: u64 = it.next()?.parse().ok()?;
    match tag {
        "L" => {
            let h = LogHeader::from_bytes(&hex::decode(it.next()?).ok()?).ok()?;
            (h.log_seq == seq).then_some(IndexLine::Log(h))
        }
        "T" => Some(IndexLine::Truncated(seq)),
        "P" => Some(IndexLine::Paid(seq)),
        _ => None,
    }
}

impl DiskStore {
    /// Opens or creates a store, replaying every index and finishing any
    /// invoice export that was interrupted before its commit record.
    pub fn open(root: impl Into<PathBuf>, keep: usize) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(AgoraError::at_path(&root))?;
        let mut mem = RollingStore::new(keep);
        for cust in read_dir_sorted(&root)? {
            if !cust.is_dir() {
                continue;
            }
            let cname = file_name(&cust);
            for sdir in read_dir_sorted(&cust)? {
                let Some(stream) = parse_stream_dir(&cname, &file_name(&sdir)) else {
                    continue;
                };
                load_stream(&mut mem, stream, &sdir)?;
            }
        }
        let wal_path = root.join(INVOICE_WAL);
        let pending = read_wal(&wal_path)?;
        let next_invoice = pending.1;
        let wal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&wal_path)
            .map_err(AgoraError::at_path(&wal_path))?;
        let mut st = Self {
            root,
            mem,
            indexes: HashMap::new(),
            wal,
            next_invoice,
        };
        for (id, inv) in pending.0 {
            st.apply_paid(&inv)?;
            st.wal_append(&WalEntry::Commit { id })?;
        }
        Ok(st)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn memory(&self) -> &RollingStore {
        &self.mem
    }

    pub fn len(&self) -> usize {
        self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem.is_empty()
    }

    pub fn contains(&self, stream: &StreamId, seq: u64) -> bool {
        self.mem.contains(stream, seq)
    }

    fn index(&mut self, stream: &StreamId) -> Result<&mut File> {
        if !self.indexes.contains_key(stream) {
            let dir = stream_dir(&self.root, stream);
            fs::create_dir_all(&dir).map_err(AgoraError::at_path(&dir))?;
            let p = dir.join(INDEX_FILE);
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(AgoraError::at_path(&p))?;
            self.indexes.insert(*stream, f);
        }
        Ok(self.indexes.get_mut(stream).unwrap())
    }

    fn append_index(&mut self, stream: &StreamId, line: &str) -> Result<()> {
        self.index(stream)?
            .write_all(line.as_bytes())
            .map_err(AgoraError::io("appending to stream index"))
    }

    /// Persists a verified log: body file first, then the index record.
    /// A duplicate `(stream, seq)` changes nothing.
    pub fn ingest(&mut self, header: LogHeader, sealed: &[u8]) -> Result<InsertOutcome> {
        let stream = header.stream();
        if self.mem.contains(&stream, header.log_seq) {
            return Ok(InsertOutcome::Duplicate);
        }
        let dir = stream_dir(&self.root, &stream);
        fs::create_dir_all(&dir).map_err(AgoraError::at_path(&dir))?;
        let body = body_path(&dir, header.log_seq);
        fs::write(&body, sealed).map_err(AgoraError::at_path(&body))?;
        let line = format!("L {} {}\n", header.log_seq, hex::encode(header.to_bytes()));
        self.append_index(&stream, &line)?;
        let out = self.mem.insert(header, Vec::new());
        self.truncate_rolling(&stream)?;
        Ok(out)
    }

    /// Drops bodies beyond the newest `keep` of a stream.
    pub fn truncate_rolling(&mut self, stream: &StreamId) -> Result<usize> {
        let seqs = self.mem.truncated_seqs(stream);
        let dir = stream_dir(&self.root, stream);
        for &seq in &seqs {
            let header = self
                .mem
                .logs(stream)
                .find(|l| l.header.log_seq == seq)
                .map(|l| l.header.to_bytes())
                .expect("truncated log is stored");
            let p = body_path(&dir, seq);
            fs::write(&p, header).map_err(AgoraError::at_path(&p))?;
            self.append_index(stream, &format!("T {seq}\n"))?;
        }
        Ok(seqs.len())
    }

    pub fn truncate_all(&mut self) -> Result<usize> {
        let streams: Vec<StreamId> = self.mem.streams().copied().collect();
        let mut n = 0;
        for s in streams {
            n += self.truncate_rolling(&s)?;
        }
        Ok(n)
    }

    /// Sealed bytes of a log whose body is still kept.
    pub fn body(&self, stream: &StreamId, seq: u64) -> Result<Option<Vec<u8>>> {
        let kept = self
            .mem
            .logs(stream)
            .any(|l| l.header.log_seq == seq && l.body.is_some());
        if !kept {
            return Ok(None);
        }
        let p = body_path(&stream_dir(&self.root, stream), seq);
        fs::read(&p).map(Some).map_err(AgoraError::at_path(&p))
    }

    pub fn invoice_preview(&self, customer_id: u64, window: Range<u64>) -> Invoice {
        self.mem.invoice_preview(customer_id, window)
    }

    /// Exports and marks paid. The invoice is written ahead so an
    /// interrupted export completes on the next open.
    pub fn billing_export(&mut self, customer_id: u64, window: Range<u64>) -> Result<Invoice> {
        let inv = self.mem.invoice_preview(customer_id, window);
        if inv.is_empty() {
            return Ok(inv);
        }
        let id = self.next_invoice;
        self.next_invoice += 1;
        self.wal_append(&WalEntry::Begin {
            id,
            invoice: inv.clone(),
        })?;
        self.apply_paid(&inv)?;
        self.wal_append(&WalEntry::Commit { id })?;
        Ok(inv)
    }

    fn apply_paid(&mut self, inv: &Invoice) -> Result<()> {
        for l in &inv.lines {
            let s = StreamId {
                customer_id: inv.customer_id,
                rental_id: l.rental_id,
                node_id: l.node_id,
                gpu_id: l.gpu_id,
            };
            self.append_index(&s, &format!("P {}\n", l.log_seq))?;
        }
        self.mem.mark_paid(inv);
        Ok(())
    }

    fn wal_append(&mut self, e: &WalEntry) -> Result<()> {
        let mut line = serde_json::to_vec(e).map_err(|e| AgoraError::Runtime(e.to_string()))?;
        line.push(b'\n');
        self.wal
            .write_all(&line)
            .map_err(AgoraError::io("appending to invoice log"))?;
        self.wal.sync_data().map_err(AgoraError::io("syncing invoice log"))
    }

    pub fn sync(&mut self) -> Result<()> {
        for f in self.indexes.values_mut() {
            f.sync_data().map_err(AgoraError::io("syncing stream index"))?;
        }
        Ok(())
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(AgoraError::at_path(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn load_stream(mem: &mut RollingStore, stream: StreamId, dir: &Path) -> Result<()> {
    let p = dir.join(INDEX_FILE);
    let f = match File::open(&p) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(AgoraError::at_path(&p)(e)),
    };
    let mut logs: std::collections::BTreeMap<u64, StoredLog> = Default::default();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(AgoraError::at_path(&p))?;
        // a torn final line from a crash is skipped
        match parse_index_line(&line) {
            Some(IndexLine::Log(h)) if h.stream() == stream => {
                logs.entry(h.log_seq).or_insert(StoredLog {
                    header: h,
                    body: Some(Vec::new()),
                    paid: false,
                });
            }
            Some(IndexLine::Truncated(seq)) => {
                if let Some(l) = logs.get_mut(&seq) {
                    l.body = None;
                }
            }
            Some(IndexLine::Paid(seq)) => {
                if let Some(l) = logs.get_mut(&seq) {
                    l.paid = true;
                }
            }
            _ => {}
        }
    }
    for l in logs.into_values() {
        mem.restore(l);
    }
    Ok(())
}

/// Returns the begun-but-uncommitted invoices and the next free id.
fn read_wal(path: &Path) -> Result<(Vec<(u64, Invoice)>, u64)> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(AgoraError::at_path(path)(e)),
    };
    let mut open: std::collections::BTreeMap<u64, Invoice> = Default::default();
    let mut next = 0;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(AgoraError::at_path(path))?;
        match serde_json::from_str::<WalEntry>(&line) {
            Ok(WalEntry::Begin { id, invoice }) => {
                next = next.max(id + 1);
                open.insert(id, invoice);
            }
            Ok(WalEntry::Commit { id }) => {
                open.remove(&id);
            }
            Err(_) => {}
        }
    }
    Ok((open.into_iter().collect(), next))
}
