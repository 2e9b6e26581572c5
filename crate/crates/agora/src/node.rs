//! Node agent: one sampler thread per GPU replays its trace, prices every
//! sample and seals logs; one sender thread ships sealed logs to the
//! collector in per-stream sequence order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TryRecvError, TrySendError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use agora_core::billing::{
    Ack, GpuMeter, LogBuilder, LogKey, LogStream, StreamId, WireFrame, ACK_LEN, DEFAULT_MAX_SAMPLES,
};
use agora_core::telemetry::replay_sampler;
use agora_core::workload::BW_TOLERANCE;
use agora_core::{FbpCurve, GpuCatalog, GpuModel, Trace};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::config::{base_dir, load_catalog, read_json, Source, TraceSource};
use crate::error::{AgoraError, Result};
use crate::journal::SpillJournal;
use crate::keys::{read_key, resolve_key_dir};

pub const MAX_GPUS_PER_NODE: usize = 8;
pub const DEFAULT_PERIOD_US: u32 = 50;
pub const DEFAULT_QUEUE_CAPACITY: usize = 16;
pub const DEFAULT_JOURNAL_MAX_BYTES: u64 = 1 << 30;
/// Offset of the send timestamp inside an encoded frame.
const SEND_TS_OFFSET: usize = agora_core::billing::FRAME_HEADER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    /// Trace time runs at wall-clock speed.
    Realtime,
    /// Trace time runs `factor` times faster than wall-clock time.
    Accelerated { factor: f64 },
    /// No waiting at all.
    #[default]
    Logical,
}

impl ClockMode {
    fn speed(self) -> Option<f64> {
        match self {
            ClockMode::Realtime => Some(1.0),
            ClockMode::Accelerated { factor } => Some(factor),
            ClockMode::Logical => None,
        }
    }
}

struct Pacer {
    start: Instant,
    speed: Option<f64>,
}

impl Pacer {
    fn wait_until(&self, trace_us: u64) {
        let Some(speed) = self.speed else { return };
        let target = self.start + Duration::from_secs_f64(trace_us as f64 * 1e-6 / speed);
        let now = Instant::now();
        if target > now + Duration::from_millis(1) {
            thread::sleep(target - now);
        }
    }
}

pub fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpuSlotConfig {
    pub gpu_id: u8,
    pub customer_id: u64,
    pub rental_id: u64,
    /// Catalog model name.
    pub model: String,
    pub trace: TraceSource,
}

/// Node configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: u32,
    pub collector: String,
    pub gpus: Vec<GpuSlotConfig>,
    #[serde(default = "default_period")]
    pub period_us: u32,
    #[serde(default)]
    pub clock: ClockMode,
    pub curve: Source<FbpCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Source<GpuCatalog>>,
    #[serde(default = "default_max_samples")]
    pub max_samples: u32,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    pub journal_dir: PathBuf,
    #[serde(default = "default_journal_max")]
    pub journal_max_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_dir: Option<PathBuf>,
    /// Log dates are `epoch_us + trace time`; defaults to the wall clock at
    /// start, or 0 under the logical clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_us: Option<u64>,
    /// Give up delivering after this many seconds; undelivered logs stay
    /// in the journal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_s: Option<f64>,
}

fn default_period() -> u32 {
    DEFAULT_PERIOD_US
}

fn default_max_samples() -> u32 {
    DEFAULT_MAX_SAMPLES
}

fn default_queue() -> usize {
    DEFAULT_QUEUE_CAPACITY
}

fn default_journal_max() -> u64 {
    DEFAULT_JOURNAL_MAX_BYTES
}

impl NodeConfig {
    pub fn load(path: &Path) -> Result<NodeSpec> {
        let cfg: NodeConfig = read_json(path)?;
        cfg.resolve(&base_dir(path))
    }

    pub fn resolve(&self, base: &Path) -> Result<NodeSpec> {
        let catalog = load_catalog(self.catalog.as_ref(), base)?;
        let curve = self.curve.load(base)?;
        let key_dir = resolve_key_dir(self.key_dir.as_deref().map(|p| base.join(p)).as_deref())?;
        let gpus = self
            .gpus
            .iter()
            .map(|g| {
                let model = catalog.get(&g.model)?.clone();
                let trace = g.trace.load(&model, base)?;
                Ok(GpuSlot {
                    gpu_id: g.gpu_id,
                    customer_id: g.customer_id,
                    rental_id: g.rental_id,
                    model,
                    trace,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spec = NodeSpec {
            node_id: self.node_id,
            collector: self.collector.clone(),
            gpus,
            period_us: self.period_us,
            clock: self.clock,
            curve,
            max_samples: self.max_samples,
            queue_capacity: self.queue_capacity,
            journal_dir: base.join(&self.journal_dir),
            journal_max_bytes: self.journal_max_bytes,
            key_dir,
            epoch_us: self.epoch_us,
            deadline: self.deadline_s.map(Duration::from_secs_f64),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One rented GPU with its workload.
#[derive(Debug, Clone)]
pub struct GpuSlot {
    pub gpu_id: u8,
    pub customer_id: u64,
    pub rental_id: u64,
    pub model: GpuModel,
    pub trace: Trace,
}

/// A fully resolved node, ready to run.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub node_id: u32,
    pub collector: String,
    pub gpus: Vec<GpuSlot>,
    pub period_us: u32,
    pub clock: ClockMode,
    pub curve: FbpCurve,
    pub max_samples: u32,
    pub queue_capacity: usize,
    pub journal_dir: PathBuf,
    pub journal_max_bytes: u64,
    pub key_dir: PathBuf,
    pub epoch_us: Option<u64>,
    pub deadline: Option<Duration>,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AgoraError::Config(format!("node {}: {m}", self.node_id)));
        if self.gpus.is_empty() || self.gpus.len() > MAX_GPUS_PER_NODE {
            return bad(format!("needs 1 to {MAX_GPUS_PER_NODE} GPUs, got {}", self.gpus.len()));
        }
        let mut ids: Vec<u8> = self.gpus.iter().map(|g| g.gpu_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate gpu_id".into());
        }
        if self.period_us == 0 {
            return bad("period must be positive".into());
        }
        if self.queue_capacity == 0 || self.max_samples == 0 {
            return bad("queue capacity and max_samples must be positive".into());
        }
        if let ClockMode::Accelerated { factor } = self.clock {
            if !(factor.is_finite() && factor > 0.0) {
                return bad("clock factor must be positive".into());
            }
        }
        let limit = self.curve.domain_max() * (1.0 + BW_TOLERANCE) + 1e-6;
        for g in &self.gpus {
            if let Some(r) = g.trace.records().iter().find(|r| r.bw > limit) {
                return bad(format!(
                    "gpu {} trace reaches {} TB/s, beyond the curve domain of {} TB/s",
                    g.gpu_id,
                    r.bw,
                    self.curve.domain_max()
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GpuStats {
    pub gpu_id: u8,
    pub customer_id: u64,
    pub rental_id: u64,
    pub samples: u64,
    pub logs_sealed: u64,
    pub first_seq: u64,
    /// Sum of the amounts of every log this GPU sealed, nanodollars.
    pub sealed_amount: u64,
    /// Unrounded running charge, nanodollars.
    pub exact_total: f64,
    /// Wall time from the first sample to the last seal.
    pub sampling_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node_id: u32,
    pub gpus: Vec<GpuStats>,
    pub logs_acked: u64,
    pub duplicates: u64,
    pub retries: u64,
    pub spilled: u64,
    pub rejected: u64,
    pub replayed: u64,
    pub undelivered: u64,
}

impl NodeStats {
    pub fn samples(&self) -> u64 {
        self.gpus.iter().map(|g| g.samples).sum()
    }

    pub fn sealed_amount(&self) -> u64 {
        self.gpus.iter().map(|g| g.sealed_amount).sum()
    }

    pub fn logs_sealed(&self) -> u64 {
        self.gpus.iter().map(|g| g.logs_sealed).sum()
    }
}

struct SealedFrame {
    gpu: u8,
    seq: u64,
    bytes: Vec<u8>,
}

enum Notice {
    Start { gpu: u8, first_seq: u64 },
    Spilled { gpu: u8, seq: u64 },
}

struct Sampler {
    slot: GpuSlot,
    node_id: u32,
    period: u32,
    curve: FbpCurve,
    max_samples: u32,
    key: LogKey,
    epoch_us: u64,
    journal: Arc<SpillJournal>,
    frames: SyncSender<SealedFrame>,
    notices: mpsc::Sender<Notice>,
    abort: Arc<AtomicBool>,
    pacer: Pacer,
}

impl Sampler {
    fn run(self) -> Result<GpuStats> {
        let stream = StreamId {
            customer_id: self.slot.customer_id,
            rental_id: self.slot.rental_id,
            node_id: self.node_id,
            gpu_id: self.slot.gpu_id,
        };
        let gpu = self.slot.gpu_id;
        let first_seq = self.journal.load_next_seq(gpu)?;
        let _ = self.notices.send(Notice::Start { gpu, first_seq });
        let mut stats = GpuStats {
            gpu_id: gpu,
            customer_id: stream.customer_id,
            rental_id: stream.rental_id,
            first_seq,
            ..GpuStats::default()
        };
        let mut logs = LogStream::resume(stream, first_seq).with_max_samples(self.max_samples);
        let mut meter = GpuMeter::new(self.curve.clone());
        let mut open: Option<LogBuilder> = None;
        let started = Instant::now();
        for tick in replay_sampler(&self.slot.trace, self.period as u64) {
            if self.abort.load(Ordering::Relaxed) {
                break;
            }
            self.pacer.wait_until(tick.at_us);
            let b = match open.as_mut() {
                Some(b) => b,
                None => open.insert(logs.open(self.period, tick.at_us, self.epoch_us + tick.at_us)?),
            };
            let inc = meter
                .price(&tick.sample, tick.len_us)
                .map_err(|e| AgoraError::Runtime(format!("gpu {gpu}: {e}")))?;
            b.append(tick.sample, inc)?;
            stats.samples += 1;
            if b.is_full() {
                self.ship(open.take().unwrap(), &mut stats)?;
            }
        }
        if let Some(b) = open.take() {
            self.ship(b, &mut stats)?;
        }
        stats.exact_total = meter.exact_total();
        stats.sampling_secs = started.elapsed().as_secs_f64();
        Ok(stats)
    }

    fn ship(&self, mut b: LogBuilder, stats: &mut GpuStats) -> Result<()> {
        let mut salt = [0u8; 3];
        rand::rng().fill_bytes(&mut salt);
        let sealed = b.seal(&self.key, salt)?;
        let h = *b.header();
        let bytes = WireFrame::new(h.stream(), h.log_seq, 0, &sealed).encode()?;
        self.journal.store_next_seq(h.gpu_id, h.log_seq + 1)?;
        stats.logs_sealed += 1;
        stats.sealed_amount += h.amount.0;
        let f = SealedFrame {
            gpu: h.gpu_id,
            seq: h.log_seq,
            bytes,
        };
        match self.frames.try_send(f) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(f)) | Err(TrySendError::Disconnected(f)) => {
                self.journal.put(f.gpu, f.seq, &f.bytes)?;
                let _ = self.notices.send(Notice::Spilled { gpu: f.gpu, seq: f.seq });
                Ok(())
            }
        }
    }
}

#[derive(Default)]
struct StreamQueue {
    /// `None` means the frame lives in the journal.
    items: BTreeMap<u64, Option<Vec<u8>>>,
    /// Sequence numbers below this were left over from an earlier run.
    first_new: Option<u64>,
    cursor: Option<u64>,
}

impl StreamQueue {
    fn sendable(&self) -> Option<u64> {
        let (&seq, _) = self.items.first_key_value()?;
        let first_new = self.first_new?;
        if seq < first_new || Some(seq) == self.cursor {
            Some(seq)
        } else {
            None
        }
    }

    fn advance(&mut self, seq: u64) {
        if let Some(c) = self.cursor {
            if seq == c {
                self.cursor = Some(c + 1);
            }
        }
    }
}

struct Sender {
    node_id: u32,
    addr: String,
    journal: Arc<SpillJournal>,
    frames: Receiver<SealedFrame>,
    notices: Receiver<Notice>,
    queues: BTreeMap<u8, StreamQueue>,
    in_memory: usize,
    mem_cap: usize,
    frames_open: bool,
    notices_open: bool,
    conn: Option<TcpStream>,
    backoff: Duration,
    last_gpu: Option<u8>,
    stats: NodeStats,
    abort: Arc<AtomicBool>,
    deadline: Option<Instant>,
}

const BACKOFF_MIN: Duration = Duration::from_millis(10);
const BACKOFF_MAX: Duration = Duration::from_millis(500);

impl Sender {
    fn drain(&mut self) -> Result<()> {
        while self.notices_open {
            match self.notices.try_recv() {
                Ok(Notice::Start { gpu, first_seq }) => {
                    let q = self.queues.entry(gpu).or_default();
                    q.first_new = Some(first_seq);
                    q.cursor = Some(first_seq);
                }
                Ok(Notice::Spilled { gpu, seq }) => {
                    self.queues.entry(gpu).or_default().items.insert(seq, None);
                    self.stats.spilled += 1;
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => self.notices_open = false,
            }
        }
        while self.frames_open {
            match self.frames.try_recv() {
                Ok(f) => self.accept(f)?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => self.frames_open = false,
            }
        }
        Ok(())
    }

    fn accept(&mut self, f: SealedFrame) -> Result<()> {
        let q = self.queues.entry(f.gpu).or_default();
        if self.in_memory >= self.mem_cap {
            self.journal.put(f.gpu, f.seq, &f.bytes)?;
            q.items.insert(f.seq, None);
            self.stats.spilled += 1;
        } else {
            q.items.insert(f.seq, Some(f.bytes));
            self.in_memory += 1;
        }
        Ok(())
    }

    fn pending(&self) -> usize {
        self.queues.values().map(|q| q.items.len()).sum()
    }

    fn finished(&self) -> bool {
        !self.frames_open && !self.notices_open && self.pending() == 0
    }

    /// Next stream to serve, round-robin after the last one sent.
    fn pick(&self) -> Option<(u8, u64)> {
        let after = self.last_gpu.map_or(0, |g| g as u16 + 1);
        let ready = |(&g, q): (&u8, &StreamQueue)| q.sendable().map(|s| (g, s));
        self.queues
            .range(after.min(256) as u8..)
            .filter(|_| after <= 255)
            .find_map(ready)
            .or_else(|| self.queues.iter().find_map(ready))
    }

    fn connect(&mut self) -> std::io::Result<&mut TcpStream> {
        if self.conn.is_none() {
            let addrs: Vec<SocketAddr> = self.addr.to_socket_addrs()?.collect();
            let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "collector address did not resolve");
            for a in addrs {
                match TcpStream::connect_timeout(&a, Duration::from_secs(1)) {
                    Ok(s) => {
                        s.set_nodelay(true)?;
                        s.set_read_timeout(Some(Duration::from_secs(10)))?;
                        s.set_write_timeout(Some(Duration::from_secs(10)))?;
                        self.conn = Some(s);
                        break;
                    }
                    Err(e) => last = e,
                }
            }
            if self.conn.is_none() {
                return Err(last);
            }
        }
        Ok(self.conn.as_mut().unwrap())
    }

    fn exchange(&mut self, bytes: &mut [u8]) -> std::io::Result<Ack> {
        bytes[SEND_TS_OFFSET..SEND_TS_OFFSET + 8].copy_from_slice(&now_us().to_be_bytes());
        let conn = self.connect()?;
        conn.write_all(bytes)?;
        let mut buf = [0u8; ACK_LEN];
        conn.read_exact(&mut buf)?;
        Ack::parse(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Sleeps for the current backoff while still draining the queues.
    fn back_off(&mut self) -> Result<()> {
        self.stats.retries += 1;
        let until = Instant::now() + self.backoff;
        while Instant::now() < until {
            self.drain()?;
            thread::sleep(Duration::from_millis(2));
        }
        self.backoff = (self.backoff * 2).min(BACKOFF_MAX);
        Ok(())
    }

    fn run(mut self) -> Result<NodeStats> {
        for (gpu, seq) in self.journal.pending()? {
            self.queues.entry(gpu).or_default().items.insert(seq, None);
            self.stats.replayed += 1;
        }
        loop {
            self.drain()?;
            if self.abort.load(Ordering::Relaxed) || self.finished() {
                break;
            }
            if self.deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
            let Some((gpu, seq)) = self.pick() else {
                if let Ok(f) = self.frames.recv_timeout(Duration::from_millis(2)) {
                    self.accept(f)?;
                }
                continue;
            };
            let item = self.queues[&gpu].items[&seq].clone();
            let mut bytes = match &item {
                Some(b) => b.clone(),
                None => self.journal.get(gpu, seq)?,
            };
            match self.exchange(&mut bytes) {
                Ok(ack) if ack.node_id == self.node_id && ack.gpu_id == gpu && ack.log_seq == seq => {
                    self.backoff = BACKOFF_MIN;
                    self.last_gpu = Some(gpu);
                    if ack.status.is_positive() {
                        self.stats.logs_acked += 1;
                        if ack.status == agora_core::billing::AckStatus::Duplicate {
                            self.stats.duplicates += 1;
                        }
                        if item.is_none() {
                            self.journal.remove(gpu, seq)?;
                        }
                    } else {
                        // undeliverable: keep it on disk for inspection
                        self.stats.rejected += 1;
                        if item.is_some() {
                            self.journal.put(gpu, seq, &bytes)?;
                        }
                    }
                    let q = self.queues.get_mut(&gpu).unwrap();
                    q.items.remove(&seq);
                    q.advance(seq);
                    if item.is_some() {
                        self.in_memory -= 1;
                    }
                }
                Ok(_) | Err(_) => {
                    self.conn = None;
                    self.back_off()?;
                }
            }
        }
        // anything still in memory goes to the journal
        for (&gpu, q) in &self.queues {
            for (&seq, item) in &q.items {
                if let Some(b) = item {
                    self.journal.put(gpu, seq, b)?;
                }
                self.stats.undelivered += 1;
            }
        }
        Ok(self.stats)
    }
}

/// Runs a node to completion: every sample is priced and sealed, and every
/// sealed log is acknowledged (or left in the journal at the deadline).
pub fn run_node(spec: &NodeSpec) -> Result<NodeStats> {
    run_node_with_abort(spec, Arc::new(AtomicBool::new(false)))
}

pub fn run_node_with_abort(spec: &NodeSpec, abort: Arc<AtomicBool>) -> Result<NodeStats> {
    spec.validate()?;
    let journal = Arc::new(SpillJournal::open(&spec.journal_dir, spec.journal_max_bytes)?);
    let mut keys = BTreeMap::new();
    for g in &spec.gpus {
        if let std::collections::btree_map::Entry::Vacant(e) = keys.entry(g.customer_id) {
            e.insert(read_key(&spec.key_dir, g.customer_id).map_err(|e| AgoraError::Config(e.to_string()))?);
        }
    }
    let epoch_us = spec.epoch_us.unwrap_or_else(|| match spec.clock {
        ClockMode::Logical => 0,
        _ => now_us(),
    });
    let (frame_tx, frame_rx) = mpsc::sync_channel(spec.queue_capacity);
    let (notice_tx, notice_rx) = mpsc::channel();
    let start = Instant::now();

    let samplers: Vec<_> = spec
        .gpus
        .iter()
        .map(|slot| {
            let s = Sampler {
                slot: slot.clone(),
                node_id: spec.node_id,
                period: spec.period_us,
                curve: spec.curve.clone(),
                max_samples: spec.max_samples,
                key: keys[&slot.customer_id].clone(),
                epoch_us,
                journal: journal.clone(),
                frames: frame_tx.clone(),
                notices: notice_tx.clone(),
                abort: abort.clone(),
                pacer: Pacer {
                    start,
                    speed: spec.clock.speed(),
                },
            };
            thread::Builder::new()
                .name(format!("n{}-g{}", spec.node_id, slot.gpu_id))
                .spawn(move || {
                    let abort = s.abort.clone();
                    let r = s.run();
                    if r.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    r
                })
                .map_err(AgoraError::io("spawning sampler"))
        })
        .collect::<Result<_>>()?;
    drop(frame_tx);
    drop(notice_tx);

    let sender = Sender {
        node_id: spec.node_id,
        addr: spec.collector.clone(),
        journal: journal.clone(),
        frames: frame_rx,
        notices: notice_rx,
        queues: BTreeMap::new(),
        in_memory: 0,
        mem_cap: spec.queue_capacity,
        frames_open: true,
        notices_open: true,
        conn: None,
        backoff: BACKOFF_MIN,
        last_gpu: None,
        stats: NodeStats {
            node_id: spec.node_id,
            ..NodeStats::default()
        },
        abort: abort.clone(),
        deadline: spec.deadline.map(|d| start + d),
    };
    let sender = thread::Builder::new()
        .name(format!("n{}-send", spec.node_id))
        .spawn(move || sender.run())
        .map_err(AgoraError::io("spawning sender"))?;

    let mut gpu_stats = Vec::new();
    let mut first_err = None;
    for h in samplers {
        match h.join().map_err(|_| AgoraError::Runtime("sampler panicked".into()))? {
            Ok(s) => gpu_stats.push(s),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let sent = sender
        .join()
        .map_err(|_| AgoraError::Runtime("sender panicked".into()))?;
    if let Some(e) = first_err {
        return Err(e);
    }
    let mut stats = sent?;
    gpu_stats.sort_by_key(|g| g.gpu_id);
    stats.gpus = gpu_stats;
    Ok(stats)
}
