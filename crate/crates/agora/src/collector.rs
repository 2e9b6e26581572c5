//! Collector service: accepts node connections, authenticates frames,
//! persists them to the rolling-frame store and logs arrivals.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use agora_core::billing::{Ack, AckStatus, FrameHeader, WireFrame, FRAME_HEADER_LEN, MAX_PAYLOAD};
use agora_core::store::{verify_frame, InsertOutcome, DEFAULT_KEEP_BODIES};
use serde::{Deserialize, Serialize};

use crate::config::{base_dir, read_json};
use crate::disk_store::DiskStore;
use crate::error::{AgoraError, Result};
use crate::keys::{resolve_key_dir, KeyStore};
use crate::node::now_us;

pub const ARRIVALS_FILE: &str = "arrivals.csv";
pub const ARRIVALS_HEADER: &str =
    "run_label,customer_id,rental_id,node_id,gpu_id,log_seq,bytes,send_ts,arrival_ts,latency_us,duplicate";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectorConfig {
    pub listen: String,
    pub store_dir: PathBuf,
    #[serde(default = "default_keep")]
    pub keep: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_dir: Option<PathBuf>,
    #[serde(default = "default_label")]
    pub run_label: String,
}

fn default_keep() -> usize {
    DEFAULT_KEEP_BODIES
}

fn default_label() -> String {
    "default".into()
}

impl CollectorConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: CollectorConfig = read_json(path)?;
        let base = base_dir(path);
        c.store_dir = base.join(&c.store_dir);
        c.key_dir = c.key_dir.map(|k| base.join(k));
        Ok(c)
    }
}

/// One received, authenticated frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub run_label: String,
    pub customer_id: u64,
    pub rental_id: u64,
    pub node_id: u32,
    pub gpu_id: u8,
    pub log_seq: u64,
    pub bytes: u64,
    pub send_ts: u64,
    pub arrival_ts: u64,
    pub latency_us: u64,
    pub duplicate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectorStats {
    pub stored: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub malformed: u64,
    pub connections: u64,
}

struct Shared {
    store: Mutex<DiskStore>,
    arrivals: Mutex<BufWriter<File>>,
    keys: KeyStore,
    label: String,
    stop: AtomicBool,
    stored: AtomicU64,
    duplicates: AtomicU64,
    rejected: AtomicU64,
    malformed: AtomicU64,
    connections: AtomicU64,
    /// After this many stores the collector dies without acking the last one.
    crash_after: Option<u64>,
}

pub struct CollectorHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

/// Binds and starts serving in background threads.
pub fn start(cfg: &CollectorConfig) -> Result<CollectorHandle> {
    start_inner(cfg, None)
}

/// Like [`start`], but the collector stops abruptly once it has persisted
/// `n` new logs, without acknowledging the last one.
pub fn start_crashing(cfg: &CollectorConfig, n: u64) -> Result<CollectorHandle> {
    start_inner(cfg, Some(n))
}

fn start_inner(cfg: &CollectorConfig, crash_after: Option<u64>) -> Result<CollectorHandle> {
    if cfg.keep == 0 {
        return Err(AgoraError::Config("keep must be at least 1".into()));
    }
    let key_dir = resolve_key_dir(cfg.key_dir.as_deref())?;
    let store = DiskStore::open(&cfg.store_dir, cfg.keep)?;
    let arrivals = open_arrivals(&cfg.store_dir.join(ARRIVALS_FILE))?;
    let listener = TcpListener::bind(&cfg.listen).map_err(AgoraError::io(format!("binding {}", cfg.listen)))?;
    let addr = listener.local_addr().map_err(AgoraError::io("listener address"))?;
    listener.set_nonblocking(true).map_err(AgoraError::io("listener"))?;
    let shared = Arc::new(Shared {
        store: Mutex::new(store),
        arrivals: Mutex::new(arrivals),
        keys: KeyStore::new(key_dir),
        label: cfg.run_label.clone(),
        stop: AtomicBool::new(false),
        stored: AtomicU64::new(0),
        duplicates: AtomicU64::new(0),
        rejected: AtomicU64::new(0),
        malformed: AtomicU64::new(0),
        connections: AtomicU64::new(0),
        crash_after,
    });
    let workers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::default();
    let acceptor = {
        let shared = shared.clone();
        let workers = workers.clone();
        thread::Builder::new()
            .name("collector-accept".into())
            .spawn(move || accept_loop(listener, shared, workers))
            .map_err(AgoraError::io("spawning acceptor"))?
    };
    Ok(CollectorHandle {
        addr,
        shared,
        acceptor: Some(acceptor),
        workers,
    })
}

fn open_arrivals(path: &Path) -> Result<BufWriter<File>> {
    let fresh = !path.exists();
    let f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(AgoraError::at_path(path))?;
    let mut w = BufWriter::new(f);
    if fresh {
        writeln!(w, "{ARRIVALS_HEADER}").map_err(AgoraError::at_path(path))?;
    }
    Ok(w)
}

impl CollectorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Logs newly stored by this instance.
    pub fn stored(&self) -> u64 {
        self.shared.stored.load(Ordering::SeqCst)
    }

    pub fn is_stopped(&self) -> bool {
        self.shared.stop.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> CollectorStats {
        let s = &self.shared;
        CollectorStats {
            stored: s.stored.load(Ordering::SeqCst),
            duplicates: s.duplicates.load(Ordering::SeqCst),
            rejected: s.rejected.load(Ordering::SeqCst),
            malformed: s.malformed.load(Ordering::SeqCst),
            connections: s.connections.load(Ordering::SeqCst),
        }
    }

    /// Stops accepting, closes every connection and flushes the store.
    pub fn shutdown(mut self) -> Result<CollectorStats> {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.join_threads();
        let stats = self.stats();
        self.shared
            .arrivals
            .lock()
            .unwrap()
            .flush()
            .map_err(AgoraError::io("flushing arrivals"))?;
        self.shared.store.lock().unwrap().sync()?;
        Ok(stats)
    }

    /// Waits until the collector stops by itself (a crash trigger).
    pub fn wait_stopped(&self) {
        while !self.is_stopped() {
            thread::sleep(Duration::from_millis(5));
        }
    }

    fn join_threads(&mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        let ws: Vec<_> = self.workers.lock().unwrap().drain(..).collect();
        for w in ws {
            let _ = w.join();
        }
    }
}

impl Drop for CollectorHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.join_threads();
        if let Ok(mut a) = self.shared.arrivals.lock() {
            let _ = a.flush();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, workers: Arc<Mutex<Vec<JoinHandle<()>>>>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((sock, _)) => {
                shared.connections.fetch_add(1, Ordering::Relaxed);
                let sh = shared.clone();
                if let Ok(h) = thread::Builder::new()
                    .name("collector-conn".into())
                    .spawn(move || serve(sock, sh))
                {
                    workers.lock().unwrap().push(h);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
}

/// Fills `buf` unless the collector stops first. `Ok(false)` means the peer
/// closed cleanly before sending anything.
fn read_full(sock: &mut TcpStream, buf: &mut [u8], stop: &AtomicBool) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        if stop.load(Ordering::SeqCst) {
            return Err(io::Error::new(io::ErrorKind::Interrupted, "collector stopping"));
        }
        match sock.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn serve(mut sock: TcpStream, sh: Arc<Shared>) {
    let _ = sock.set_nonblocking(false);
    let _ = sock.set_nodelay(true);
    let _ = sock.set_read_timeout(Some(Duration::from_millis(50)));
    let mut head = [0u8; FRAME_HEADER_LEN];
    loop {
        match read_full(&mut sock, &mut head, &sh.stop) {
            Ok(true) => {}
            _ => return,
        }
        let header = match FrameHeader::parse(&head) {
            Ok(h) if (h.payload_len as usize) <= MAX_PAYLOAD => h,
            _ => {
                sh.malformed.fetch_add(1, Ordering::Relaxed);
                return;
            }
        };
        let mut payload = vec![0u8; header.payload_len as usize];
        if !matches!(read_full(&mut sock, &mut payload, &sh.stop), Ok(true)) {
            return;
        }
        let bytes = (FRAME_HEADER_LEN + payload.len()) as u64;
        let frame = WireFrame::from_parts(header, payload);
        let Some(status) = handle(&sh, &frame, bytes) else {
            return;
        };
        let ack = Ack {
            node_id: frame.stream.node_id,
            gpu_id: frame.stream.gpu_id,
            log_seq: frame.log_seq,
            status,
        };
        if sock.write_all(&ack.to_bytes()).is_err() {
            return;
        }
    }
}

/// Verifies and stores one frame. `None` means the collector died before
/// acknowledging.
fn handle(sh: &Shared, frame: &WireFrame, bytes: u64) -> Option<AckStatus> {
    let v = match verify_frame(frame, |c| sh.keys.get(c)) {
        Ok(v) => v,
        Err(status) => {
            sh.rejected.fetch_add(1, Ordering::Relaxed);
            return Some(status);
        }
    };
    let mut store = sh.store.lock().unwrap();
    if sh.stop.load(Ordering::SeqCst) {
        return None;
    }
    let outcome = match store.ingest(v.header, &v.sealed_bytes) {
        Ok(o) => o,
        Err(_) => {
            sh.stop.store(true, Ordering::SeqCst);
            return None;
        }
    };
    let arrival_ts = now_us();
    let rec = ArrivalRecord {
        run_label: sh.label.clone(),
        customer_id: frame.stream.customer_id,
        rental_id: frame.stream.rental_id,
        node_id: frame.stream.node_id,
        gpu_id: frame.stream.gpu_id,
        log_seq: frame.log_seq,
        bytes,
        send_ts: v.send_ts,
        arrival_ts,
        latency_us: arrival_ts.saturating_sub(v.send_ts),
        duplicate: outcome == InsertOutcome::Duplicate,
    };
    {
        let mut a = sh.arrivals.lock().unwrap();
        let _ = writeln!(
            a,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rec.run_label,
            rec.customer_id,
            rec.rental_id,
            rec.node_id,
            rec.gpu_id,
            rec.log_seq,
            rec.bytes,
            rec.send_ts,
            rec.arrival_ts,
            rec.latency_us,
            rec.duplicate as u8
        );
    }
    match outcome {
        InsertOutcome::Stored => {
            let n = sh.stored.fetch_add(1, Ordering::SeqCst) + 1;
            if sh.crash_after.is_some_and(|c| n >= c) {
                sh.stop.store(true, Ordering::SeqCst);
                return None;
            }
            Some(AckStatus::Stored)
        }
        InsertOutcome::Duplicate => {
            sh.duplicates.fetch_add(1, Ordering::Relaxed);
            Some(AckStatus::Duplicate)
        }
    }
}

/// Reads an arrivals log written by any number of collector runs.
pub fn read_arrivals(path: &Path) -> Result<Vec<ArrivalRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| AgoraError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let Ok(row) = row else { continue };
        // a torn final line from a crash is skipped
        let rec = (|| -> Option<ArrivalRecord> {
            let f = |i: usize| row.get(i);
            Some(ArrivalRecord {
                run_label: f(0)?.to_string(),
                customer_id: f(1)?.parse().ok()?,
                rental_id: f(2)?.parse().ok()?,
                node_id: f(3)?.parse().ok()?,
                gpu_id: f(4)?.parse().ok()?,
                log_seq: f(5)?.parse().ok()?,
                bytes: f(6)?.parse().ok()?,
                send_ts: f(7)?.parse().ok()?,
                arrival_ts: f(8)?.parse().ok()?,
                latency_us: f(9)?.parse().ok()?,
                duplicate: f(10)? == "1",
            })
        })();
        out.extend(rec);
    }
    Ok(out)
}
