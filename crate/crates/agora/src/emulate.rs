//! Single-host emulation: one collector and `k` node agents in one process,
//! followed by billing export and an end-to-end conservation check.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use agora_core::billing::{StreamId, DEFAULT_MAX_SAMPLES};
use agora_core::stats::{latency_report, LatencyRow};
use agora_core::store::{Invoice, DEFAULT_KEEP_BODIES};
use agora_core::workload::fixture::{app_kernels, FixtureParams};
use agora_core::{FbpCurve, GpuCatalog, GpuModel, Trace};
use serde::{Deserialize, Serialize};

use crate::collector::{self, read_arrivals, CollectorConfig, CollectorHandle, ARRIVALS_FILE};
use crate::config::{load_catalog, Source, TraceSource};
use crate::disk_store::DiskStore;
use crate::error::{AgoraError, Result};
use crate::keys::{generate_key, write_key};
use crate::node::{
    run_node_with_abort, ClockMode, GpuSlot, GpuSlotConfig, NodeConfig, NodeSpec, NodeStats, DEFAULT_JOURNAL_MAX_BYTES,
    DEFAULT_PERIOD_US, DEFAULT_QUEUE_CAPACITY, MAX_GPUS_PER_NODE,
};
use crate::report::{emit_invoices_csv, emit_latency, to_json, write_file};
use crate::trace_io::{save_trace, TraceFormat};

/// Stop the collector once it has stored `after_logs` logs (without acking
/// the last one) and bring it back after `down_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartPlan {
    pub after_logs: u64,
    #[serde(default)]
    pub down_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulateConfig {
    pub nodes: u32,
    #[serde(default = "default_gpus")]
    pub gpus_per_node: u8,
    #[serde(default = "default_customers")]
    pub customers: u64,
    #[serde(default = "default_period")]
    pub period_us: u32,
    pub samples_per_gpu: u64,
    #[serde(default)]
    pub clock: ClockMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<Source<FbpCurve>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<Source<GpuCatalog>>,
    #[serde(default = "default_model")]
    pub gpu_model: String,
    #[serde(default = "default_max_samples")]
    pub max_samples: u32,
    #[serde(default = "default_keep")]
    pub keep: usize,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_label")]
    pub run_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collector_restart: Option<RestartPlan>,
    #[serde(default = "default_journal_max")]
    pub journal_max_bytes: u64,
    /// Collector listen address; port 0 picks a free port.
    #[serde(default = "default_listen")]
    pub listen: String,
}

fn default_gpus() -> u8 {
    MAX_GPUS_PER_NODE as u8
}
fn default_customers() -> u64 {
    2
}
fn default_period() -> u32 {
    DEFAULT_PERIOD_US
}
fn default_model() -> String {
    "H100".into()
}
fn default_max_samples() -> u32 {
    DEFAULT_MAX_SAMPLES
}
fn default_keep() -> usize {
    DEFAULT_KEEP_BODIES
}
fn default_queue() -> usize {
    DEFAULT_QUEUE_CAPACITY
}
fn default_label() -> String {
    "default".into()
}
fn default_journal_max() -> u64 {
    DEFAULT_JOURNAL_MAX_BYTES
}
fn default_listen() -> String {
    "127.0.0.1:0".into()
}

impl EmulateConfig {
    /// A config with every optional field at its default.
    pub fn new(nodes: u32, samples_per_gpu: u64) -> Self {
        serde_json::from_value(serde_json::json!({"nodes": nodes, "samples_per_gpu": samples_per_gpu}))
            .expect("defaults deserialize")
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgoraError::Config(m.into()));
        if self.nodes == 0 {
            return bad("nodes must be positive");
        }
        if self.gpus_per_node == 0 || self.gpus_per_node as usize > MAX_GPUS_PER_NODE {
            return bad("gpus_per_node must be 1 to 8");
        }
        if self.customers == 0 || self.samples_per_gpu == 0 || self.period_us == 0 {
            return bad("customers, samples_per_gpu and period_us must be positive");
        }
        if self.keep == 0 {
            return bad("keep must be at least 1");
        }
        Ok(())
    }
}

/// Default curve: (4, 5.06, 15) over A100 and H100 bandwidth.
pub fn default_curve() -> FbpCurve {
    FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).expect("reference curve is valid")
}

/// Fixture kernels of one application, repeated and cut so the trace lasts
/// exactly `total_us`.
pub fn cycled_trace(catalog: &GpuCatalog, gpu: &GpuModel, seed: u64, app: usize, total_us: u64) -> Result<Trace> {
    let params = FixtureParams {
        apps: 8,
        kernels_per_app: 500,
        seed,
    };
    let kernels: Vec<_> = app_kernels(catalog, &params, app % params.apps)
        .iter()
        .map(|k| k.realize(gpu))
        .collect();
    let mut records = Vec::new();
    let mut t = 0u64;
    for r in kernels.iter().cycle() {
        if t >= total_us {
            break;
        }
        let mut r = r.clone();
        r.duration_us = r.duration_us.min(total_us - t);
        t += r.duration_us;
        records.push(r);
    }
    Ok(Trace::new(gpu, records, None)?)
}

/// Stream identity of GPU `gpu` on node `node` (both zero-based).
pub fn slot_identity(cfg: &EmulateConfig, node: u32, gpu: u8) -> (u64, u64) {
    let index = node as u64 * cfg.gpus_per_node as u64 + gpu as u64;
    (1 + index % cfg.customers, index + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulateSummary {
    pub run_label: String,
    pub nodes: u32,
    pub gpus: u64,
    pub samples: u64,
    pub logs_sealed: u64,
    pub sealed_total: u64,
    pub invoiced_total: u64,
    pub conserved: bool,
    pub streams: u64,
    /// Streams whose stored sequence numbers are not exactly `0..sealed`.
    pub incomplete_streams: u64,
    /// Streams whose first arrivals came out of sequence order.
    pub out_of_order_streams: u64,
    pub duplicates: u64,
    pub collector_restarts: u32,
    pub undelivered: u64,
    pub wall_secs: f64,
}

impl EmulateSummary {
    /// Conservation, completeness and per-stream ordering all hold.
    pub fn ok(&self) -> bool {
        self.conserved && self.incomplete_streams == 0 && self.out_of_order_streams == 0 && self.undelivered == 0
    }
}

#[derive(Debug, Clone)]
pub struct EmulateOutcome {
    pub summary: EmulateSummary,
    pub nodes: Vec<NodeStats>,
    pub invoices: Vec<Invoice>,
    pub latency: Vec<LatencyRow>,
    pub store_dir: PathBuf,
}

struct Plan {
    catalog: GpuCatalog,
    curve: FbpCurve,
    model: GpuModel,
}

fn plan(cfg: &EmulateConfig, base: &Path) -> Result<Plan> {
    cfg.validate()?;
    let catalog = load_catalog(cfg.catalog.as_ref(), base)?;
    let curve = match &cfg.curve {
        Some(s) => s.load(base)?,
        None => default_curve(),
    };
    let model = catalog.get(&cfg.gpu_model)?.clone();
    Ok(Plan { catalog, curve, model })
}

fn node_spec(cfg: &EmulateConfig, p: &Plan, out: &Path, node: u32, collector: &str) -> Result<NodeSpec> {
    let total_us = cfg.samples_per_gpu * cfg.period_us as u64;
    let gpus = (0..cfg.gpus_per_node)
        .map(|g| {
            let (customer_id, rental_id) = slot_identity(cfg, node, g);
            let app = (node as usize * cfg.gpus_per_node as usize) + g as usize;
            Ok(GpuSlot {
                gpu_id: g,
                customer_id,
                rental_id,
                model: p.model.clone(),
                trace: cycled_trace(&p.catalog, &p.model, cfg.seed, app, total_us)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NodeSpec {
        node_id: node + 1,
        collector: collector.into(),
        gpus,
        period_us: cfg.period_us,
        clock: cfg.clock,
        curve: p.curve.clone(),
        max_samples: cfg.max_samples,
        queue_capacity: cfg.queue_capacity,
        journal_dir: out.join("journal").join(format!("node-{}", node + 1)),
        journal_max_bytes: cfg.journal_max_bytes,
        key_dir: out.join("keys"),
        epoch_us: Some(0),
        deadline: None,
    })
}

fn write_keys(cfg: &EmulateConfig, out: &Path) -> Result<()> {
    for c in 1..=cfg.customers {
        write_key(&out.join("keys"), c, &generate_key())?;
    }
    Ok(())
}

/// Supervises the collector across planned restarts.
fn supervise(
    first: CollectorHandle,
    cc: CollectorConfig,
    plan: Option<RestartPlan>,
    done: Arc<AtomicBool>,
) -> Result<(CollectorHandle, u32)> {
    let Some(plan) = plan else {
        return Ok((first, 0));
    };
    while !first.is_stopped() {
        if done.load(std::sync::atomic::Ordering::SeqCst) {
            return Ok((first, 0));
        }
        thread::sleep(Duration::from_millis(2));
    }
    drop(first);
    thread::sleep(Duration::from_millis(plan.down_ms));
    let mut last = None;
    for _ in 0..200 {
        match collector::start(&cc) {
            Ok(h) => return Ok((h, 1)),
            Err(e) => last = Some(e),
        }
        thread::sleep(Duration::from_millis(10));
    }
    Err(last.unwrap())
}

/// Runs the whole pipeline and writes its outputs under `out`.
pub fn run_emulation(cfg: &EmulateConfig, base: &Path, out: &Path) -> Result<EmulateOutcome> {
    let started = Instant::now();
    let p = plan(cfg, base)?;
    fs::create_dir_all(out).map_err(AgoraError::at_path(out))?;
    write_keys(cfg, out)?;
    let store_dir = out.join("store");
    let cc = CollectorConfig {
        listen: cfg.listen.clone(),
        store_dir: store_dir.clone(),
        keep: cfg.keep,
        key_dir: Some(out.join("keys")),
        run_label: cfg.run_label.clone(),
    };
    let first = match cfg.collector_restart {
        Some(r) => collector::start_crashing(&cc, r.after_logs)?,
        None => collector::start(&cc)?,
    };
    let addr: SocketAddr = first.addr();
    let restart_cfg = CollectorConfig {
        listen: addr.to_string(),
        ..cc
    };
    let specs = (0..cfg.nodes)
        .map(|n| node_spec(cfg, &p, out, n, &addr.to_string()))
        .collect::<Result<Vec<_>>>()?;

    let done = Arc::new(AtomicBool::new(false));
    let abort = Arc::new(AtomicBool::new(false));
    let supervisor = {
        let (plan, done) = (cfg.collector_restart, done.clone());
        thread::spawn(move || supervise(first, restart_cfg, plan, done))
    };
    let results: Arc<Mutex<Vec<Result<NodeStats>>>> = Arc::default();
    let handles: Vec<_> = specs
        .into_iter()
        .map(|spec| {
            let (results, abort) = (results.clone(), abort.clone());
            thread::spawn(move || {
                let r = run_node_with_abort(&spec, abort.clone());
                if r.is_err() {
                    abort.store(true, std::sync::atomic::Ordering::SeqCst);
                }
                results.lock().unwrap().push(r);
            })
        })
        .collect();
    for h in handles {
        h.join()
            .map_err(|_| AgoraError::Runtime("node thread panicked".into()))?;
    }
    done.store(true, std::sync::atomic::Ordering::SeqCst);
    let (collector, restarts) = supervisor
        .join()
        .map_err(|_| AgoraError::Runtime("collector supervisor panicked".into()))??;
    collector.shutdown()?;

    let mut nodes = Vec::new();
    for r in Arc::try_unwrap(results).ok().unwrap().into_inner().unwrap() {
        nodes.push(r?);
    }
    nodes.sort_by_key(|n| n.node_id);

    let mut store = DiskStore::open(&store_dir, cfg.keep)?;
    let customers: Vec<u64> = store.memory().customers().into_iter().collect();
    let invoices = customers
        .iter()
        .map(|&c| store.billing_export(c, 0..u64::MAX))
        .collect::<Result<Vec<_>>>()?;
    let arrivals = read_arrivals(&store_dir.join(ARRIVALS_FILE))?;
    let latency = latency_report(
        arrivals
            .iter()
            .filter(|a| !a.duplicate)
            .map(|a| (a.run_label.as_str(), a.latency_us)),
    )
    .unwrap_or_default();

    let summary = summarize(cfg, &nodes, &store, &invoices, &arrivals, restarts, started.elapsed());
    write_file(out, "latency.csv", &emit_latency(&latency)?)?;
    write_file(out, "invoices.json", &to_json(&invoices)?)?;
    write_file(out, "invoices.csv", &emit_invoices_csv(&invoices)?)?;
    write_file(out, "node_stats.json", &to_json(&nodes)?)?;
    write_file(out, "summary.json", &to_json(&summary)?)?;
    Ok(EmulateOutcome {
        summary,
        nodes,
        invoices,
        latency,
        store_dir,
    })
}

fn summarize(
    cfg: &EmulateConfig,
    nodes: &[NodeStats],
    store: &DiskStore,
    invoices: &[Invoice],
    arrivals: &[collector::ArrivalRecord],
    restarts: u32,
    wall: Duration,
) -> EmulateSummary {
    let mut expected: BTreeMap<StreamId, (u64, u64)> = BTreeMap::new();
    for n in nodes {
        for g in &n.gpus {
            let s = StreamId {
                customer_id: g.customer_id,
                rental_id: g.rental_id,
                node_id: n.node_id,
                gpu_id: g.gpu_id,
            };
            expected.insert(s, (g.first_seq, g.first_seq + g.logs_sealed));
        }
    }
    let incomplete = expected
        .iter()
        .filter(|(s, (lo, hi))| {
            let seqs: Vec<u64> = store.memory().logs(s).map(|l| l.header.log_seq).collect();
            seqs != (*lo..*hi).collect::<Vec<_>>()
        })
        .count() as u64;
    let mut last: BTreeMap<(u32, u8), u64> = BTreeMap::new();
    let mut out_of_order = std::collections::BTreeSet::new();
    for a in arrivals.iter().filter(|a| !a.duplicate) {
        let k = (a.node_id, a.gpu_id);
        if last.get(&k).is_some_and(|&p| a.log_seq <= p) {
            out_of_order.insert(k);
        }
        last.insert(k, a.log_seq);
    }
    let sealed_total: u64 = nodes.iter().map(NodeStats::sealed_amount).sum();
    let invoiced_total: u64 = invoices.iter().map(|i| i.total.0).sum();
    EmulateSummary {
        run_label: cfg.run_label.clone(),
        nodes: cfg.nodes,
        gpus: cfg.nodes as u64 * cfg.gpus_per_node as u64,
        samples: nodes.iter().map(NodeStats::samples).sum(),
        logs_sealed: nodes.iter().map(NodeStats::logs_sealed).sum(),
        sealed_total,
        invoiced_total,
        conserved: sealed_total == invoiced_total,
        streams: store.memory().streams().count() as u64,
        incomplete_streams: incomplete,
        out_of_order_streams: out_of_order.len() as u64,
        duplicates: arrivals.iter().filter(|a| a.duplicate).count() as u64,
        collector_restarts: restarts,
        undelivered: nodes.iter().map(|n| n.undelivered).sum(),
        wall_secs: wall.as_secs_f64(),
    }
}

/// Writes per-host configs (collector, keys, traces, one file per node) and
/// returns the commands that launch them.
pub fn write_host_configs(cfg: &EmulateConfig, base: &Path, out: &Path, collector_host: &str) -> Result<Vec<String>> {
    let p = plan(cfg, base)?;
    fs::create_dir_all(out.join("nodes")).map_err(AgoraError::at_path(out))?;
    write_keys(cfg, out)?;
    let listen = if cfg.listen.ends_with(":0") {
        "0.0.0.0:7700".to_string()
    } else {
        cfg.listen.clone()
    };
    let port = listen.rsplit(':').next().unwrap_or("7700");
    let cc = CollectorConfig {
        listen: listen.clone(),
        store_dir: "store".into(),
        keep: cfg.keep,
        key_dir: Some("keys".into()),
        run_label: cfg.run_label.clone(),
    };
    write_file(out, "collector.json", &to_json(&cc)?)?;
    let mut cmds = vec![format!("agora collector -c {}", out.join("collector.json").display())];
    let total_us = cfg.samples_per_gpu * cfg.period_us as u64;
    for n in 0..cfg.nodes {
        let mut gpus = Vec::new();
        for g in 0..cfg.gpus_per_node {
            let (customer_id, rental_id) = slot_identity(cfg, n, g);
            let app = n as usize * cfg.gpus_per_node as usize + g as usize;
            let trace = cycled_trace(&p.catalog, &p.model, cfg.seed, app, total_us)?;
            let rel = PathBuf::from(format!("n{}-g{}.csv", n + 1, g));
            save_trace(&out.join("nodes").join(&rel), &trace, TraceFormat::Csv, cfg.period_us)?;
            gpus.push(GpuSlotConfig {
                gpu_id: g,
                customer_id,
                rental_id,
                model: p.model.name.clone(),
                trace: TraceSource::Path(rel),
            });
        }
        let nc = NodeConfig {
            node_id: n + 1,
            collector: format!("{collector_host}:{port}"),
            gpus,
            period_us: cfg.period_us,
            clock: cfg.clock,
            curve: Source::Inline(p.curve.clone()),
            catalog: cfg.catalog.as_ref().map(|_| Source::Inline(p.catalog.clone())),
            max_samples: cfg.max_samples,
            queue_capacity: cfg.queue_capacity,
            journal_dir: format!("journal-{}", n + 1).into(),
            journal_max_bytes: cfg.journal_max_bytes,
            key_dir: Some("../keys".into()),
            epoch_us: None,
            deadline_s: None,
        };
        let name = format!("node-{}.json", n + 1);
        write_file(&out.join("nodes"), &name, &to_json(&nc)?)?;
        cmds.push(format!("agora node -c {}", out.join("nodes").join(name).display()));
    }
    Ok(cmds)
}
