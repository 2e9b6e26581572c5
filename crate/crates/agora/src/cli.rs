//! The `agora` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use agora_core::capacity::estimate_capacity;
use agora_core::econ::{run_experiment, sampling_error_sweep};
use agora_core::pricing::{validate_desiderata, CurveDef};
use agora_core::telemetry::SAMPLE_BYTES;
use agora_core::workload::fixture::{torchbench_like, FixtureParams};
use agora_core::workload::JobSpec;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::collector::{self, CollectorConfig};
use crate::config::{base_dir, load_catalog, read_json, DistributionFile, ExperimentConfig, JobDef, Source};
use crate::disk_store::DiskStore;
use crate::emulate::{run_emulation, write_host_configs, EmulateConfig};
use crate::error::{AgoraError, Result};
use crate::node::{run_node_with_abort, NodeConfig};
use crate::report::{emit_invoices_csv, emit_revenue, emit_sweep, to_json, write_file, ReportFormat};
use crate::trace_io::{save_trace, TraceFormat};

/// Sampling periods swept when a config lists none, µs.
pub const DEFAULT_SWEEP_PERIODS: [u64; 7] = [10, 25, 50, 100, 150, 200, 250];

#[derive(Debug, Parser)]
#[command(
    name = "agora",
    version,
    about = "Feature-based GPU pricing: experiments, metering and billing"
)]
pub struct Cli {
    /// Override the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run label recorded in the manifest and latency reports.
    #[arg(long, global = true)]
    pub label: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean TBP/FBP revenue and F% over sampled jobs.
    Econ(ConfigArg),
    /// Sampled-vs-ideal revenue error across sampling periods.
    Sweep(ConfigArg),
    /// Run a collector and node agents on this host.
    Emulate(EmulateArgs),
    /// Telemetry ingest volume for a fleet.
    Capacity(CapacityArgs),
    /// Write the fixture workload as trace files plus a distribution file.
    GenTraces(GenTracesArgs),
    /// Check a curve against the pricing desiderata.
    ValidateCurve(ValidateArgs),
    /// Export unpaid logs from a collector store as invoices.
    Bill(BillArgs),
    /// Run one node agent.
    Node(ConfigArg),
    /// Run the collector service.
    Collector(CollectorArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(short, long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmulateArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Write per-host configs and print launch commands instead of running.
    #[arg(long)]
    pub print_commands: bool,
    /// Collector host name used in printed node configs.
    #[arg(long, default_value = "127.0.0.1")]
    pub collector_host: String,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[arg(long, default_value_t = 500)]
    pub nodes: u64,
    #[arg(long, default_value_t = 8)]
    pub gpus: u64,
    #[arg(long = "period-us", default_value_t = 50)]
    pub period_us: u64,
    #[arg(long = "sample-bytes", default_value_t = SAMPLE_BYTES as u64)]
    pub sample_bytes: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TraceFileFormat {
    Csv,
    Atrc,
}

#[derive(Debug, Args)]
pub struct GenTracesArgs {
    #[arg(long, default_value_t = FixtureParams::default().apps)]
    pub apps: usize,
    #[arg(long, default_value_t = FixtureParams::default().kernels_per_app)]
    pub kernels: usize,
    /// Catalog file; defaults to the built-in catalog.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TraceFileFormat::Csv)]
    pub format: TraceFileFormat,
    /// Fixed period for the binary format, µs.
    #[arg(long, default_value_t = 50)]
    pub period_us: u32,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(short, long)]
    pub curve: PathBuf,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BillArgs {
    /// Collector store directory.
    #[arg(long)]
    pub store: PathBuf,
    /// Customers to bill; all when omitted.
    #[arg(long)]
    pub customer: Vec<u64>,
    /// Window start, µs (inclusive).
    #[arg(long, default_value_t = 0)]
    pub from: u64,
    /// Window end, µs (exclusive).
    #[arg(long, default_value_t = u64::MAX)]
    pub to: u64,
    #[arg(long, default_value_t = agora_core::store::DEFAULT_KEEP_BODIES)]
    pub keep: usize,
    /// Show the invoices without marking anything paid.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct CollectorArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Stop after this many seconds instead of waiting for an interrupt.
    #[arg(long)]
    pub duration_s: Option<f64>,
}

/// Written next to every run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub run_label: Option<String>,
    pub version: &'static str,
    pub args: Vec<String>,
    /// Resolved configuration, when the subcommand has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    // a second handler registration fails harmlessly
    let _ = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst));
    flag
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let raw: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, raw) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("agora: {e}");
            e.exit_code()
        }
    }
}

fn manifest(
    cli: &Cli,
    sub: &str,
    configs: Vec<PathBuf>,
    args: Vec<String>,
    config: Option<serde_json::Value>,
) -> RunManifest {
    RunManifest {
        subcommand: sub.into(),
        config_paths: configs,
        seed: cli.seed,
        out: cli.out.clone(),
        run_label: cli.label.clone(),
        version: env!("CARGO_PKG_VERSION"),
        args,
        config,
    }
}

fn json_value<T: Serialize>(v: &T) -> Option<serde_json::Value> {
    serde_json::to_value(v).ok()
}

fn execute(cli: &Cli, args: Vec<String>) -> Result<i32> {
    let out = &cli.out;
    let (m, code) = match &cli.command {
        Command::Econ(c) => {
            let (cfg, mut exp) = ExperimentConfig::load(&c.config)?;
            if let Some(s) = cli.seed {
                exp.seed = s;
            }
            let report = run_experiment(
                &exp.distribution,
                &exp.curve,
                &exp.catalog,
                &exp.reference_gpu,
                exp.n_jobs,
                exp.seed,
            )?;
            write_file(out, "report.csv", &emit_revenue(&report, ReportFormat::Csv)?)?;
            write_file(out, "report.json", &emit_revenue(&report, ReportFormat::Json)?)?;
            println!(
                "{} jobs, reference {}: mean FBP ${:.6}, F% {:.2}",
                report.n_jobs, report.reference_gpu, report.mean_fbp, report.f_percent
            );
            for (gpu, tbp) in &report.mean_tbp {
                println!("  mean TBP on {gpu}: ${tbp:.6}");
            }
            (manifest(cli, "econ", vec![c.config.clone()], args, json_value(&cfg)), 0)
        }
        Command::Sweep(c) => {
            let (cfg, mut exp) = ExperimentConfig::load(&c.config)?;
            if let Some(s) = cli.seed {
                exp.seed = s;
            }
            let periods = if exp.periods_us.is_empty() {
                DEFAULT_SWEEP_PERIODS.to_vec()
            } else {
                exp.periods_us.clone()
            };
            let rows = sampling_error_sweep(
                &exp.distribution,
                &exp.curve,
                &exp.catalog,
                &exp.reference_gpu,
                &periods,
                exp.n_jobs,
                exp.seed,
            )?;
            write_file(out, "sweep.csv", &emit_sweep(&rows, ReportFormat::Csv)?)?;
            write_file(out, "sweep.json", &emit_sweep(&rows, ReportFormat::Json)?)?;
            for r in &rows {
                println!("{:>6} us  {:+.4}%", r.period_us, r.percent_error);
            }
            (
                manifest(cli, "sweep", vec![c.config.clone()], args, json_value(&cfg)),
                0,
            )
        }
        Command::Emulate(e) => {
            let mut cfg: EmulateConfig = read_json(&e.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(l) = &cli.label {
                cfg.run_label = l.clone();
            }
            let base = base_dir(&e.config);
            let code = if e.print_commands {
                for c in write_host_configs(&cfg, &base, out, &e.collector_host)? {
                    println!("{c}");
                }
                0
            } else {
                let o = run_emulation(&cfg, &base, out)?;
                let s = &o.summary;
                println!(
                    "{} nodes, {} GPUs, {} samples, {} logs: sealed {} nd, invoiced {} nd, {} duplicates, {:.2} s",
                    s.nodes,
                    s.gpus,
                    s.samples,
                    s.logs_sealed,
                    s.sealed_total,
                    s.invoiced_total,
                    s.duplicates,
                    s.wall_secs
                );
                if s.ok() {
                    println!("conservation: ok");
                    0
                } else {
                    eprintln!("conservation: FAILED ({s:?})");
                    1
                }
            };
            (
                manifest(cli, "emulate", vec![e.config.clone()], args, json_value(&cfg)),
                code,
            )
        }
        Command::Capacity(a) => {
            let est = estimate_capacity(a.nodes, a.gpus, a.period_us, a.sample_bytes)
                .ok_or_else(|| AgoraError::Config("capacity arguments must be positive".into()))?;
            let text = capacity_text(&est);
            print!("{text}");
            fs::create_dir_all(out).map_err(AgoraError::at_path(out))?;
            write_file(out, "capacity.json", &to_json(&est)?)?;
            (manifest(cli, "capacity", vec![], args, None), 0)
        }
        Command::GenTraces(g) => {
            let files = gen_traces(g, cli.seed, out)?;
            println!("wrote {files} traces and distribution.json under {}", out.display());
            (manifest(cli, "gen-traces", vec![], args, None), 0)
        }
        Command::ValidateCurve(v) => {
            // unchecked, so a broken curve is reported rather than refused
            let def: CurveDef = read_json(&v.curve)?;
            let segs: Vec<(f64, f64)> = def.segments.iter().map(|s| (s.bw_tbps, s.cap)).collect();
            let curve = agora_core::FbpCurve::new_unchecked(def.base, &segs);
            let catalog = load_catalog(v.catalog.clone().map(Source::Path).as_ref(), Path::new("."))?;
            let report = validate_desiderata(&curve, &catalog);
            write_file(out, "desiderata.json", &to_json(&report)?)?;
            for w in &report.warnings {
                println!("warning: {w}");
            }
            for v in &report.violations {
                println!("violation: {v}");
            }
            println!(
                "monotone: {}, convex: {}, caps respected: {}",
                report.monotone, report.convex, report.caps_respected
            );
            let code = if report.violations.is_empty() { 0 } else { 1 };
            let paths = std::iter::once(v.curve.clone()).chain(v.catalog.clone()).collect();
            (manifest(cli, "validate-curve", paths, args, None), code)
        }
        Command::Bill(b) => {
            let mut store = DiskStore::open(&b.store, b.keep)?;
            let customers: Vec<u64> = if b.customer.is_empty() {
                store.memory().customers().into_iter().collect()
            } else {
                b.customer.clone()
            };
            let mut invoices = Vec::new();
            for c in customers {
                invoices.push(if b.dry_run {
                    store.invoice_preview(c, b.from..b.to)
                } else {
                    store.billing_export(c, b.from..b.to)?
                });
            }
            write_file(out, "invoices.json", &to_json(&invoices)?)?;
            write_file(out, "invoices.csv", &emit_invoices_csv(&invoices)?)?;
            for i in &invoices {
                println!("customer {}: {} lines, {} nd", i.customer_id, i.lines.len(), i.total.0);
            }
            (manifest(cli, "bill", vec![b.store.clone()], args, None), 0)
        }
        Command::Node(c) => {
            let cfg: NodeConfig = read_json(&c.config)?;
            let spec = cfg.resolve(&base_dir(&c.config))?;
            let stats = run_node_with_abort(&spec, interrupt_flag())?;
            write_file(out, &format!("node-{}-stats.json", spec.node_id), &to_json(&stats)?)?;
            println!(
                "node {}: {} samples, {} logs sealed, {} acked, {} left in journal",
                stats.node_id,
                stats.samples(),
                stats.logs_sealed(),
                stats.logs_acked,
                stats.undelivered
            );
            let code = if stats.undelivered == 0 { 0 } else { 1 };
            (
                manifest(cli, "node", vec![c.config.clone()], args, json_value(&cfg)),
                code,
            )
        }
        Command::Collector(c) => {
            let mut cfg = CollectorConfig::load(&c.config)?;
            if let Some(l) = &cli.label {
                cfg.run_label = l.clone();
            }
            let stop = interrupt_flag();
            let h = collector::start(&cfg)?;
            println!("collector listening on {}", h.addr());
            let until = c.duration_s.map(|s| Instant::now() + Duration::from_secs_f64(s));
            while !stop.load(Ordering::SeqCst) && until.is_none_or(|u| Instant::now() < u) {
                std::thread::sleep(Duration::from_millis(50));
            }
            let stats = h.shutdown()?;
            println!(
                "stored {}, duplicates {}, rejected {}, malformed {}",
                stats.stored, stats.duplicates, stats.rejected, stats.malformed
            );
            (
                manifest(cli, "collector", vec![c.config.clone()], args, json_value(&cfg)),
                0,
            )
        }
    };
    write_file(out, "manifest.json", &to_json(&m)?)?;
    Ok(code)
}

fn three_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let digits = (2 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn scaled(x: f64, base: f64, units: &[&str]) -> String {
    let mut v = x;
    let mut i = 0;
    while v >= base && i + 1 < units.len() {
        v /= base;
        i += 1;
    }
    format!("{} {}", three_sig(v), units[i])
}

/// Human-readable rendering of a capacity estimate.
pub fn capacity_text(est: &agora_core::capacity::CapacityEstimate) -> String {
    format!(
        "ingest: {}\nbandwidth: {}\nstorage: {}/year\n",
        scaled(est.bytes_per_second, 1000.0, &["B/s", "kB/s", "MB/s", "GB/s", "TB/s"]),
        scaled(
            est.bits_per_second,
            1000.0,
            &["bit/s", "kbit/s", "Mbit/s", "Gbit/s", "Tbit/s"]
        ),
        scaled(
            est.bytes_per_year,
            1024.0,
            &["B", "KiB", "MiB", "GiB", "TiB", "PiB", "EiB"]
        ),
    )
}

fn gen_traces(g: &GenTracesArgs, seed: Option<u64>, out: &Path) -> Result<usize> {
    let catalog = load_catalog(g.catalog.clone().map(Source::Path).as_ref(), Path::new("."))?;
    let params = FixtureParams {
        apps: g.apps,
        kernels_per_app: g.kernels,
        seed: seed.unwrap_or(FixtureParams::default().seed),
    };
    let dist = torchbench_like(&catalog, &params)?;
    let (fmt, ext) = match g.format {
        TraceFileFormat::Csv => (TraceFormat::Csv, "csv"),
        TraceFileFormat::Atrc => (TraceFormat::BinarySamples, "atrc"),
    };
    let dir = out.join("traces");
    let mut jobs = Vec::new();
    let mut files = 0;
    for e in dist.entries() {
        let JobSpec::Traces { traces } = &e.spec else { continue };
        let mut bound = std::collections::BTreeMap::new();
        for (gpu, t) in traces {
            let rel = PathBuf::from("traces").join(&e.name).join(format!("{gpu}.{ext}"));
            fs::create_dir_all(dir.join(&e.name)).map_err(AgoraError::at_path(&dir))?;
            save_trace(&out.join(&rel), t, fmt, g.period_us)?;
            bound.insert(gpu.clone(), rel);
            files += 1;
        }
        jobs.push(JobDef {
            name: e.name.clone(),
            weight: e.weight,
            traces: bound,
            llm_decode: None,
        });
    }
    let file = DistributionFile {
        jobs,
        fixture: None,
        models: Vec::new(),
    };
    write_file(out, "distribution.json", &to_json(&file)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(n: u64, g: u64, p: u64, b: u64) -> String {
        capacity_text(&estimate_capacity(n, g, p, b).unwrap())
    }

    #[test]
    fn capacity_rendering() {
        let big = est(500, 8, 50, 8);
        assert!(big.contains("640 MB/s"), "{big}");
        assert!(big.contains("5.12 Gbit/s"), "{big}");
        assert!(big.contains("17.9 PiB/year"), "{big}");
        assert!(est(1, 1, 1_000_000, 8).contains("ingest: 8 B/s"));
        let double = est(1000, 8, 50, 8);
        assert!(
            double.contains("1.28 GB/s") && double.contains("35.9 PiB/year"),
            "{double}"
        );
    }

    #[test]
    fn three_significant_figures() {
        assert_eq!(three_sig(17.926), "17.9");
        assert_eq!(three_sig(640.0), "640");
        assert_eq!(three_sig(8.0), "8");
        assert_eq!(three_sig(5.12), "5.12");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["agora", "capacity", "--nodes", "x"]), 2);
        assert_eq!(run(["agora", "frobnicate"]), 2);
    }
}
