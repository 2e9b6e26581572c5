//! CSV and JSON emission (and parsing back) for experiment outputs.

use std::fs;
use std::path::Path;

use agora_core::econ::{RevenueReport, SamplingErrorRow};
use agora_core::stats::LatencyRow;
use agora_core::store::Invoice;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AgoraError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn csv_err(e: csv::Error) -> AgoraError {
    AgoraError::Runtime(format!("csv: {e}"))
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| AgoraError::Runtime(e.to_string()))
}

fn from_csv<T: DeserializeOwned>(bytes: &[u8]) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err)
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| AgoraError::Runtime(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

pub fn from_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| AgoraError::Runtime(format!("json: {e}")))
}

pub const REVENUE_HEADER: [&str; 7] = [
    "n_jobs",
    "gpu",
    "mean_tbp",
    "mean_fbp",
    "per_token_fbp",
    "f_percent",
    "seed",
];
pub const SWEEP_HEADER: [&str; 4] = ["period_us", "ideal_mean", "real_mean", "percent_error"];
pub const LATENCY_HEADER: [&str; 7] = ["run_label", "count", "min_us", "mean_us", "p50_us", "p99_us", "max_us"];
pub const INVOICE_HEADER: [&str; 8] = [
    "customer_id",
    "rental_id",
    "node_id",
    "gpu_id",
    "log_seq",
    "date_us",
    "amount_nanodollars",
    "paid_window",
];

/// One CSV row per GPU of a revenue report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueRow {
    pub n_jobs: u64,
    pub gpu: String,
    pub mean_tbp: f64,
    pub mean_fbp: f64,
    pub per_token_fbp: Option<f64>,
    pub f_percent: f64,
    pub seed: u64,
}

pub fn revenue_rows(r: &RevenueReport) -> Vec<RevenueRow> {
    r.mean_tbp
        .iter()
        .map(|(gpu, &tbp)| RevenueRow {
            n_jobs: r.n_jobs,
            gpu: gpu.clone(),
            mean_tbp: tbp,
            mean_fbp: r.mean_fbp,
            per_token_fbp: r.per_token_fbp,
            f_percent: r.f_percent,
            seed: r.seed,
        })
        .collect()
}

pub fn emit_revenue(r: &RevenueReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => to_csv(&revenue_rows(r), &REVENUE_HEADER),
        ReportFormat::Json => to_json(r),
    }
}

pub fn parse_revenue_csv(bytes: &[u8]) -> Result<Vec<RevenueRow>> {
    from_csv(bytes)
}

pub fn emit_sweep(rows: &[SamplingErrorRow], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Csv => to_csv(rows, &SWEEP_HEADER),
        ReportFormat::Json => to_json(rows),
    }
}

pub fn parse_sweep_csv(bytes: &[u8]) -> Result<Vec<SamplingErrorRow>> {
    from_csv(bytes)
}

pub fn emit_latency(rows: &[LatencyRow]) -> Result<Vec<u8>> {
    to_csv(rows, &LATENCY_HEADER)
}

pub fn parse_latency_csv(bytes: &[u8]) -> Result<Vec<LatencyRow>> {
    from_csv(bytes)
}

#[derive(Debug, Serialize)]
struct InvoiceCsvRow {
    customer_id: u64,
    rental_id: u64,
    node_id: u32,
    gpu_id: u8,
    log_seq: u64,
    date_us: u64,
    amount_nanodollars: u64,
    paid_window: String,
}

pub fn emit_invoices_csv(invoices: &[Invoice]) -> Result<Vec<u8>> {
    let rows: Vec<InvoiceCsvRow> = invoices
        .iter()
        .flat_map(|inv| {
            inv.lines.iter().map(move |l| InvoiceCsvRow {
                customer_id: inv.customer_id,
                rental_id: l.rental_id,
                node_id: l.node_id,
                gpu_id: l.gpu_id,
                log_seq: l.log_seq,
                date_us: l.date,
                amount_nanodollars: l.amount.0,
                paid_window: format!("{}-{}", inv.window_start, inv.window_end),
            })
        })
        .collect();
    to_csv(&rows, &INVOICE_HEADER)
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(AgoraError::at_path(dir))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(AgoraError::at_path(&path))
}
