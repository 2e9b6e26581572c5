//! Trace files: CSV records and the fixed-period binary sample format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use agora_core::telemetry::{replay_sampler, Sample, SAMPLE_BYTES};
use agora_core::workload::WorkloadError;
use agora_core::{GpuModel, Trace, UtilizationRecord};
use serde::{Deserialize, Serialize};

use crate::error::{AgoraError, Result};

pub const CSV_HEADER: [&str; 5] = ["duration_us", "bw_tbps", "compute_util", "dram_util", "label"];
pub const BINARY_MAGIC: [u8; 4] = *b"ATRC";
pub const BINARY_VERSION: u8 = 1;
pub const BINARY_PREAMBLE: usize = 24;
const MAX_NAME: usize = BINARY_PREAMBLE - 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    Csv,
    BinarySamples,
}

impl TraceFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("atrc" | "bin") => TraceFormat::BinarySamples,
            _ => TraceFormat::Csv,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    duration_us: u64,
    bw_tbps: f64,
    compute_util: f64,
    dram_util: f64,
    #[serde(default)]
    label: String,
}

fn malformed(location: String, reason: impl ToString) -> WorkloadError {
    WorkloadError::Malformed {
        location,
        reason: reason.to_string(),
    }
}

pub fn parse_trace(input: &[u8], format: TraceFormat, gpu: &GpuModel) -> Result<Trace, WorkloadError> {
    match format {
        TraceFormat::Csv => read_csv(input, gpu),
        TraceFormat::BinarySamples => read_binary(input, gpu),
    }
}

pub fn read_csv<R: Read>(input: R, gpu: &GpuModel) -> Result<Trace, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| malformed("line 1".into(), e))?.clone();
    if headers.is_empty() {
        return Err(WorkloadError::EmptyTrace);
    }
    if headers.iter().take(4).ne(CSV_HEADER.iter().take(4).copied()) {
        return Err(malformed(
            "line 1".into(),
            format!("expected header {}", CSV_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(format!("line {line}"), e)
        })?;
        let r = UtilizationRecord::new(row.duration_us, row.bw_tbps, row.compute_util, row.dram_util);
        records.push(if row.label.is_empty() {
            r
        } else {
            r.with_label(row.label)
        });
    }
    Trace::new(gpu, records, None)
}

pub fn write_csv<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace.records() {
        w.serialize(CsvRow {
            duration_us: r.duration_us,
            bw_tbps: r.bw,
            compute_util: r.compute_util,
            dram_util: r.dram_util,
            label: r.label.clone().unwrap_or_default(),
        })
        .map_err(|e| AgoraError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(AgoraError::io("writing trace csv"))
}

/// Fixed-period samples with the GPU name they were taken on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTrace {
    pub gpu: String,
    pub period_us: u32,
    pub samples: Vec<Sample>,
}

impl BinaryTrace {
    /// Samples `trace` at `period_us`; the final partial period is dropped
    /// only if the trace is shorter than one period.
    pub fn from_trace(trace: &Trace, period_us: u32) -> Self {
        Self {
            gpu: trace.gpu().to_string(),
            period_us,
            samples: replay_sampler(trace, period_us as u64).map(|t| t.sample).collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let name = self.gpu.as_bytes();
        if name.len() > MAX_NAME {
            return Err(AgoraError::Config(format!(
                "GPU name `{}` longer than {MAX_NAME} bytes",
                self.gpu
            )));
        }
        let mut out = Vec::with_capacity(BINARY_PREAMBLE + self.samples.len() * SAMPLE_BYTES);
        out.extend_from_slice(&BINARY_MAGIC);
        out.push(BINARY_VERSION);
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.period_us.to_le_bytes());
        out.push(name.len() as u8);
        out.extend_from_slice(name);
        out.resize(BINARY_PREAMBLE, 0);
        for s in &self.samples {
            out.extend_from_slice(&s.bw_mbps.to_le_bytes());
            out.extend_from_slice(&s.compute.to_le_bytes());
            out.extend_from_slice(&s.dram.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(b: &[u8]) -> Result<Self, WorkloadError> {
        let at = |off: usize| format!("offset {off}");
        if b.is_empty() {
            return Err(WorkloadError::EmptyTrace);
        }
        if b.len() < BINARY_PREAMBLE {
            return Err(malformed(at(b.len()), "preamble is 24 bytes"));
        }
        if b[..4] != BINARY_MAGIC {
            return Err(malformed(at(0), "bad magic"));
        }
        if b[4] != BINARY_VERSION {
            return Err(malformed(at(4), format!("unsupported version {}", b[4])));
        }
        let count = u32::from_le_bytes(b[5..9].try_into().unwrap()) as usize;
        let period_us = u32::from_le_bytes(b[9..13].try_into().unwrap());
        let name_len = b[13] as usize;
        if name_len > MAX_NAME {
            return Err(malformed(at(13), "GPU name too long"));
        }
        let gpu = std::str::from_utf8(&b[14..14 + name_len])
            .map_err(|_| malformed(at(14), "GPU name is not UTF-8"))?
            .to_string();
        let body = &b[BINARY_PREAMBLE..];
        if body.len() != count * SAMPLE_BYTES {
            return Err(malformed(
                at(BINARY_PREAMBLE + body.len().min(count * SAMPLE_BYTES)),
                format!("expected {count} records of 8 bytes"),
            ));
        }
        let samples = body
            .chunks_exact(SAMPLE_BYTES)
            .map(|c| {
                Sample::new(
                    u32::from_le_bytes(c[..4].try_into().unwrap()),
                    u16::from_le_bytes([c[4], c[5]]),
                    u16::from_le_bytes([c[6], c[7]]),
                )
            })
            .collect();
        Ok(Self {
            gpu,
            period_us,
            samples,
        })
    }

    /// One record per sample, each one period long.
    pub fn to_trace(&self, gpu: &GpuModel) -> Result<Trace, WorkloadError> {
        if self.gpu != gpu.name {
            return Err(malformed(
                "offset 14".into(),
                format!("trace was taken on {}, not {}", self.gpu, gpu.name),
            ));
        }
        if self.period_us == 0 {
            return Err(malformed("offset 9".into(), "period must be positive"));
        }
        let records = self
            .samples
            .iter()
            .map(|s| UtilizationRecord::new(self.period_us as u64, s.bw_tbps(), s.compute_util(), s.dram_util()))
            .collect();
        Trace::new(gpu, records, None)
    }
}

fn read_binary(input: &[u8], gpu: &GpuModel) -> Result<Trace, WorkloadError> {
    BinaryTrace::decode(input)?.to_trace(gpu)
}

pub fn load_trace(path: &Path, gpu: &GpuModel) -> Result<Trace> {
    let bytes = fs::read(path).map_err(AgoraError::at_path(path))?;
    parse_trace(&bytes, TraceFormat::from_path(path), gpu)
        .map_err(|e| AgoraError::Config(format!("{}: {e}", path.display())))
}

pub fn save_trace(path: &Path, trace: &Trace, format: TraceFormat, period_us: u32) -> Result<()> {
    let bytes = match format {
        TraceFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(&mut buf, trace)?;
            buf
        }
        TraceFormat::BinarySamples => BinaryTrace::from_trace(trace, period_us).encode()?,
    };
    fs::write(path, bytes).map_err(AgoraError::at_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use agora_core::GpuCatalog;

    fn gpu(name: &str) -> GpuModel {
        GpuCatalog::reference().get(name).unwrap().clone()
    }

    #[test]
    fn csv_single_row() {
        let input = "duration_us,bw_tbps,compute_util,dram_util,label\n1000,0.62,0.5,0.4,kernA\n";
        let t = read_csv(input.as_bytes(), &gpu("H100")).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.total_us(), 1000);
        assert_eq!(t.records()[0].bw, 0.62);
        assert_eq!(t.records()[0].label.as_deref(), Some("kernA"));
    }

    #[test]
    fn csv_errors() {
        assert_eq!(read_csv(&b""[..], &gpu("H100")), Err(WorkloadError::EmptyTrace));
        let header_only = "duration_us,bw_tbps,compute_util,dram_util,label\n";
        assert_eq!(
            read_csv(header_only.as_bytes(), &gpu("H100")),
            Err(WorkloadError::EmptyTrace)
        );
        let too_fast = "duration_us,bw_tbps,compute_util,dram_util,label\n10,5.0,0.5,0.5,\n";
        assert!(matches!(
            read_csv(too_fast.as_bytes(), &gpu("A100")),
            Err(WorkloadError::BwExceedsGpu { index: 0, .. })
        ));
        let junk = "duration_us,bw_tbps,compute_util,dram_util,label\n10,0.5,0.5,0.5,a\nx,1,1,1,b\n";
        match read_csv(junk.as_bytes(), &gpu("A100")) {
            Err(WorkloadError::Malformed { location, .. }) => assert_eq!(location, "line 3"),
            other => panic!("{other:?}"),
        }
        let wrong = "a,b,c,d,e\n1,1,1,1,x\n";
        assert!(matches!(
            read_csv(wrong.as_bytes(), &gpu("A100")),
            Err(WorkloadError::Malformed { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let g = gpu("A100");
        let t = Trace::new(
            &g,
            vec![
                UtilizationRecord::new(10, 0.123456789, 0.25, 0.5).with_label("k0"),
                UtilizationRecord::new(7, 2.039, 1.0, 0.0),
            ],
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &t).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &g).unwrap(), t);
    }

    #[test]
    fn binary_layout_and_round_trip() {
        let b = BinaryTrace {
            gpu: "H100".into(),
            period_us: 50,
            samples: vec![Sample::new(620_000, 32768, 100), Sample::new(1, 2, 3)],
        };
        let bytes = b.encode().unwrap();
        assert_eq!(bytes.len(), 24 + 16);
        assert_eq!(&bytes[..5], b"ATRC\x01");
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &50u32.to_le_bytes());
        assert_eq!(&bytes[13..18], b"\x04H100");
        assert_eq!(&bytes[24..28], &620_000u32.to_le_bytes());
        assert_eq!(BinaryTrace::decode(&bytes).unwrap(), b);
        let t = parse_trace(&bytes, TraceFormat::BinarySamples, &gpu("H100")).unwrap();
        assert_eq!(t.total_us(), 100);
        assert_eq!(t.records()[0].bw, 0.62);
        assert!(parse_trace(&bytes, TraceFormat::BinarySamples, &gpu("A100")).is_err());
        assert!(BinaryTrace::decode(&bytes[..30]).is_err());
        assert_eq!(BinaryTrace::decode(&[]), Err(WorkloadError::EmptyTrace));
    }
}
