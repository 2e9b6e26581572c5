//! Per-field delta, zigzag and LEB128 varint coding of sample series.
//!
//! Each sample contributes three varints (bw, compute, dram), each the
//! zigzagged difference from the same field of the previous sample. The
//! first sample is coded against zero.

use alloc::vec::Vec;

use super::BillingError;
use crate::telemetry::Sample;

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

fn unzigzag(u: u64) -> i64 {
    ((u >> 1) as i64) ^ -((u & 1) as i64)
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push(v as u8 | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(data: &[u8], pos: &mut usize) -> Result<u64, BillingError> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let b = *data.get(*pos).ok_or(BillingError::Malformed("varint runs past body"))?;
        *pos += 1;
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(BillingError::Malformed("varint too long"))
}

fn fields(s: &Sample) -> [i64; 3] {
    [s.bw_mbps as i64, s.compute as i64, s.dram as i64]
}

pub fn compress(samples: &[Sample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 3);
    let mut prev = [0i64; 3];
    for s in samples {
        let cur = fields(s);
        for (c, p) in cur.iter().zip(&prev) {
            put_varint(&mut out, zigzag(c - p));
        }
        prev = cur;
    }
    out
}

/// Decodes exactly `count` samples; trailing bytes are an error.
pub fn decompress(body: &[u8], count: usize) -> Result<Vec<Sample>, BillingError> {
    let mut out = Vec::with_capacity(count.min(body.len()));
    let mut prev = [0i64; 3];
    let mut pos = 0;
    for _ in 0..count {
        for p in prev.iter_mut() {
            *p = p.wrapping_add(unzigzag(get_varint(body, &mut pos)?));
        }
        let bw = u32::try_from(prev[0]).map_err(|_| BillingError::Malformed("bw out of range"))?;
        let compute = u16::try_from(prev[1]).map_err(|_| BillingError::Malformed("compute out of range"))?;
        let dram = u16::try_from(prev[2]).map_err(|_| BillingError::Malformed("dram out of range"))?;
        out.push(Sample::new(bw, compute, dram));
    }
    if pos != body.len() {
        return Err(BillingError::Malformed("trailing bytes after body"));
    }
    Ok(out)
}
