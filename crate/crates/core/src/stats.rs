//! Order statistics over log arrival latencies.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no latencies to summarize")]
    Empty,
}

/// Summary of one run label's latencies, in microseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub run_label: String,
    pub count: u64,
    pub min_us: u64,
    pub mean_us: f64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`, 1-based.
pub fn nearest_rank(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = libm::ceil(p / 100.0 * sorted.len() as f64) as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Groups `(run_label, latency_us)` pairs by label and summarizes each
/// group. Rows are ordered by label.
pub fn latency_report<'a, I>(arrivals: I) -> Result<Vec<LatencyRow>, StatsError>
where
    I: IntoIterator<Item = (&'a str, u64)>,
{
    let mut groups: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for (label, lat) in arrivals {
        groups.entry(label).or_default().push(lat);
    }
    if groups.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(groups
        .into_iter()
        .map(|(label, mut v)| {
            v.sort_unstable();
            let sum: u128 = v.iter().map(|&x| x as u128).sum();
            LatencyRow {
                run_label: label.into(),
                count: v.len() as u64,
                min_us: v[0],
                mean_us: sum as f64 / v.len() as f64,
                p50_us: nearest_rank(&v, 50.0).unwrap_or_default(),
                p99_us: nearest_rank(&v, 99.0).unwrap_or_default(),
                max_us: v[v.len() - 1],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value() {
        let r = latency_report([("a", 5000)]).unwrap();
        assert_eq!(r.len(), 1);
        let r = &r[0];
        assert_eq!((r.min_us, r.p50_us, r.p99_us, r.max_us), (5000, 5000, 5000, 5000));
        assert_eq!(r.mean_us, 5000.0);
    }

    #[test]
    fn nearest_rank_median_of_four() {
        let r = latency_report([("a", 4000), ("a", 1000), ("a", 3000), ("a", 2000)]).unwrap();
        assert_eq!(r[0].mean_us, 2500.0);
        assert_eq!(r[0].p50_us, 2000);
        assert_eq!(r[0].p99_us, 4000);
    }

    #[test]
    fn groups_by_label() {
        let r = latency_report([("50us", 1), ("10us", 2), ("50us", 3)]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].run_label, "10us");
        assert_eq!(r[1].count, 2);
        assert_eq!(latency_report(core::iter::empty()), Err(StatsError::Empty));
    }

    #[test]
    fn p99_of_hundred() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 99.0), Some(99));
        assert_eq!(nearest_rank(&v, 100.0), Some(100));
        assert_eq!(nearest_rank(&v, 0.0), Some(1));
    }
}
