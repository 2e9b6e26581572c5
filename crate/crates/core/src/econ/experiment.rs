use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{price_ideal, price_sampled, EconError, SamplingConfig};
use crate::money::Nanodollars;
use crate::pricing::{tbp_cost_micros, FbpCurve, GpuCatalog};
use crate::workload::{JobDistribution, JobSampler, ResolvedJob};

/// Monte-Carlo sample size used when none is configured.
pub const DEFAULT_N_JOBS: u64 = 10_000;

/// Mean revenue of one curve against TBP over `n_jobs` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueReport {
    pub n_jobs: u64,
    pub reference_gpu: String,
    pub curve: String,
    /// Dollars per job, keyed by GPU name.
    pub mean_tbp: BTreeMap<String, f64>,
    /// Dollars per job on the reference GPU.
    pub mean_fbp: f64,
    /// Nanodollars per token, over draws that carry a token count.
    pub per_token_fbp: Option<f64>,
    pub f_percent: f64,
    pub seed: u64,
}

/// Sampling error at one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingErrorRow {
    pub period_us: u64,
    pub ideal_mean: f64,
    pub real_mean: f64,
    /// Negative means the sampled price undercharges.
    pub percent_error: f64,
}

/// Share of jobs (in percent) charged strictly more under FBP than TBP.
/// Costs are compared at whole-nanodollar resolution, so ties within
/// rounding noise count as not charged more.
pub fn f_percent(costs_fbp: &[f64], costs_tbp: &[f64]) -> Result<f64, EconError> {
    if costs_fbp.len() != costs_tbp.len() {
        return Err(EconError::LengthMismatch {
            fbp: costs_fbp.len(),
            tbp: costs_tbp.len(),
        });
    }
    if costs_fbp.is_empty() {
        return Err(EconError::Empty);
    }
    let above = costs_fbp
        .iter()
        .zip(costs_tbp)
        .filter(|(&f, &t)| charged_more(f, t))
        .count();
    Ok(100.0 * above as f64 / costs_fbp.len() as f64)
}

fn charged_more(fbp: f64, tbp: f64) -> bool {
    Nanodollars::from_dollars(fbp) > Nanodollars::from_dollars(tbp)
}

struct Prepared {
    jobs: Vec<ResolvedJob>,
    reference: usize,
    draws: Vec<usize>,
}

fn prepare(
    dist: &JobDistribution,
    catalog: &GpuCatalog,
    reference_gpu: &str,
    n_jobs: u64,
    seed: u64,
) -> Result<Prepared, EconError> {
    if n_jobs == 0 {
        return Err(EconError::NoJobs);
    }
    let reference = catalog
        .iter()
        .position(|g| g.name == reference_gpu)
        .ok_or_else(|| EconError::UnknownGpu(reference_gpu.to_string()))?;
    let jobs = dist.resolve(catalog)?;
    let mut sampler = JobSampler::new(dist, seed);
    let draws = (0..n_jobs).map(|_| sampler.next_index()).collect();
    Ok(Prepared { jobs, reference, draws })
}

/// Draws `n_jobs` jobs from `dist` and prices each under TBP on every
/// catalog GPU and under ideal FBP on the reference GPU.
///
/// Per-entry prices are computed once and the draws then index into them,
/// so the result depends only on the inputs and the seed.
pub fn run_experiment(
    dist: &JobDistribution,
    curve: &FbpCurve,
    catalog: &GpuCatalog,
    reference_gpu: &str,
    n_jobs: u64,
    seed: u64,
) -> Result<RevenueReport, EconError> {
    let p = prepare(dist, catalog, reference_gpu, n_jobs, seed)?;

    let fbp: Vec<f64> = p
        .jobs
        .iter()
        .map(|j| price_ideal(&j.traces[p.reference], curve))
        .collect::<Result<_, _>>()?;
    let tbp: Vec<Vec<f64>> = p
        .jobs
        .iter()
        .map(|j| {
            catalog
                .iter()
                .zip(&j.traces)
                .map(|(g, t)| tbp_cost_micros(g, t.total_us()))
                .collect()
        })
        .collect();
    let tokens: Vec<Option<u64>> = p.jobs.iter().map(|j| j.traces[p.reference].token_count()).collect();

    let n = p.draws.len() as f64;
    let mut tbp_sums = alloc::vec![0.0; catalog.len()];
    let mut fbp_sum = 0.0;
    let mut per_token_sum = 0.0;
    let mut token_draws = 0u64;
    let mut above = 0u64;
    for &d in &p.draws {
        fbp_sum += fbp[d];
        for (s, c) in tbp_sums.iter_mut().zip(&tbp[d]) {
            *s += c;
        }
        if let Some(tc) = tokens[d].filter(|&tc| tc > 0) {
            per_token_sum += fbp[d] * 1e9 / tc as f64;
            token_draws += 1;
        }
        if charged_more(fbp[d], tbp[d][p.reference]) {
            above += 1;
        }
    }

    Ok(RevenueReport {
        n_jobs,
        reference_gpu: reference_gpu.to_string(),
        curve: curve.to_string(),
        mean_tbp: catalog
            .iter()
            .zip(&tbp_sums)
            .map(|(g, s)| (g.name.clone(), s / n))
            .collect(),
        mean_fbp: fbp_sum / n,
        per_token_fbp: (token_draws > 0).then(|| per_token_sum / token_draws as f64),
        f_percent: 100.0 * above as f64 / n,
        seed,
    })
}

/// Ideal vs window-averaged FBP revenue at each sampling period, on one
/// shared set of draws.
#[allow(clippy::too_many_arguments)]
pub fn sampling_error_sweep(
    dist: &JobDistribution,
    curve: &FbpCurve,
    catalog: &GpuCatalog,
    reference_gpu: &str,
    periods_us: &[u64],
    n_jobs: u64,
    seed: u64,
) -> Result<Vec<SamplingErrorRow>, EconError> {
    if periods_us.is_empty() {
        return Err(EconError::BadPeriod);
    }
    let p = prepare(dist, catalog, reference_gpu, n_jobs, seed)?;
    let ideal: Vec<f64> = p
        .jobs
        .iter()
        .map(|j| price_ideal(&j.traces[p.reference], curve))
        .collect::<Result<_, _>>()?;
    let n = p.draws.len() as f64;
    let ideal_mean = p.draws.iter().map(|&d| ideal[d]).sum::<f64>() / n;

    periods_us
        .iter()
        .map(|&period| {
            let cfg = SamplingConfig::window_average(period);
            let real: Vec<f64> = p
                .jobs
                .iter()
                .map(|j| price_sampled(&j.traces[p.reference], curve, &cfg))
                .collect::<Result<_, _>>()?;
            let real_mean = p.draws.iter().map(|&d| real[d]).sum::<f64>() / n;
            Ok(SamplingErrorRow {
                period_us: period,
                ideal_mean,
                real_mean,
                percent_error: (real_mean - ideal_mean) / ideal_mean * 100.0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{JobEntry, JobSpec, Trace, UtilizationRecord};
    use alloc::format;
    use alloc::vec;

    fn catalog() -> GpuCatalog {
        GpuCatalog::reference().subset(&["A100", "H100"]).unwrap()
    }

    fn job(name: &str, h100: &[(u64, f64)], a100_scale: f64) -> JobEntry {
        let cat = catalog();
        let mk = |gpu: &str, recs: Vec<UtilizationRecord>| Trace::new(cat.get(gpu).unwrap(), recs, None).unwrap();
        let h: Vec<_> = h100
            .iter()
            .map(|&(d, bw)| UtilizationRecord::new(d, bw, 0.0, 0.0))
            .collect();
        let a: Vec<_> = h100
            .iter()
            .map(|&(d, bw)| {
                UtilizationRecord::new((d as f64 * a100_scale) as u64, (bw / a100_scale).min(2.039), 0.0, 0.0)
            })
            .collect();
        let mut traces = BTreeMap::new();
        traces.insert("H100".to_string(), mk("H100", h));
        traces.insert("A100".to_string(), mk("A100", a));
        JobEntry::new(name, JobSpec::Traces { traces }, 1.0)
    }

    #[test]
    fn f_percent_examples() {
        assert_eq!(f_percent(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(f_percent(&[1.000001, 2.000001], &[1.0, 2.0]).unwrap(), 100.0);
        let f = f_percent(&[1.0, 3.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!((f - 100.0 / 3.0).abs() < 1e-12);
        assert!(matches!(f_percent(&[1.0], &[]), Err(EconError::LengthMismatch { .. })));
        assert_eq!(f_percent(&[], &[]), Err(EconError::Empty));
    }

    #[test]
    fn curve_below_tbp_never_charges_more() {
        let dist = JobDistribution::new(vec![
            job("a", &[(1000, 3.35), (500, 0.1)], 1.5),
            job("b", &[(2000, 2.0)], 1.2),
        ])
        .unwrap();
        let curve = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 11.0)]).unwrap();
        let r = run_experiment(&dist, &curve, &catalog(), "H100", 1000, 1).unwrap();
        assert_eq!(r.f_percent, 0.0);
    }

    #[test]
    fn one_of_four_charged_more() {
        // H100 TBP is 11.06/h. Job "hot" runs at the top of a curve capped at
        // 15/h, the rest stay on the cheap segment.
        let curve = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let jobs: Vec<_> = (0..3)
            .map(|i| job(&format!("cool{i}"), &[(1000, 0.5)], 1.5))
            .chain([job("hot", &[(1000, 3.35)], 1.7)])
            .collect();
        let costs_fbp: Vec<f64> = jobs
            .iter()
            .map(|j| price_ideal(&j.trace_for(catalog().get("H100").unwrap()).unwrap(), &curve).unwrap())
            .collect();
        let costs_tbp = vec![tbp_cost_micros(catalog().get("H100").unwrap(), 1000); 4];
        assert_eq!(f_percent(&costs_fbp, &costs_tbp).unwrap(), 25.0);
    }

    #[test]
    fn dominance_is_monotone_and_deterministic() {
        let dist = JobDistribution::new(vec![
            job("a", &[(1000, 3.0), (500, 0.1)], 1.5),
            job("b", &[(2000, 1.0)], 1.2),
            job("c", &[(300, 2.5), (300, 0.0)], 1.4),
        ])
        .unwrap();
        let lo = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let hi = FbpCurve::build(4.0, &[(2.039, 10.0), (3.35, 60.0)]).unwrap();
        let a = run_experiment(&dist, &lo, &catalog(), "H100", 500, 9).unwrap();
        let b = run_experiment(&dist, &hi, &catalog(), "H100", 500, 9).unwrap();
        assert!(b.mean_fbp >= a.mean_fbp);
        assert!(b.f_percent >= a.f_percent);
        assert_eq!(a.mean_tbp, b.mean_tbp);
        assert_eq!(a, run_experiment(&dist, &lo, &catalog(), "H100", 500, 9).unwrap());
    }

    #[test]
    fn experiment_errors() {
        let dist = JobDistribution::new(vec![job("a", &[(10, 1.0)], 1.0)]).unwrap();
        let curve = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        assert!(matches!(
            run_experiment(&dist, &curve, &catalog(), "B200", 10, 0),
            Err(EconError::UnknownGpu(_))
        ));
        assert_eq!(
            run_experiment(&dist, &curve, &catalog(), "H100", 0, 0),
            Err(EconError::NoJobs)
        );
        let full = GpuCatalog::reference();
        assert!(matches!(
            run_experiment(&dist, &curve, &full, "H100", 10, 0),
            Err(EconError::Workload(_))
        ));
        assert!(sampling_error_sweep(&dist, &curve, &catalog(), "H100", &[], 10, 0).is_err());
    }

    #[test]
    fn sweep_rows_share_ideal_mean() {
        let dist = JobDistribution::new(vec![job("a", &[(37, 3.0), (11, 0.1), (90, 2.2)], 1.5)]).unwrap();
        let curve = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let rows = sampling_error_sweep(&dist, &curve, &catalog(), "H100", &[1, 10, 50], 100, 3).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].ideal_mean == w[1].ideal_mean));
        assert_eq!(rows[0].percent_error, 0.0);
        assert!(rows.iter().all(|r| r.percent_error <= 0.0));
    }
}
