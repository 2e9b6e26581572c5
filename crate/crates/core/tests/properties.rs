use agora_core::billing::{compress, decompress, GpuMeter, LogBuilder, StreamId, WireFrame};
use agora_core::econ::{price_ideal, price_sampled, SamplingConfig, SamplingMode};
use agora_core::money::Nanodollars;
use agora_core::pricing::validate_desiderata;
use agora_core::store::RollingStore;
use agora_core::telemetry::replay_sampler;
use agora_core::{FbpCurve, GpuCatalog, Sample, Trace, UtilizationRecord};
use proptest::prelude::*;

fn h100_trace(recs: &[(u64, f64)]) -> Trace {
    let cat = GpuCatalog::reference();
    Trace::new(
        cat.get("H100").unwrap(),
        recs.iter()
            .map(|&(d, bw)| UtilizationRecord::new(d, bw, 0.5, 0.5))
            .collect(),
        None,
    )
    .unwrap()
}

fn records() -> impl Strategy<Value = Vec<(u64, f64)>> {
    prop::collection::vec((1u64..600, 0.0f64..=3.35), 1..24)
}

/// Bandwidths on the 1 MB/s telemetry grid.
fn quantized_records() -> impl Strategy<Value = Vec<(u64, f64)>> {
    prop::collection::vec((1u64..600, 0u32..=3_350_000), 1..24)
        .prop_map(|v| v.into_iter().map(|(d, mb)| (d, mb as f64 / 1e6)).collect())
}

/// Convex increasing two-segment curves over the H100 domain.
fn convex_curve() -> impl Strategy<Value = FbpCurve> {
    (0.5f64..10.0, 0.01f64..5.0, 0.0f64..20.0, 0.5f64..3.0).prop_map(|(base, s1, extra, knee)| {
        let c1 = base + s1 * knee;
        let s2 = s1 + extra;
        let c2 = c1 + s2 * (3.35 - knee);
        FbpCurve::build(base, &[(knee, c1), (3.35, c2)]).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn curve_hits_its_anchors(curve in convex_curve()) {
        for (bw, cap) in curve.anchors() {
            prop_assert_eq!(curve.rate_nanos_per_hour(bw).unwrap(), cap.0 as f64);
        }
        prop_assert!(curve.is_monotone());
        prop_assert!(curve.is_convex());
        let ext = curve.extend(8.0, 200.0).unwrap();
        for (bw, cap) in curve.anchors() {
            prop_assert_eq!(ext.rate_nanos_per_hour(bw).unwrap().to_bits(), (cap.0 as f64).to_bits());
        }
    }

    #[test]
    fn curve_is_monotone_between_anchors(curve in convex_curve(), a in 0.0f64..3.35, b in 0.0f64..3.35) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(curve.price_per_hour(lo).unwrap() <= curve.price_per_hour(hi).unwrap());
    }

    #[test]
    fn ideal_price_ignores_record_splits(recs in records(), split in 1u64..600) {
        let c = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let whole = h100_trace(&recs);
        let pieces: Vec<(u64, f64)> = recs
            .iter()
            .flat_map(|&(d, bw)| {
                let a = split.min(d);
                [(a, bw), (d - a, bw)].into_iter().filter(|p| p.0 > 0)
            })
            .collect();
        let split_trace = h100_trace(&pieces);
        prop_assert_eq!(price_ideal(&whole, &c).unwrap(), price_ideal(&split_trace, &c).unwrap());
    }

    #[test]
    fn window_average_never_overcharges(recs in records(), curve in convex_curve(), period in 1u64..2000) {
        let t = h100_trace(&recs);
        let ideal = price_ideal(&t, &curve).unwrap();
        let real = price_sampled(&t, &curve, &SamplingConfig::window_average(period)).unwrap();
        prop_assert!(real <= ideal + 1e-9, "{} > {}", real, ideal);
    }

    #[test]
    fn window_average_error_shrinks_as_period_halves(recs in records(), curve in convex_curve()) {
        let t = h100_trace(&recs);
        let ideal = price_ideal(&t, &curve).unwrap();
        let mut last = f64::INFINITY;
        for k in (0..=10).rev() {
            let real = price_sampled(&t, &curve, &SamplingConfig::window_average(1 << k)).unwrap();
            let err = (real - ideal).abs();
            prop_assert!(err <= last + ideal * 1e-12, "period {}: {} > {}", 1 << k, err, last);
            last = err;
        }
        prop_assert_eq!(last, 0.0);
    }

    #[test]
    fn sampled_equals_ideal_when_period_divides(recs in prop::collection::vec((1u64..40, 0.0f64..=3.35), 1..24), p in 1u64..8) {
        let c = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let recs: Vec<_> = recs.into_iter().map(|(d, bw)| (d * p, bw)).collect();
        let t = h100_trace(&recs);
        let ideal = price_ideal(&t, &c).unwrap();
        for mode in [SamplingMode::Instantaneous, SamplingMode::WindowAverage] {
            prop_assert_eq!(price_sampled(&t, &c, &SamplingConfig::new(p, mode)).unwrap(), ideal);
        }
    }

    #[test]
    fn replay_tick_count(recs in records(), period in 1u64..500) {
        let t = h100_trace(&recs);
        let ticks: Vec<_> = replay_sampler(&t, period).collect();
        prop_assert_eq!(ticks.len() as u64, t.total_us().div_ceil(period));
        prop_assert_eq!(ticks.iter().map(|k| k.len_us).sum::<u64>(), t.total_us());
    }

    #[test]
    fn meter_agrees_with_instantaneous_pricing(recs in quantized_records(), period in 1u64..300, per_log in 1usize..50) {
        let c = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
        let t = h100_trace(&recs);
        let mut meter = GpuMeter::new(c.clone());
        let incs: Vec<u64> = replay_sampler(&t, period)
            .map(|k| meter.price(&k.sample, k.len_us).unwrap().0)
            .collect();
        let logs = incs.chunks(per_log).count() as f64;
        let total: u64 = incs.iter().sum();
        let expected = price_sampled(&t, &c, &SamplingConfig::instantaneous(period)).unwrap() * 1e9;
        prop_assert!((total as f64 - expected).abs() <= 1.0_f64.min(logs), "{} vs {}", total, expected);
    }

    #[test]
    fn compression_round_trips(raw in prop::collection::vec(any::<(u32, u16, u16)>(), 0..300)) {
        let samples: Vec<Sample> = raw.into_iter().map(|(a, b, c)| Sample::new(a, b, c)).collect();
        prop_assert_eq!(decompress(&compress(&samples), samples.len()).unwrap(), samples);
    }

    #[test]
    fn header_amount_is_sum_of_increments(incs in prop::collection::vec(0u64..1_000_000, 0..200)) {
        let stream = StreamId { customer_id: 1, rental_id: 1, node_id: 1, gpu_id: 1 };
        let mut b = LogBuilder::open(stream, 0, 50, 0, 0).unwrap();
        for &i in &incs {
            b.append(Sample::default(), Nanodollars(i)).unwrap();
        }
        prop_assert_eq!(b.header().amount.0, incs.iter().sum::<u64>());
        prop_assert_eq!(b.header().sample_count as usize, incs.len());
    }

    #[test]
    fn frames_decode_from_concatenation(payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 1..10)) {
        let stream = StreamId { customer_id: 3, rental_id: 4, node_id: 5, gpu_id: 6 };
        let frames: Vec<WireFrame> = payloads
            .into_iter()
            .enumerate()
            .map(|(i, payload)| WireFrame { stream, log_seq: i as u64, payload })
            .collect();
        let buf: Vec<u8> = frames.iter().flat_map(|f| f.encode().unwrap()).collect();
        let mut pos = 0;
        let mut out = Vec::new();
        while pos < buf.len() {
            let (f, n) = WireFrame::decode(&buf[pos..]).unwrap();
            out.push(f);
            pos += n;
        }
        prop_assert_eq!(out, frames);
    }

    #[test]
    fn billing_is_invariant_to_truncation_schedule(
        amounts in prop::collection::vec(0u64..10_000, 1..40),
        keep in 1usize..6,
        schedule in prop::collection::vec(any::<bool>(), 40),
        cut in 0u64..60,
    ) {
        let stream = StreamId { customer_id: 9, rental_id: 1, node_id: 1, gpu_id: 0 };
        let header = |seq: u64, amount: u64| {
            let mut b = LogBuilder::open(stream, seq, 50, 0, seq).unwrap();
            b.append(Sample::default(), Nanodollars(amount)).unwrap();
            *b.header()
        };
        let mut plain = RollingStore::new(keep);
        let mut rolled = RollingStore::new(keep);
        let mut invoices_plain = Vec::new();
        let mut invoices_rolled = Vec::new();
        for (i, &a) in amounts.iter().enumerate() {
            plain.insert(header(i as u64, a), vec![0; 8]);
            rolled.ingest(header(i as u64, a), vec![0; 8]);
            if schedule[i] {
                rolled.truncate_rolling(&stream);
            }
            if i as u64 == cut {
                invoices_plain.push(plain.billing_export(9, 0..cut));
                invoices_rolled.push(rolled.billing_export(9, 0..cut));
            }
        }
        invoices_plain.push(plain.billing_export(9, 0..u64::MAX));
        invoices_rolled.push(rolled.billing_export(9, 0..u64::MAX));
        prop_assert_eq!(&invoices_plain, &invoices_rolled);
        let billed: u64 = invoices_plain.iter().map(|i| i.total.0).sum();
        prop_assert_eq!(billed, amounts.iter().sum::<u64>());
        prop_assert!(rolled.logs(&stream).filter(|l| l.body.is_some()).count() <= keep);
    }
}

#[test]
fn reference_curve_meets_desiderata() {
    let c = FbpCurve::build(4.0, &[(2.039, 5.06), (3.35, 15.0)]).unwrap();
    let cat = GpuCatalog::reference().subset(&["A100", "H100"]).unwrap();
    assert!(validate_desiderata(&c, &cat).is_valid());
}
