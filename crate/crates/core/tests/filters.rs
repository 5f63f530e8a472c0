mod common;

use common::*;
use ledgerlens::measures::Triplet;
use ledgerlens::{
    apply_filter, build_entities, build_slices, histogram, tx_volume, ActivityMeasures, Bucket, EntityId, EntitySet,
    MeasureTable, Predicate, Scalar, Scale, Series, TransactionStore,
};
use proptest::prelude::*;

/// A table whose `amount_sent` average equals the given value (absent for `None`).
fn table_of(values: &[Option<u64>]) -> MeasureTable {
    let one = Triplet { smallest: 1, largest: 1, sum: 1, count: 1 };
    let rows = values
        .iter()
        .enumerate()
        .map(|(i, v)| ActivityMeasures {
            entity: EntityId(i as u32),
            num_txs: 1,
            num_txs_sender: u64::from(v.is_some()),
            num_txs_receiver: 1,
            time_first: 0,
            time_last: 0,
            amount_rec: Some(one),
            amount_sent: v.map(|v| Triplet { smallest: v, largest: v, sum: v as u128, count: 1 }),
            num_inputs: one,
            num_outputs: one,
        })
        .collect();
    MeasureTable::from_rows(0, 1, rows)
}

fn sent() -> Series {
    Series::parse("amount_sent", Some("average")).unwrap()
}

/// Independent binning: linear scan for the last edge not above `v`.
fn oracle_counts(edges: &[f64], values: &[f64]) -> Vec<u64> {
    let n = edges.len() - 1;
    let mut counts = vec![0; n];
    for &v in values {
        let mut bin = 0;
        for (i, &e) in edges[..n].iter().enumerate() {
            if e <= v {
                bin = i;
            }
        }
        counts[bin] += 1;
    }
    counts
}

fn heavy_tailed() -> impl Strategy<Value = Vec<Option<u64>>> {
    prop::collection::vec(prop::option::weighted(0.9, (0.0f64..12.0).prop_map(|e| 10f64.powf(e) as u64 + 1)), 0..300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn histogram_counts_match_independent_binning(values in heavy_tailed(), bins in 1usize..80, scale in prop::option::of(prop_oneof![Just(Scale::Linear), Just(Scale::Log10)])) {
        let table = table_of(&values);
        let set = table.entities();
        let h = histogram::<f64>(&table, &set, sent(), bins, scale).unwrap();
        let defined: Vec<f64> = values.iter().flatten().map(|&v| v as f64).collect();
        prop_assert_eq!(h.undefined as usize, values.len() - defined.len());
        prop_assert_eq!(h.total() as usize, values.len());
        prop_assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(h.counts.clone(), oracle_counts(&h.edges, &defined));
        if defined.is_empty() {
            prop_assert_eq!(h.counts.len(), bins);
            prop_assert!(h.counts.iter().all(|&c| c == 0));
            return Ok(());
        }
        let (min, max) = defined.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert_eq!(h.edges[0], min);
        if min == max {
            prop_assert_eq!(h.edges.clone(), vec![min, min + 1.0]);
        } else {
            prop_assert_eq!(*h.edges.last().unwrap(), max);
            let expected_scale = scale.unwrap_or(if max / min > 1e3 { Scale::Log10 } else { Scale::Linear });
            prop_assert_eq!(h.scale, expected_scale);
            // equal widths in the chosen space
            let map = |v: f64| if h.scale == Scale::Log10 { v.log10() } else { v };
            let width = (map(max) - map(min)) / bins as f64;
            for (i, &e) in h.edges.iter().enumerate().take(h.edges.len() - 1) {
                let expected = map(min) + width * i as f64;
                prop_assert!((map(e) - expected).abs() <= 1e-9 * (1.0 + map(max).abs()));
            }
        }
    }

    #[test]
    fn filters_partition_and_are_idempotent(values in heavy_tailed(), lo in prop::option::of(0u64..1_000_000), span in prop::option::of(0u64..1_000_000_000)) {
        let table = table_of(&values);
        let set = table.entities();
        let p = Predicate::<f64>::new(sent(), lo.map(|v| v as f64), lo.zip(span).map(|(l, s)| (l + s) as f64)).unwrap();
        let (hit, miss) = apply_filter(&table, &set, &p).unwrap();
        prop_assert_eq!(hit.len() + miss.len(), set.len());
        prop_assert!(hit.is_subset(&set) && miss.is_subset(&set));
        prop_assert_eq!(hit.difference(&miss).len(), hit.len());
        let (again, rest) = apply_filter(&table, &hit, &p).unwrap();
        prop_assert_eq!(&again, &hit);
        prop_assert!(rest.is_empty());
        for e in &hit {
            prop_assert!(values[e.index()].is_some());
        }
    }

    #[test]
    fn bin_aligned_predicates_match_bin_counts(values in heavy_tailed(), bins in 1usize..60, a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let table = table_of(&values);
        let set = table.entities();
        let h = histogram::<f64>(&table, &set, sent(), bins, None).unwrap();
        let n = h.counts.len();
        let (i, j) = { let (x, y) = (a.index(n), b.index(n)); (x.min(y), x.max(y)) };
        let hi = if j + 1 == n { h.edges[n] } else { h.edges[j + 1].next_below() };
        let p = Predicate::between(sent(), h.edges[i], hi).unwrap();
        let (hit, _) = apply_filter(&table, &set, &p).unwrap();
        prop_assert_eq!(hit.len() as u64, h.counts[i..=j].iter().sum::<u64>());
    }

    #[test]
    fn volume_counts_each_transaction_once(records in ledger(20, 60, 6), pick in any::<u64>()) {
        let store = TransactionStore::from_records(records.clone()).unwrap();
        let index = build_entities(&store);
        let set: EntitySet = index.entities().filter(|e| pick >> (e.0 % 64) & 1 == 1).collect();
        let (from, to) = (0, 6 * DAY);
        let vol = tx_volume(&store, &index, &set, from, to, Bucket::Day).unwrap();
        prop_assert_eq!(vol.len(), 6);
        for (start, count) in vol {
            let expected = records
                .iter()
                .filter(|r| r.time >= start && r.time < start + DAY)
                .filter(|r| r.vin.iter().chain(&r.vout).any(|s| set.contains(index.entity_of(&store, &s.addr).unwrap())))
                .count() as u64;
            prop_assert_eq!(count, expected);
        }
        let all: EntitySet = index.entities().collect();
        let total: u64 = tx_volume(&store, &index, &all, from, to, Bucket::Day).unwrap().iter().map(|x| x.1).sum();
        prop_assert_eq!(total as usize, records.len());
    }
}

#[test]
fn histogram_precision_follows_scalar_type() {
    let values: Vec<Option<u64>> = (1..=100).map(|v| Some(v * 1000)).collect();
    let table = table_of(&values);
    let set = table.entities();
    let h64 = histogram::<f64>(&table, &set, sent(), 10, None).unwrap();
    let h32 = histogram::<f32>(&table, &set, sent(), 10, None).unwrap();
    assert_eq!(h64.counts, h32.counts);
    assert_eq!(h64.counts, vec![10; 10]);
}

#[test]
fn zero_input_filter_isolates_miners() {
    let cfg = ledgerlens::GeneratorConfig { n_entities: 500, n_miners: 12, ..Default::default() };
    let synth = ledgerlens::generate_synthetic(&cfg).unwrap();
    let store = TransactionStore::from_records(synth.records.clone()).unwrap();
    let index = build_entities(&store);
    let table = build_slices(&store, &index).compute_measures(None, 0, i64::MAX).unwrap();
    let p = Predicate::<f64>::between(Series::parse("num_inputs", Some("smallest")).unwrap(), 0.0, 0.0).unwrap();
    let (hit, _) = apply_filter(&table, &table.entities(), &p).unwrap();
    let truth = synth.address_entities();
    let mut found: Vec<usize> =
        hit.iter().map(|e| truth[store.address(index.members(e)[0])]).collect();
    found.sort();
    assert_eq!(found, synth.entities_with(|p| p.is_miner()));
}
