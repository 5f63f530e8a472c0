//! Dynamic-query layer: measure histograms, transaction volume over time,
//! and range predicates that split an entity set into match and remainder.

use serde::{Deserialize, Serialize};

use crate::entity::EntityIndex;
use crate::error::{Error, Result};
use crate::ingest::TransactionStore;
use crate::measures::{MeasureTable, Series, SECONDS_PER_DAY};
use crate::scalar::Scalar;
use crate::set::EntitySet;
use crate::timefmt;

pub const DEFAULT_BINS: usize = 50;

/// `max / min` ratio above which automatic scaling switches to log10.
pub const LOG_SCALE_RATIO: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log10,
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "linear" => Ok(Scale::Linear),
            "log10" | "log" => Ok(Scale::Log10),
            other => Err(format!("unknown scale `{other}`")),
        }
    }
}

/// Closed range predicate `lo <= value <= hi` over one measure series.
/// A missing bound is unbounded; an undefined measure never matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Predicate<F> {
    #[serde(flatten)]
    pub series: Series,
    #[serde(default)]
    pub lo: Option<F>,
    #[serde(default)]
    pub hi: Option<F>,
}

impl<F: Scalar> Predicate<F> {
    pub fn new(series: Series, lo: Option<F>, hi: Option<F>) -> Result<Self> {
        let p = Self { series, lo, hi };
        p.validate()?;
        Ok(p)
    }

    pub fn between(series: Series, lo: F, hi: F) -> Result<Self> {
        Self::new(series, Some(lo), Some(hi))
    }

    pub fn validate(&self) -> Result<()> {
        self.series.validate()?;
        let bad = |lo: Option<F>, hi: Option<F>| Error::InvalidPredicate {
            lo: lo.map_or(f64::NAN, F::as_f64),
            hi: hi.map_or(f64::NAN, F::as_f64),
        };
        if self.lo.is_some_and(|v| v.is_nan()) || self.hi.is_some_and(|v| v.is_nan()) {
            return Err(bad(self.lo, self.hi));
        }
        if let (Some(lo), Some(hi)) = (self.lo, self.hi) {
            if lo > hi {
                return Err(bad(self.lo, self.hi));
            }
        }
        Ok(())
    }

    pub fn matches(&self, value: Option<F>) -> bool {
        match value {
            None => false,
            Some(v) => self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v <= hi),
        }
    }
}

/// Splits `set` into entities satisfying `p` and the rest.
pub fn apply_filter<F: Scalar>(
    table: &MeasureTable,
    set: &EntitySet,
    p: &Predicate<F>,
) -> Result<(EntitySet, EntitySet)> {
    p.validate()?;
    let (mut hit, mut miss) = (Vec::new(), Vec::new());
    for e in set {
        if p.matches(table.value::<F>(e, p.series)) {
            hit.push(e);
        } else {
            miss.push(e);
        }
    }
    Ok((EntitySet::from_sorted(hit), EntitySet::from_sorted(miss)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Histogram<F> {
    pub series: Series,
    pub scale: Scale,
    /// Ascending bin edges, one more than `counts`. Bin `i` holds
    /// `edges[i] <= v < edges[i + 1]`; the last bin also holds `v == edges[n]`.
    pub edges: Vec<F>,
    pub counts: Vec<u64>,
    /// Entities of the set whose measure is undefined.
    pub undefined: u64,
}

impl<F: Scalar> Histogram<F> {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.undefined
    }

    /// Bin holding `v`, assuming it lies within the edges.
    pub fn bin_of(&self, v: F) -> usize {
        bin_of(&self.edges, v)
    }
}

fn bin_of<F: Scalar>(edges: &[F], v: F) -> usize {
    let n = edges.len() - 1;
    edges.partition_point(|&e| e <= v).saturating_sub(1).min(n - 1)
}

/// Equal-width histogram of `series` over `set`. `scale = None` picks log10
/// for strictly positive data spanning more than three decades.
pub fn histogram<F: Scalar>(
    table: &MeasureTable,
    set: &EntitySet,
    series: Series,
    bins: usize,
    scale: Option<Scale>,
) -> Result<Histogram<F>> {
    series.validate()?;
    if bins == 0 {
        return Err(Error::ZeroBins);
    }
    let mut values = Vec::with_capacity(set.len());
    let mut undefined = 0u64;
    for e in set {
        match table.value::<F>(e, series) {
            Some(v) => values.push(v),
            None => undefined += 1,
        }
    }
    let (min, max) = values
        .iter()
        .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let all_positive = !values.is_empty() && min > F::zero();
    let scale = match scale {
        Some(Scale::Log10) if !values.is_empty() && !all_positive => return Err(Error::NonPositiveLogScale),
        Some(s) => s,
        None if all_positive && (max / min).as_f64() > LOG_SCALE_RATIO => Scale::Log10,
        None => Scale::Linear,
    };

    let edges = if values.is_empty() {
        linear_edges(F::zero(), F::one(), bins)
    } else if min == max {
        vec![min, min + F::one()]
    } else {
        match scale {
            Scale::Linear => linear_edges(min, max, bins),
            Scale::Log10 => log_edges(min, max, bins),
        }
    };
    let mut counts = vec![0u64; edges.len() - 1];
    for v in values {
        counts[bin_of(&edges, v)] += 1;
    }
    Ok(Histogram { series, scale, edges, counts, undefined })
}

fn linear_edges<F: Scalar>(min: F, max: F, bins: usize) -> Vec<F> {
    let n = F::of_usize(bins);
    let mut edges: Vec<F> = (0..bins).map(|i| min + (max - min) * F::of_usize(i) / n).collect();
    edges.push(max);
    strictly_increasing(edges)
}

fn log_edges<F: Scalar>(min: F, max: F, bins: usize) -> Vec<F> {
    let (lmin, lmax) = (min.log10(), max.log10());
    let n = F::of_usize(bins);
    let ten = F::of_f64(10.0);
    let mut edges: Vec<F> = std::iter::once(min)
        .chain((1..bins).map(|i| ten.powf(lmin + (lmax - lmin) * F::of_usize(i) / n)))
        .collect();
    edges.push(max);
    strictly_increasing(edges)
}

// rounding can produce equal neighbours on very narrow ranges; merge those bins
fn strictly_increasing<F: Scalar>(mut edges: Vec<F>) -> Vec<F> {
    let last = *edges.last().unwrap();
    edges.retain(|&e| e < last);
    edges.dedup();
    edges.push(last);
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Day,
    Month,
}

impl std::str::FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "day" => Ok(Bucket::Day),
            "month" => Ok(Bucket::Month),
            other => Err(format!("unknown bucket `{other}`")),
        }
    }
}

impl Bucket {
    pub fn start_of(self, t: i64) -> i64 {
        match self {
            Bucket::Day => t.div_euclid(SECONDS_PER_DAY) * SECONDS_PER_DAY,
            Bucket::Month => timefmt::month_start(t),
        }
    }

    pub fn next(self, start: i64) -> i64 {
        match self {
            Bucket::Day => start + SECONDS_PER_DAY,
            Bucket::Month => timefmt::next_month_start(start),
        }
    }

    /// Bucket starts covering `[from, to)`.
    pub fn starts(self, from: i64, to: i64) -> Vec<i64> {
        let mut out = Vec::new();
        let mut s = self.start_of(from);
        while s < to {
            out.push(s);
            s = self.next(s);
        }
        out
    }
}

/// Number of transactions in `[from, to)` with at least one participant in
/// `set`, per bucket. Each transaction counts once.
pub fn tx_volume(
    store: &TransactionStore,
    index: &EntityIndex,
    set: &EntitySet,
    from: i64,
    to: i64,
    bucket: Bucket,
) -> Result<Vec<(i64, u64)>> {
    if from >= to {
        return Err(Error::InvalidRange { from, to });
    }
    let starts = bucket.starts(from, to);
    let mut counts = vec![0u64; starts.len()];
    if !set.is_empty() {
        let mask = set.mask(index.num_entities());
        let member = |a: &crate::ids::AddressId| mask[index.entity_of_id(*a).index()];
        for i in store.tx_range(from, to) {
            let tx = store.tx(i);
            if tx.input_addrs.iter().any(member) || tx.output_addrs.iter().any(member) {
                let b = starts.partition_point(|&s| s <= tx.time) - 1;
                counts[b] += 1;
            }
        }
    }
    Ok(starts.into_iter().zip(counts).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entity::build_entities;
    use crate::ids::EntityId;
    use crate::ingest::{SlotRecord, TxRecord};
    use crate::measures::{build_slices, ActivityMeasures, MeasureKey, Triplet};

    fn row(entity: u32, n_recv: u64) -> ActivityMeasures {
        let t = Triplet { smallest: 1, largest: 1, sum: 1, count: 1 };
        ActivityMeasures {
            entity: EntityId(entity),
            num_txs: n_recv,
            num_txs_sender: 0,
            num_txs_receiver: n_recv,
            time_first: 0,
            time_last: 0,
            amount_rec: Some(t),
            amount_sent: None,
            num_inputs: t,
            num_outputs: t,
        }
    }

    fn table(recv: &[u64]) -> MeasureTable {
        MeasureTable::from_rows(0, 1, recv.iter().enumerate().map(|(i, &n)| row(i as u32, n)).collect())
    }

    const RECV: Series = Series::scalar(MeasureKey::NumTxsReceiver);

    #[test]
    fn equal_width_bins() {
        let t = table(&[1, 1, 1, 5]);
        let h = histogram::<f64>(&t, &t.entities(), RECV, 2, Some(Scale::Linear)).unwrap();
        assert_eq!(h.edges, vec![1.0, 3.0, 5.0]);
        assert_eq!(h.counts, vec![3, 1]);
        assert_eq!(h.total(), 4);
    }

    #[test]
    fn degenerate_range_single_bin() {
        let t = table(&[7, 7, 7]);
        let h = histogram::<f32>(&t, &t.entities(), RECV, 10, None).unwrap();
        assert_eq!(h.edges, vec![7.0, 8.0]);
        assert_eq!(h.counts, vec![3]);
    }

    #[test]
    fn undefined_values_counted_separately() {
        let t = table(&[1, 2, 3]);
        let sent = Series::with(MeasureKey::AmountSent, crate::measures::Variant::Average);
        let h = histogram::<f64>(&t, &t.entities(), sent, 5, None).unwrap();
        assert_eq!(h.undefined, 3);
        assert_eq!(h.counts.iter().sum::<u64>(), 0);
    }

    #[test]
    fn auto_log_scale_and_errors() {
        let t = table(&[1, 10, 100, 10_000]);
        let h = histogram::<f64>(&t, &t.entities(), RECV, 4, None).unwrap();
        assert_eq!(h.scale, Scale::Log10);
        assert_eq!(h.counts, vec![1, 1, 1, 1]);
        let z = table(&[0, 10_000]);
        assert_eq!(histogram::<f64>(&z, &z.entities(), RECV, 4, None).unwrap().scale, Scale::Linear);
        assert!(matches!(
            histogram::<f64>(&z, &z.entities(), RECV, 4, Some(Scale::Log10)),
            Err(Error::NonPositiveLogScale)
        ));
        assert!(matches!(histogram::<f64>(&t, &t.entities(), RECV, 0, None), Err(Error::ZeroBins)));
    }

    #[test]
    fn empty_set_zero_counts() {
        let t = table(&[1]);
        let h = histogram::<f64>(&t, &EntitySet::new(), RECV, 3, None).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0]);
    }

    #[test]
    fn filter_partitions() {
        let t = table(&[1, 1, 2, 5, 1]);
        let p = Predicate::between(RECV, 1.0, 1.0).unwrap();
        let (m, r) = apply_filter(&t, &t.entities(), &p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(r.len(), 2);
        let (m2, r2) = apply_filter(&t, &m, &p).unwrap();
        assert_eq!(m2, m);
        assert!(r2.is_empty());

        let all = Predicate::<f64>::new(RECV, None, None).unwrap();
        assert_eq!(apply_filter(&t, &t.entities(), &all).unwrap().0.len(), 5);
        let sent = Series::with(MeasureKey::AmountSent, crate::measures::Variant::Largest);
        let unb = Predicate::<f64>::new(sent, None, None).unwrap();
        assert!(apply_filter(&t, &t.entities(), &unb).unwrap().0.is_empty());
        assert!(Predicate::between(RECV, 2.0, 1.0).is_err());
    }

    #[test]
    fn predicate_json_shape() {
        let p = Predicate::between(Series::with(MeasureKey::AmountRec, crate::measures::Variant::Largest), 0.0, 1e9)
            .unwrap();
        let v = serde_json::to_value(p).unwrap();
        assert_eq!(v, serde_json::json!({"key":"amount_rec","variant":"largest","lo":0.0,"hi":1e9}));
        let back: Predicate<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let open: Predicate<f64> = serde_json::from_str(r#"{"key":"time_first","hi":5}"#).unwrap();
        assert_eq!(open.lo, None);
    }

    #[test]
    fn volume_counts_each_tx_once() {
        let slot = |a: &str| SlotRecord { addr: a.into(), value: 1 };
        let store = crate::ingest::TransactionStore::from_records([
            TxRecord { txid: format!("{:064x}", 1), time: 10, vin: vec![slot("A")], vout: vec![slot("B")] },
            TxRecord { txid: format!("{:064x}", 2), time: SECONDS_PER_DAY + 5, vin: vec![], vout: vec![slot("C")] },
        ])
        .unwrap();
        let index = build_entities(&store);
        let slices = build_slices(&store, &index);
        let all = slices.compute_measures(None, 0, 10 * SECONDS_PER_DAY).unwrap().entities();
        let v = tx_volume(&store, &index, &all, 0, 3 * SECONDS_PER_DAY, Bucket::Day).unwrap();
        assert_eq!(v, vec![(0, 1), (SECONDS_PER_DAY, 1), (2 * SECONDS_PER_DAY, 0)]);
        let none = tx_volume(&store, &index, &EntitySet::new(), 0, 3 * SECONDS_PER_DAY, Bucket::Day).unwrap();
        assert!(none.iter().all(|&(_, c)| c == 0));
        let m = tx_volume(&store, &index, &all, 0, 40 * SECONDS_PER_DAY, Bucket::Month).unwrap();
        assert_eq!(m, vec![(0, 2), (31 * SECONDS_PER_DAY, 0)]);
        assert!(tx_volume(&store, &index, &all, 5, 5, Bucket::Day).is_err());
    }
}
