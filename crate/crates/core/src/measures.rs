//! Per-entity activity measures over arbitrary time ranges.
//!
//! Every transaction contributes to each participating entity once. Those
//! contributions are pre-aggregated into one [`Partial`] per (entity, UTC day).
//! A range query merges the partials of fully covered days and scans raw
//! contributions only for the partially covered boundary days.
//!
//! Role semantics: an entity is a sender in a transaction if it owns at least
//! one input slot and a receiver if it owns at least one output slot. Change
//! returned to the sender therefore also counts as received. Input and output
//! counts are aggregated over every transaction the entity takes part in,
//! whatever its role.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::entity::EntityIndex;
use crate::error::{Error, Result};
use crate::ids::EntityId;
use crate::ingest::TransactionStore;
use crate::scalar::Scalar;
use crate::set::EntitySet;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Running minimum, sum and maximum of non-negative integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub min: u64,
    pub sum: u128,
    pub max: u64,
}

impl Extent {
    pub const EMPTY: Extent = Extent { min: u64::MAX, sum: 0, max: 0 };

    #[inline]
    pub fn push(&mut self, v: u64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        self.sum += v as u128;
    }

    #[inline]
    pub fn merge(&mut self, other: &Extent) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.sum += other.sum;
    }
}

impl Default for Extent {
    fn default() -> Self {
        Self::EMPTY
    }
}

/// Mergeable aggregate of an entity's contributions over some set of transactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partial {
    /// Distinct transactions, either role.
    pub txs: u64,
    pub sent_txs: u64,
    pub received_txs: u64,
    pub sent: Extent,
    pub received: Extent,
    pub inputs: Extent,
    pub outputs: Extent,
    pub first: i64,
    pub last: i64,
}

impl Partial {
    pub const IDENTITY: Partial = Partial {
        txs: 0,
        sent_txs: 0,
        received_txs: 0,
        sent: Extent::EMPTY,
        received: Extent::EMPTY,
        inputs: Extent::EMPTY,
        outputs: Extent::EMPTY,
        first: i64::MAX,
        last: i64::MIN,
    };

    pub fn is_empty(&self) -> bool {
        self.txs == 0
    }

    #[inline]
    pub fn add(&mut self, c: &Contribution, time: i64, n_inputs: u32, n_outputs: u32) {
        self.txs += 1;
        if let Some(v) = c.sent() {
            self.sent_txs += 1;
            self.sent.push(v);
        }
        if let Some(v) = c.received() {
            self.received_txs += 1;
            self.received.push(v);
        }
        self.inputs.push(n_inputs as u64);
        self.outputs.push(n_outputs as u64);
        self.first = self.first.min(time);
        self.last = self.last.max(time);
    }

    #[inline]
    pub fn merge(&mut self, o: &Partial) {
        self.txs += o.txs;
        self.sent_txs += o.sent_txs;
        self.received_txs += o.received_txs;
        self.sent.merge(&o.sent);
        self.received.merge(&o.received);
        self.inputs.merge(&o.inputs);
        self.outputs.merge(&o.outputs);
        self.first = self.first.min(o.first);
        self.last = self.last.max(o.last);
    }

    /// Final measures, or `None` if the partial holds no transaction.
    pub fn finish(&self, entity: EntityId) -> Option<ActivityMeasures> {
        if self.is_empty() {
            return None;
        }
        let triplet = |e: &Extent, count: u64| Triplet {
            smallest: e.min,
            largest: e.max,
            sum: e.sum,
            count,
        };
        Some(ActivityMeasures {
            entity,
            num_txs: self.txs,
            num_txs_sender: self.sent_txs,
            num_txs_receiver: self.received_txs,
            time_first: self.first,
            time_last: self.last,
            amount_rec: (self.received_txs > 0).then(|| triplet(&self.received, self.received_txs)),
            amount_sent: (self.sent_txs > 0).then(|| triplet(&self.sent, self.sent_txs)),
            num_inputs: triplet(&self.inputs, self.txs),
            num_outputs: triplet(&self.outputs, self.txs),
        })
    }
}

impl Default for Partial {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// One entity's share of one transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contribution {
    pub entity: EntityId,
    sent: u64,
    received: u64,
    flags: u8,
}

const SENDER: u8 = 1;
const RECEIVER: u8 = 2;

impl Contribution {
    pub fn sent(&self) -> Option<u64> {
        (self.flags & SENDER != 0).then_some(self.sent)
    }

    pub fn received(&self) -> Option<u64> {
        (self.flags & RECEIVER != 0).then_some(self.received)
    }
}

/// Minimum, maximum and exact sum over `count` per-transaction values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub smallest: u64,
    pub largest: u64,
    pub sum: u128,
    pub count: u64,
}

impl Triplet {
    pub fn average(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }

    pub fn variant(&self, v: Variant) -> f64 {
        match v {
            Variant::Smallest => self.smallest as f64,
            Variant::Average => self.average(),
            Variant::Largest => self.largest as f64,
        }
    }
}

/// Activity of one entity over one time range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityMeasures {
    pub entity: EntityId,
    /// Distinct transactions in either role. A self-change transaction counts
    /// once here but once in each of the two role counts.
    pub num_txs: u64,
    pub num_txs_sender: u64,
    pub num_txs_receiver: u64,
    pub time_first: i64,
    pub time_last: i64,
    /// Satoshis received per transaction; absent if the entity never received.
    pub amount_rec: Option<Triplet>,
    /// Satoshis sent per transaction; absent if the entity never sent.
    pub amount_sent: Option<Triplet>,
    pub num_inputs: Triplet,
    pub num_outputs: Triplet,
}

impl ActivityMeasures {
    pub fn time_active_days(&self) -> f64 {
        (self.time_last - self.time_first) as f64 / SECONDS_PER_DAY as f64
    }

    /// Uniform accessor used by filters, histograms, clustering and sorting.
    pub fn value<F: Scalar>(&self, series: Series) -> Option<F> {
        let variant = series.variant.unwrap_or(Variant::Average);
        let triplet = |t: Option<&Triplet>| {
            t.map(|t| match variant {
                Variant::Smallest => F::of_u64(t.smallest),
                Variant::Largest => F::of_u64(t.largest),
                Variant::Average => F::of_f64(t.average()),
            })
        };
        match series.key {
            MeasureKey::NumTxsSender => Some(F::of_u64(self.num_txs_sender)),
            MeasureKey::NumTxsReceiver => Some(F::of_u64(self.num_txs_receiver)),
            MeasureKey::TimeFirst => Some(F::of_i64(self.time_first)),
            MeasureKey::TimeLast => Some(F::of_i64(self.time_last)),
            MeasureKey::TimeActive => Some(F::of_f64(self.time_active_days())),
            MeasureKey::AmountRec => triplet(self.amount_rec.as_ref()),
            MeasureKey::AmountSent => triplet(self.amount_sent.as_ref()),
            MeasureKey::NumInputs => triplet(Some(&self.num_inputs)),
            MeasureKey::NumOutputs => triplet(Some(&self.num_outputs)),
        }
    }

    /// Value on one of the eight glyph axes; triplet measures use their average.
    pub fn axis_value(&self, axis: Axis) -> Option<f64> {
        match axis {
            Axis::NumTxs => Some(self.num_txs as f64),
            Axis::TimeFirst => Some(self.time_first as f64),
            Axis::TimeLast => Some(self.time_last as f64),
            Axis::TimeActive => Some(self.time_active_days()),
            Axis::AmountRec => self.amount_rec.map(|t| t.average()),
            Axis::AmountSent => self.amount_sent.map(|t| t.average()),
            Axis::NumInputs => Some(self.num_inputs.average()),
            Axis::NumOutputs => Some(self.num_outputs.average()),
        }
    }
}

/// Free-standing accessor; `Ok(None)` means the measure is undefined for the entity.
pub fn measure_value<F: Scalar>(m: &ActivityMeasures, series: Series) -> Result<Option<F>> {
    series.validate()?;
    Ok(m.value(series))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKey {
    NumTxsSender,
    NumTxsReceiver,
    TimeFirst,
    TimeLast,
    TimeActive,
    AmountRec,
    AmountSent,
    NumInputs,
    NumOutputs,
}

impl MeasureKey {
    pub const ALL: [MeasureKey; 9] = [
        MeasureKey::NumTxsSender,
        MeasureKey::NumTxsReceiver,
        MeasureKey::TimeFirst,
        MeasureKey::TimeLast,
        MeasureKey::TimeActive,
        MeasureKey::AmountRec,
        MeasureKey::AmountSent,
        MeasureKey::NumInputs,
        MeasureKey::NumOutputs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureKey::NumTxsSender => "num_txs_sender",
            MeasureKey::NumTxsReceiver => "num_txs_receiver",
            MeasureKey::TimeFirst => "time_first",
            MeasureKey::TimeLast => "time_last",
            MeasureKey::TimeActive => "time_active",
            MeasureKey::AmountRec => "amount_rec",
            MeasureKey::AmountSent => "amount_sent",
            MeasureKey::NumInputs => "num_inputs",
            MeasureKey::NumOutputs => "num_outputs",
        }
    }

    /// Whether the key is a smallest/average/largest triplet.
    pub fn has_variants(self) -> bool {
        matches!(
            self,
            MeasureKey::AmountRec | MeasureKey::AmountSent | MeasureKey::NumInputs | MeasureKey::NumOutputs
        )
    }

    pub fn is_time(self) -> bool {
        matches!(self, MeasureKey::TimeFirst | MeasureKey::TimeLast | MeasureKey::TimeActive)
    }

    pub fn is_amount(self) -> bool {
        matches!(self, MeasureKey::AmountRec | MeasureKey::AmountSent)
    }
}

impl fmt::Display for MeasureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "num_txs_sender" | "num_txs(sender)" => MeasureKey::NumTxsSender,
            "num_txs_receiver" | "num_txs(receiver)" => MeasureKey::NumTxsReceiver,
            "time_first" => MeasureKey::TimeFirst,
            "time_last" => MeasureKey::TimeLast,
            "time_active" => MeasureKey::TimeActive,
            "amount_rec" => MeasureKey::AmountRec,
            "amount_sent" => MeasureKey::AmountSent,
            "num_inputs" => MeasureKey::NumInputs,
            "num_outputs" => MeasureKey::NumOutputs,
            other => return Err(Error::UnknownMeasure(other.to_owned())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Smallest,
    Average,
    Largest,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Smallest, Variant::Average, Variant::Largest];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Smallest => "smallest",
            Variant::Average => "average",
            Variant::Largest => "largest",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "smallest" | "min" => Variant::Smallest,
            "average" | "mean" => Variant::Average,
            "largest" | "max" => Variant::Largest,
            other => return Err(Error::UnknownVariant(other.to_owned())),
        })
    }
}

/// A selectable measure series: a key plus, for triplet keys, a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Series {
    pub key: MeasureKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
}

impl Series {
    pub const fn scalar(key: MeasureKey) -> Self {
        Self { key, variant: None }
    }

    pub const fn with(key: MeasureKey, variant: Variant) -> Self {
        Self { key, variant: Some(variant) }
    }

    /// Builds a series from wire strings. Variants given for scalar keys are ignored.
    pub fn parse(key: &str, variant: Option<&str>) -> Result<Self> {
        let key: MeasureKey = key.parse()?;
        let variant = match variant.filter(|v| !v.trim().is_empty() && v.trim() != "n/a") {
            Some(v) if key.has_variants() => Some(v.parse()?),
            _ => None,
        };
        let s = Series { key, variant };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.key.has_variants() && self.variant.is_none() {
            return Err(Error::MissingVariant(self.key.as_str().to_owned()));
        }
        Ok(())
    }

    /// Canonical column-style name, e.g. `amount_rec_largest`.
    pub fn name(&self) -> String {
        match self.variant.filter(|_| self.key.has_variants()) {
            Some(v) => format!("{}_{}", self.key.as_str(), v.as_str()),
            None => self.key.as_str().to_owned(),
        }
    }

    /// All 17 selectable series in display order.
    pub fn all() -> Vec<Series> {
        MeasureKey::ALL
            .iter()
            .flat_map(|&k| {
                if k.has_variants() {
                    Variant::ALL.iter().map(|&v| Series::with(k, v)).collect::<Vec<_>>()
                } else {
                    vec![Series::scalar(k)]
                }
            })
            .collect()
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// The eight activity measures shown as glyph axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NumTxs,
    TimeFirst,
    TimeLast,
    TimeActive,
    AmountRec,
    AmountSent,
    NumInputs,
    NumOutputs,
}

impl Axis {
    pub const ALL: [Axis; 8] = [
        Axis::NumTxs,
        Axis::TimeFirst,
        Axis::TimeLast,
        Axis::TimeActive,
        Axis::AmountRec,
        Axis::AmountSent,
        Axis::NumInputs,
        Axis::NumOutputs,
    ];
}

/// Measures of the entities present in one range, sorted by entity id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureTable {
    pub from: i64,
    pub to: i64,
    rows: Vec<ActivityMeasures>,
}

impl MeasureTable {
    pub fn from_rows(from: i64, to: i64, mut rows: Vec<ActivityMeasures>) -> Self {
        rows.sort_unstable_by_key(|m| m.entity);
        Self { from, to, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[ActivityMeasures] {
        &self.rows
    }

    pub fn get(&self, entity: EntityId) -> Option<&ActivityMeasures> {
        self.rows
            .binary_search_by_key(&entity, |m| m.entity)
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Entities present in the range.
    pub fn entities(&self) -> EntitySet {
        EntitySet::from_sorted(self.rows.iter().map(|m| m.entity).collect())
    }

    pub fn value<F: Scalar>(&self, entity: EntityId, series: Series) -> Option<F> {
        self.get(entity).and_then(|m| m.value(series))
    }
}

/// Day-sliced partial aggregates plus the per-transaction contributions used
/// to resolve partially covered days.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceStore {
    num_entities: usize,
    tx_times: Vec<i64>,
    tx_inputs: Vec<u32>,
    tx_outputs: Vec<u32>,
    contribution_offsets: Vec<u32>,
    contributions: Vec<Contribution>,
    days: Vec<i64>,
    day_offsets: Vec<u32>,
    slice_entities: Vec<EntityId>,
    slice_partials: Vec<Partial>,
}

pub fn day_of(t: i64) -> i64 {
    t.div_euclid(SECONDS_PER_DAY)
}

/// Contributions of every entity taking part in one transaction, ordered by entity.
pub fn contributions_of(tx: &crate::ingest::TxView<'_>, index: &EntityIndex) -> Vec<Contribution> {
    let mut out: Vec<Contribution> = Vec::new();
    let mut upsert = |entity: EntityId, value: u64, flag: u8| {
        let c = match out.iter_mut().find(|c| c.entity == entity) {
            Some(c) => c,
            None => {
                out.push(Contribution { entity, sent: 0, received: 0, flags: 0 });
                out.last_mut().unwrap()
            }
        };
        c.flags |= flag;
        if flag == SENDER {
            c.sent += value;
        } else {
            c.received += value;
        }
    };
    for (a, v) in tx.inputs() {
        upsert(index.entity_of_id(a), v, SENDER);
    }
    for (a, v) in tx.outputs() {
        upsert(index.entity_of_id(a), v, RECEIVER);
    }
    out.sort_unstable_by_key(|c| c.entity);
    out
}

/// Builds one partial per (entity, active UTC day).
pub fn build_slices(store: &TransactionStore, index: &EntityIndex) -> SliceStore {
    let n = store.len();
    let mut s = SliceStore {
        num_entities: index.num_entities(),
        tx_times: store.times().to_vec(),
        tx_inputs: Vec::with_capacity(n),
        tx_outputs: Vec::with_capacity(n),
        contribution_offsets: Vec::with_capacity(n + 1),
        ..SliceStore::default()
    };
    s.contribution_offsets.push(0);
    for tx in store.iter() {
        s.tx_inputs.push(tx.num_inputs() as u32);
        s.tx_outputs.push(tx.num_outputs() as u32);
        s.contributions.extend(contributions_of(&tx, index));
        s.contribution_offsets.push(s.contributions.len() as u32);
    }

    s.day_offsets.push(0);
    let mut start = 0;
    let mut day_rows: Vec<(EntityId, usize)> = Vec::new();
    while start < n {
        let day = day_of(s.tx_times[start]);
        let end = start + s.tx_times[start..].partition_point(|&t| day_of(t) == day);
        day_rows.clear();
        for tx in start..end {
            for ci in s.contribution_offsets[tx] as usize..s.contribution_offsets[tx + 1] as usize {
                day_rows.push((s.contributions[ci].entity, tx));
            }
        }
        // stable: keeps transaction order within an entity
        day_rows.sort_by_key(|&(e, _)| e);
        let mut i = 0;
        while i < day_rows.len() {
            let entity = day_rows[i].0;
            let mut p = Partial::IDENTITY;
            while i < day_rows.len() && day_rows[i].0 == entity {
                let tx = day_rows[i].1;
                let c = s.contribution(tx, entity);
                p.add(&c, s.tx_times[tx], s.tx_inputs[tx], s.tx_outputs[tx]);
                i += 1;
            }
            s.slice_entities.push(entity);
            s.slice_partials.push(p);
        }
        s.days.push(day);
        s.day_offsets.push(s.slice_entities.len() as u32);
        start = end;
    }
    s
}

impl SliceStore {
    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Number of (entity, day) partials.
    pub fn num_slices(&self) -> usize {
        self.slice_partials.len()
    }

    pub fn num_transactions(&self) -> usize {
        self.tx_times.len()
    }

    /// Active days in ascending order.
    pub fn days(&self) -> &[i64] {
        &self.days
    }

    fn contribution(&self, tx: usize, entity: EntityId) -> Contribution {
        let cs = self.tx_contributions(tx);
        cs[cs.binary_search_by_key(&entity, |c| c.entity).expect("entity takes part in tx")]
    }

    pub fn tx_contributions(&self, tx: usize) -> &[Contribution] {
        &self.contributions[self.contribution_offsets[tx] as usize..self.contribution_offsets[tx + 1] as usize]
    }

    /// Partials of one day as `(entity, partial)` pairs ordered by entity.
    pub fn day_slices(&self, day: i64) -> impl Iterator<Item = (EntityId, &Partial)> {
        let range = match self.days.binary_search(&day) {
            Ok(i) => self.day_offsets[i] as usize..self.day_offsets[i + 1] as usize,
            Err(_) => 0..0,
        };
        self.slice_entities[range.clone()].iter().copied().zip(&self.slice_partials[range])
    }

    /// All `(day, partial)` pairs of one entity.
    pub fn entity_slices(&self, entity: EntityId) -> Vec<(i64, Partial)> {
        let mut out = Vec::new();
        for (i, &day) in self.days.iter().enumerate() {
            let range = self.day_offsets[i] as usize..self.day_offsets[i + 1] as usize;
            if let Ok(j) = self.slice_entities[range.clone()].binary_search(&entity) {
                out.push((day, self.slice_partials[range.start + j]));
            }
        }
        out
    }

    /// Measures of `entities` (all entities if `None`) over `[from, to)`.
    /// Entities without in-range activity are omitted.
    pub fn compute_measures(&self, entities: Option<&EntitySet>, from: i64, to: i64) -> Result<MeasureTable> {
        if from >= to {
            return Err(Error::InvalidRange { from, to });
        }
        let mask = entities.map(|s| s.mask(self.num_entities));
        let wanted = |e: EntityId| mask.as_ref().is_none_or(|m| m[e.index()]);
        let mut acc = Accumulator::new(self.num_entities);

        let first_full = from.div_euclid(SECONDS_PER_DAY) + i64::from(from.rem_euclid(SECONDS_PER_DAY) != 0);
        let end_full = to.div_euclid(SECONDS_PER_DAY);
        if first_full >= end_full {
            self.scan_raw(from, to, &wanted, &mut acc);
        } else {
            self.scan_raw(from, first_full * SECONDS_PER_DAY, &wanted, &mut acc);
            let lo = self.days.partition_point(|&d| d < first_full);
            let hi = self.days.partition_point(|&d| d < end_full);
            let range = self.day_offsets[lo] as usize..self.day_offsets[hi] as usize;
            for (&e, p) in self.slice_entities[range.clone()].iter().zip(&self.slice_partials[range]) {
                if wanted(e) {
                    acc.partial(e).merge(p);
                }
            }
            self.scan_raw(end_full * SECONDS_PER_DAY, to, &wanted, &mut acc);
        }
        Ok(acc.finish(from, to))
    }

    fn scan_raw(&self, from: i64, to: i64, wanted: &impl Fn(EntityId) -> bool, acc: &mut Accumulator) {
        if from >= to {
            return;
        }
        let lo = self.tx_times.partition_point(|&t| t < from);
        let hi = self.tx_times.partition_point(|&t| t < to);
        for tx in lo..hi {
            for c in self.tx_contributions(tx) {
                if wanted(c.entity) {
                    acc.partial(c.entity).add(c, self.tx_times[tx], self.tx_inputs[tx], self.tx_outputs[tx]);
                }
            }
        }
    }
}

struct Accumulator {
    partials: Vec<Partial>,
    seen: Vec<bool>,
    touched: Vec<EntityId>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self { partials: vec![Partial::IDENTITY; n], seen: vec![false; n], touched: Vec::new() }
    }

    #[inline]
    fn partial(&mut self, e: EntityId) -> &mut Partial {
        if !self.seen[e.index()] {
            self.seen[e.index()] = true;
            self.touched.push(e);
        }
        &mut self.partials[e.index()]
    }

    fn finish(mut self, from: i64, to: i64) -> MeasureTable {
        self.touched.sort_unstable();
        let rows = self
            .touched
            .iter()
            .filter_map(|&e| self.partials[e.index()].finish(e))
            .collect();
        MeasureTable { from, to, rows }
    }
}
