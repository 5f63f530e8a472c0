#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use ledgerlens::ingest::SlotRecord;
use ledgerlens::TxRecord;
use proptest::prelude::*;

pub const DAY: i64 = 86_400;

/// Random small ledger over `n_addr` addresses spanning a few days.
pub fn ledger(max_addr: usize, max_txs: usize, days: i64) -> impl Strategy<Value = Vec<TxRecord>> {
    (2..=max_addr).prop_flat_map(move |n_addr| {
        let addr = 0..n_addr;
        let slot = (addr.clone(), 0i64..5_000);
        let tx = (
            0..days * DAY,
            prop::bool::weighted(0.2),
            prop::collection::vec(slot.clone(), 1..4),
            prop::collection::vec(slot, 1..4),
        );
        prop::collection::vec(tx, 0..=max_txs).prop_map(|txs| {
            txs.into_iter()
                .enumerate()
                .map(|(i, (time, coinbase, vin, vout))| {
                    let vin: Vec<SlotRecord> = if coinbase {
                        vec![]
                    } else {
                        vin.into_iter().map(|(a, v)| SlotRecord { addr: format!("a{a}"), value: v }).collect()
                    };
                    let budget: i64 = vin.iter().map(|s| s.value).sum();
                    let n_out = vout.len() as i64;
                    let vout = vout
                        .into_iter()
                        .map(|(a, v)| SlotRecord {
                            addr: format!("a{a}"),
                            value: if coinbase { v } else { (v % (budget / n_out + 1)).min(budget / n_out) },
                        })
                        .collect();
                    TxRecord { txid: format!("{:064x}", i + 1), time, vin, vout }
                })
                .collect()
        })
    })
}

/// Connected components of the "co-spent" graph, by breadth-first search.
pub fn components(records: &[TxRecord]) -> BTreeSet<BTreeSet<String>> {
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        for s in r.vin.iter().chain(&r.vout) {
            adj.entry(&s.addr).or_default();
        }
        for a in &r.vin {
            for b in &r.vin {
                adj.get_mut(a.addr.as_str()).unwrap().insert(&b.addr);
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = BTreeSet::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            comp.insert(a.to_owned());
            for &b in &adj[a] {
                if seen.insert(b) {
                    queue.push_back(b);
                }
            }
        }
        out.insert(comp);
    }
    out
}

/// Component label of every address.
pub fn labels(records: &[TxRecord]) -> HashMap<String, usize> {
    components(records)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| c.into_iter().map(move |a| (a, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stat {
    pub min: u64,
    pub max: u64,
    pub sum: u128,
    pub count: u64,
}

impl Stat {
    fn push(s: &mut Option<Stat>, v: u64) {
        match s {
            None => *s = Some(Stat { min: v, max: v, sum: v as u128, count: 1 }),
            Some(s) => {
                s.min = s.min.min(v);
                s.max = s.max.max(v);
                s.sum += v as u128;
                s.count += 1;
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.count as f64
    }
}

/// Directly scanned activity of one entity, computed from raw records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub txs: u64,
    pub sender: u64,
    pub receiver: u64,
    pub first: i64,
    pub last: i64,
    pub rec: Option<Stat>,
    pub sent: Option<Stat>,
    pub inputs: Option<Stat>,
    pub outputs: Option<Stat>,
}

/// Activity of entity `label` over `[from, to)` from the raw record list.
pub fn scan(records: &[TxRecord], owner: &HashMap<String, usize>, label: usize, from: i64, to: i64) -> Option<Scan> {
    let mut out = Scan { first: i64::MAX, last: i64::MIN, ..Default::default() };
    for r in records.iter().filter(|r| r.time >= from && r.time < to) {
        let mine = |s: &&SlotRecord| owner[&s.addr] == label;
        let sent: Vec<u64> = r.vin.iter().filter(mine).map(|s| s.value as u64).collect();
        let rec: Vec<u64> = r.vout.iter().filter(mine).map(|s| s.value as u64).collect();
        if sent.is_empty() && rec.is_empty() {
            continue;
        }
        out.txs += 1;
        if !sent.is_empty() {
            out.sender += 1;
            Stat::push(&mut out.sent, sent.iter().sum());
        }
        if !rec.is_empty() {
            out.receiver += 1;
            Stat::push(&mut out.rec, rec.iter().sum());
        }
        Stat::push(&mut out.inputs, r.vin.len() as u64);
        Stat::push(&mut out.outputs, r.vout.len() as u64);
        out.first = out.first.min(r.time);
        out.last = out.last.max(r.time);
    }
    (out.txs > 0).then_some(out)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Field-by-field comparison; integer fields exact, averages within `rel`.
pub fn agrees(m: &ledgerlens::ActivityMeasures, s: &Scan, rel: f64) -> Result<(), String> {
    let triplet = |name: &str, t: Option<&ledgerlens::measures::Triplet>, o: Option<&Stat>| -> Result<(), String> {
        match (t, o) {
            (None, None) => Ok(()),
            (Some(t), Some(o)) => {
                if (t.smallest, t.largest, t.sum, t.count) != (o.min, o.max, o.sum, o.count) || !close(t.average(), o.mean(), rel) {
                    Err(format!("{name}: {t:?} vs {o:?}"))
                } else {
                    Ok(())
                }
            }
            _ => Err(format!("{name}: defined mismatch {t:?} vs {o:?}")),
        }
    };
    if (m.num_txs, m.num_txs_sender, m.num_txs_receiver, m.time_first, m.time_last)
        != (s.txs, s.sender, s.receiver, s.first, s.last)
    {
        return Err(format!("counts/times differ: {m:?} vs {s:?}"));
    }
    triplet("amount_rec", m.amount_rec.as_ref(), s.rec.as_ref())?;
    triplet("amount_sent", m.amount_sent.as_ref(), s.sent.as_ref())?;
    triplet("num_inputs", Some(&m.num_inputs), s.inputs.as_ref())?;
    triplet("num_outputs", Some(&m.num_outputs), s.outputs.as_ref())
}
