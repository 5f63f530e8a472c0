//! Deterministic synthetic ledgers with planted behaviours and ground truth.
//!
//! Every ground-truth entity that owns more than one address spends from all
//! of them in its first outgoing transaction, and no transaction mixes inputs
//! of two entities, so common-input clustering recovers the planted entities
//! exactly.
//!
//! Planted profiles:
//! - one-timers receive exactly one payment and never spend;
//! - miners receive at least two coinbase outputs and spend once;
//! - exchanges pay out most one-timer payments and take deposits;
//! - regular entities send at least twice, always with change, so every
//!   non-one-timer receives at least twice.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{SlotRecord, TxRecord};
use crate::measures::SECONDS_PER_DAY;

/// 2009-01-03T18:15:05Z
pub const GENESIS_TIME: i64 = 1_231_006_505;
pub const INITIAL_REWARD: u64 = 50 * 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_entities: usize,
    /// Share of entities planted as one-timers, rounded to the nearest count.
    pub one_timer_fraction: f64,
    pub n_miners: usize,
    pub n_exchanges: usize,
    /// Splits miners into before-only, after-only and both phases around this time.
    pub event_time: Option<i64>,
    pub miners_before_only: usize,
    pub miners_after_only: usize,
    /// Share of regular entities planted as high-activity; the rest become
    /// low-activity. Zero keeps a single mixed regular population.
    pub high_activity_fraction: f64,
    pub start_time: i64,
    pub duration_days: u32,
    /// Additional payments between exchanges and regular entities.
    pub extra_transactions: usize,
    pub max_addresses_per_entity: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_entities: 1000,
            one_timer_fraction: 0.85,
            n_miners: 10,
            n_exchanges: 1,
            event_time: None,
            miners_before_only: 0,
            miners_after_only: 0,
            high_activity_fraction: 0.0,
            start_time: GENESIS_TIME,
            duration_days: 3 * 365,
            extra_transactions: 0,
            max_addresses_per_entity: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    OneTimer,
    Miner,
    MinerBeforeOnly,
    MinerAfterOnly,
    MinerBoth,
    Exchange,
    Regular,
    LowActivity,
    HighActivity,
}

impl Profile {
    pub fn is_miner(self) -> bool {
        matches!(self, Profile::Miner | Profile::MinerBeforeOnly | Profile::MinerAfterOnly | Profile::MinerBoth)
    }
}

/// One row of the ground-truth sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub addr: String,
    pub entity_gt: usize,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRow {
    pub address: String,
    pub label: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    /// Sorted by `(time, txid)`.
    pub records: Vec<TxRecord>,
    pub truth: Vec<TruthRow>,
    /// Known-address list naming the exchanges; the first is "MtGox".
    pub tags: Vec<TagRow>,
    pub profiles: Vec<Profile>,
}

impl SyntheticCorpus {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_truth<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.truth {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_tags_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "address,label,category")?;
        for t in &self.tags {
            writeln!(out, "{},{},{}", t.address, t.label, t.category)?;
        }
        Ok(())
    }

    pub fn entities_with(&self, pred: impl Fn(Profile) -> bool) -> Vec<usize> {
        (0..self.profiles.len()).filter(|&e| pred(self.profiles[e])).collect()
    }

    /// Ground-truth entity of every address.
    pub fn address_entities(&self) -> std::collections::HashMap<&str, usize> {
        self.truth.iter().map(|r| (r.addr.as_str(), r.entity_gt)).collect()
    }
}

struct Builder {
    rng: ChaCha8Rng,
    seed: u64,
    addresses: Vec<Vec<String>>,
    linked: Vec<bool>,
    records: Vec<TxRecord>,
}

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

impl Builder {
    fn txid(&self) -> String {
        hex_digest(&[b"tx", &self.seed.to_le_bytes(), &(self.records.len() as u64).to_le_bytes()])
    }

    fn any_address(&mut self, e: usize) -> String {
        self.addresses[e].choose(&mut self.rng).unwrap().clone()
    }

    /// Inputs for a send of `total` satoshis; the first send links every address.
    fn inputs(&mut self, e: usize, total: u64) -> Vec<SlotRecord> {
        let addrs: Vec<String> = if self.linked[e] {
            vec![self.any_address(e)]
        } else {
            self.linked[e] = true;
            self.addresses[e].clone()
        };
        let n = addrs.len() as u64;
        addrs
            .into_iter()
            .enumerate()
            .map(|(i, addr)| SlotRecord {
                addr,
                value: (total / n + if i == 0 { total % n } else { 0 }) as i64,
            })
            .collect()
    }

    fn coinbase(&mut self, miner: usize, time: i64, reward: u64) {
        let to = self.any_address(miner);
        let txid = self.txid();
        self.records.push(TxRecord { txid, time, vin: vec![], vout: vec![SlotRecord { addr: to, value: reward as i64 }] });
    }

    /// `from` pays `amount` to `to` (if any) with change back to itself.
    fn pay(&mut self, from: usize, to: Option<usize>, time: i64, amount: u64, change: u64, fee: u64) {
        let vin = self.inputs(from, amount + change + fee);
        let mut vout = Vec::with_capacity(2);
        if let Some(to) = to {
            vout.push(SlotRecord { addr: self.any_address(to), value: amount as i64 });
        }
        let change_to = self.any_address(from);
        let change = if to.is_none() { amount + change } else { change };
        vout.push(SlotRecord { addr: change_to, value: change as i64 });
        let txid = self.txid();
        self.records.push(TxRecord { txid, time, vin, vout });
    }
}

/// Generates a corpus for `cfg`. Identical configs give identical output.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<SyntheticCorpus> {
    let invalid = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
    if cfg.n_entities == 0 {
        return invalid("n_entities must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.one_timer_fraction) || !(0.0..=1.0).contains(&cfg.high_activity_fraction) {
        return invalid("fractions must lie in [0, 1]");
    }
    if cfg.duration_days == 0 || cfg.max_addresses_per_entity == 0 || cfg.start_time < 0 {
        return invalid("duration_days and max_addresses_per_entity must be positive, start_time non-negative");
    }
    let n_one = (cfg.n_entities as f64 * cfg.one_timer_fraction).round() as usize;
    let planted = n_one + cfg.n_miners + cfg.n_exchanges;
    if planted > cfg.n_entities {
        return invalid("one-timers, miners and exchanges exceed n_entities");
    }
    let n_regular = cfg.n_entities - planted;
    // low/high-activity populations never pay one-timers or send extras
    let n_payers = cfg.n_exchanges + if cfg.high_activity_fraction > 0.0 { 0 } else { n_regular };
    if n_one > 0 && n_payers == 0 {
        return invalid("one-timers need an exchange or regular entity to pay them");
    }
    if cfg.extra_transactions > 0 && (n_payers == 0 || cfg.n_exchanges + n_regular < 2) {
        return invalid("extra transactions need a paying entity and at least two exchange or regular entities");
    }
    let end = cfg.start_time + cfg.duration_days as i64 * SECONDS_PER_DAY;
    match cfg.event_time {
        Some(t) if t <= cfg.start_time + SECONDS_PER_DAY || t >= end - SECONDS_PER_DAY => {
            return invalid("event_time must lie at least a day inside the corpus window");
        }
        None if cfg.miners_before_only + cfg.miners_after_only > 0 => {
            return invalid("miner phases need an event_time");
        }
        _ => {}
    }
    if cfg.miners_before_only + cfg.miners_after_only > cfg.n_miners {
        return invalid("miner phase counts exceed n_miners");
    }

    // entity layout: one-timers, miners, exchanges, regulars; shuffled below
    let mut profiles = Vec::with_capacity(cfg.n_entities);
    profiles.extend(std::iter::repeat_n(Profile::OneTimer, n_one));
    if cfg.event_time.is_some() {
        let both = cfg.n_miners - cfg.miners_before_only - cfg.miners_after_only;
        profiles.extend(std::iter::repeat_n(Profile::MinerBeforeOnly, cfg.miners_before_only));
        profiles.extend(std::iter::repeat_n(Profile::MinerAfterOnly, cfg.miners_after_only));
        profiles.extend(std::iter::repeat_n(Profile::MinerBoth, both));
    } else {
        profiles.extend(std::iter::repeat_n(Profile::Miner, cfg.n_miners));
    }
    profiles.extend(std::iter::repeat_n(Profile::Exchange, cfg.n_exchanges));
    if cfg.high_activity_fraction > 0.0 {
        let n_high = (n_regular as f64 * cfg.high_activity_fraction).round() as usize;
        profiles.extend(std::iter::repeat_n(Profile::HighActivity, n_high));
        profiles.extend(std::iter::repeat_n(Profile::LowActivity, n_regular - n_high));
    } else {
        profiles.extend(std::iter::repeat_n(Profile::Regular, n_regular));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // keep the exchange order stable so exchange 0 is always "MtGox"
    {
        use rand::seq::SliceRandom;
        profiles.shuffle(&mut rng);
    }
    let exchanges: Vec<usize> = (0..profiles.len()).filter(|&e| profiles[e] == Profile::Exchange).collect();

    let mut addresses = Vec::with_capacity(profiles.len());
    for (e, p) in profiles.iter().enumerate() {
        let n = match p {
            Profile::OneTimer => 1,
            _ => rng.random_range(1..=cfg.max_addresses_per_entity),
        };
        addresses.push(
            (0..n)
                .map(|k| {
                    let d = hex_digest(&[b"addr", &cfg.seed.to_le_bytes(), &(e as u64).to_le_bytes(), &(k as u64).to_le_bytes()]);
                    format!("1{}", &d[..33])
                })
                .collect::<Vec<_>>(),
        );
    }

    let mut b = Builder { rng, seed: cfg.seed, addresses, linked: vec![false; profiles.len()], records: Vec::new() };
    let regulars: Vec<usize> = (0..profiles.len())
        .filter(|&e| matches!(profiles[e], Profile::Regular | Profile::LowActivity | Profile::HighActivity))
        .collect();
    let counterparties: Vec<usize> = exchanges.iter().chain(&regulars).copied().collect();
    let payers: Vec<usize> = regulars.iter().copied().filter(|&e| profiles[e] == Profile::Regular).collect();
    let senders: Vec<usize> = exchanges.iter().chain(&payers).copied().collect();
    let uniform = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| rng.random_range(lo..hi);
    let pick_other = |rng: &mut ChaCha8Rng, me: usize| -> Option<usize> {
        let others: Vec<usize> = counterparties.iter().copied().filter(|&c| c != me).collect();
        others.choose(rng).copied()
    };

    // miners: coinbase rewards inside their phase window, then one spend
    for (e, &profile) in profiles.iter().enumerate() {
        let (windows, spend_window): (Vec<(i64, i64)>, (i64, i64)) = match (profile, cfg.event_time) {
            (Profile::Miner, _) => (vec![(cfg.start_time, end); 2], (cfg.start_time, end)),
            (Profile::MinerBeforeOnly, Some(t)) => (vec![(cfg.start_time, t); 2], (cfg.start_time, t)),
            (Profile::MinerAfterOnly, Some(t)) => (vec![(t, end); 2], (t, end)),
            (Profile::MinerBoth, Some(t)) => (vec![(cfg.start_time, t), (t, end)], (cfg.start_time, end)),
            _ => continue,
        };
        let extra = b.rng.random_range(0..3);
        let mut windows = windows;
        for _ in 0..extra {
            let w = *windows.choose(&mut b.rng).unwrap();
            windows.push(w);
        }
        let mut earned = 0;
        for (lo, hi) in windows {
            let time = uniform(&mut b.rng, lo, hi);
            let reward = match cfg.event_time {
                Some(t) if time >= t => INITIAL_REWARD / 2,
                _ => INITIAL_REWARD,
            };
            earned += reward;
            b.coinbase(e, time, reward);
        }
        let time = uniform(&mut b.rng, spend_window.0, spend_window.1);
        let to = pick_other(&mut b.rng, e);
        let amount = earned / 2;
        b.pay(e, to, time, amount, earned - amount, 0);
    }

    // one-timers: exactly one incoming payment each
    for (e, &profile) in profiles.iter().enumerate() {
        if profile != Profile::OneTimer {
            continue;
        }
        let roll: f64 = b.rng.random();
        let payer = if !exchanges.is_empty() && (payers.is_empty() || roll < 0.6) {
            exchanges[0]
        } else if exchanges.len() > 1 && roll < 0.8 {
            *exchanges[1..].choose(&mut b.rng).unwrap()
        } else if !payers.is_empty() {
            *payers.choose(&mut b.rng).unwrap()
        } else {
            exchanges[0]
        };
        let amount = log_uniform(&mut b.rng, 1e5, 1e10);
        let change = log_uniform(&mut b.rng, 1e4, 1e9);
        let time = uniform(&mut b.rng, cfg.start_time, end);
        let fee = b.rng.random_range(0..=10_000);
        b.pay(payer, Some(e), time, amount, change, fee);
    }

    // exchanges and regulars: at least two sends each, always with change
    for &e in exchanges.iter().chain(&regulars) {
        let (sends, scale) = match profiles[e] {
            Profile::LowActivity => (2, 1e4),
            Profile::HighActivity => (40, 1e9),
            _ => (b.rng.random_range(2..=6), 0.0),
        };
        for _ in 0..sends {
            let to = pick_other(&mut b.rng, e);
            let time = uniform(&mut b.rng, cfg.start_time, end);
            if scale > 0.0 {
                let amount = (scale * b.rng.random_range(0.9..1.1)) as u64;
                let change = (amount as f64 * b.rng.random_range(0.05..0.1)) as u64;
                b.pay(e, to, time, amount, change, 0);
            } else {
                let amount = log_uniform(&mut b.rng, 1e4, 1e9);
                let change = log_uniform(&mut b.rng, 1e3, 1e9);
                let fee = b.rng.random_range(0..=10_000);
                b.pay(e, to, time, amount, change, fee);
            }
        }
    }

    for _ in 0..cfg.extra_transactions {
        let roll: f64 = b.rng.random();
        let from = if !exchanges.is_empty() && roll < 0.3 {
            exchanges[0]
        } else if exchanges.len() > 1 && roll < 0.4 {
            *exchanges[1..].choose(&mut b.rng).unwrap()
        } else {
            *senders.choose(&mut b.rng).unwrap()
        };
        let to = pick_other(&mut b.rng, from);
        let time = uniform(&mut b.rng, cfg.start_time, end);
        let amount = log_uniform(&mut b.rng, 1e4, 1e10);
        let change = log_uniform(&mut b.rng, 1e3, 1e9);
        let fee = b.rng.random_range(0..=10_000);
        b.pay(from, to, time, amount, change, fee);
    }

    let mut records = b.records;
    records.sort_unstable_by(|x, y| x.time.cmp(&y.time).then_with(|| x.txid.cmp(&y.txid)));
    let truth = b
        .addresses
        .iter()
        .enumerate()
        .flat_map(|(e, addrs)| {
            let profile = profiles[e];
            addrs.iter().map(move |a| TruthRow { addr: a.clone(), entity_gt: e, profile })
        })
        .collect();
    let tags = exchanges
        .iter()
        .enumerate()
        .map(|(i, &e)| TagRow {
            address: b.addresses[e][0].clone(),
            label: if i == 0 { "MtGox".to_owned() } else { format!("Exchange-{}", i + 1) },
            category: "exchange".to_owned(),
        })
        .collect();
    Ok(SyntheticCorpus { records, truth, tags, profiles })
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> u64 {
    10f64.powf(rng.random_range(lo.log10()..hi.log10())) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_timer_count_is_exact() {
        let c = generate_synthetic(&GeneratorConfig::default()).unwrap();
        assert_eq!(c.entities_with(|p| p == Profile::OneTimer).len(), 850);
        let owner = c.address_entities();
        let mut receipts = vec![0usize; c.profiles.len()];
        for r in &c.records {
            let mut seen: Vec<usize> = r.vout.iter().map(|s| owner[s.addr.as_str()]).collect();
            seen.sort();
            seen.dedup();
            seen.into_iter().for_each(|e| receipts[e] += 1);
        }
        let exactly_one = receipts.iter().filter(|&&n| n == 1).count();
        assert_eq!(exactly_one, 850);
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = GeneratorConfig { n_entities: 300, ..Default::default() };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        generate_synthetic(&cfg).unwrap().write_jsonl(&mut a).unwrap();
        generate_synthetic(&cfg).unwrap().write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
        let other = GeneratorConfig { seed: 2, ..cfg };
        let mut c = Vec::new();
        generate_synthetic(&other).unwrap().write_jsonl(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn planted_miners_receive_coinbase() {
        let c = generate_synthetic(&GeneratorConfig::default()).unwrap();
        let owner = c.address_entities();
        let mut miners: Vec<usize> = c
            .records
            .iter()
            .filter(|r| r.vin.is_empty())
            .flat_map(|r| r.vout.iter().map(|s| owner[s.addr.as_str()]))
            .collect();
        miners.sort();
        miners.dedup();
        assert_eq!(miners.len(), 10);
        assert!(miners.iter().all(|&e| c.profiles[e].is_miner()));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            GeneratorConfig { n_entities: 0, ..Default::default() },
            GeneratorConfig { one_timer_fraction: 1.5, ..Default::default() },
            GeneratorConfig { n_entities: 10, n_miners: 5, one_timer_fraction: 0.8, ..Default::default() },
            GeneratorConfig { miners_before_only: 1, ..Default::default() },
            GeneratorConfig { event_time: Some(0), ..Default::default() },
            GeneratorConfig {
                event_time: Some(GENESIS_TIME + 100 * SECONDS_PER_DAY),
                miners_before_only: 8,
                miners_after_only: 8,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_json_defaults() {
        let cfg: GeneratorConfig = serde_json::from_str(r#"{"seed":1,"one_timer_fraction":0.85,"n_entities":1000}"#).unwrap();
        assert_eq!(cfg, GeneratorConfig::default());
        assert!(serde_json::from_str::<GeneratorConfig>(r#"{"bogus":1}"#).is_err());
    }
}
