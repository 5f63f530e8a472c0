//! Transaction records, the columnar transaction store, and tag lists.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ids::AddressId;

/// One slot of a transaction on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotRecord {
    pub addr: String,
    pub value: i64,
}

/// One line of the transaction JSONL format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxRecord {
    pub txid: String,
    pub time: i64,
    pub vin: Vec<SlotRecord>,
    pub vout: Vec<SlotRecord>,
}

impl TxRecord {
    pub fn is_coinbase(&self) -> bool {
        self.vin.is_empty()
    }

    fn validate(&self, line: usize) -> Result<()> {
        let invalid = |message: String| Err(Error::Validation { line, message });
        if self.txid.len() != 64 || !self.txid.bytes().all(|b| b.is_ascii_hexdigit()) {
            return invalid(format!("txid `{}` is not 64 hex characters", self.txid));
        }
        if self.time < 0 {
            return invalid(format!("negative timestamp {}", self.time));
        }
        if self.vout.is_empty() {
            return invalid("transaction has no outputs".into());
        }
        for slot in self.vin.iter().chain(&self.vout) {
            if slot.value < 0 {
                return invalid(format!("negative amount {} for {}", slot.value, slot.addr));
            }
            if slot.addr.is_empty() {
                return invalid("empty address".into());
            }
        }
        if !self.vin.is_empty() {
            let sent: i128 = self.vin.iter().map(|s| s.value as i128).sum();
            let paid: i128 = self.vout.iter().map(|s| s.value as i128).sum();
            if sent < paid {
                return invalid(format!("outputs ({paid}) exceed inputs ({sent})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub tx: u32,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
struct Columns {
    txids: Vec<String>,
    times: Vec<i64>,
    input_offsets: Vec<u32>,
    input_addrs: Vec<AddressId>,
    input_values: Vec<u64>,
    output_offsets: Vec<u32>,
    output_addrs: Vec<AddressId>,
    output_values: Vec<u64>,
    addresses: Vec<String>,
    posting_offsets: Vec<u32>,
    postings: Vec<Posting>,
}

/// Immutable columnar store of transactions sorted by `(time, txid)`.
///
/// Address ids are assigned in order of first appearance in that sorted
/// order (inputs before outputs), so the store does not depend on the order
/// of the source lines.
#[derive(Debug, Clone, Default)]
pub struct TransactionStore {
    cols: Columns,
    address_ids: HashMap<String, AddressId>,
}

impl PartialEq for TransactionStore {
    fn eq(&self, other: &Self) -> bool {
        self.cols == other.cols
    }
}

impl Eq for TransactionStore {}

/// Borrowed view of one stored transaction.
#[derive(Debug, Clone, Copy)]
pub struct TxView<'a> {
    pub index: usize,
    pub txid: &'a str,
    pub time: i64,
    pub input_addrs: &'a [AddressId],
    pub input_values: &'a [u64],
    pub output_addrs: &'a [AddressId],
    pub output_values: &'a [u64],
}

impl TxView<'_> {
    pub fn is_coinbase(&self) -> bool {
        self.input_addrs.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.input_addrs.len()
    }

    pub fn num_outputs(&self) -> usize {
        self.output_addrs.len()
    }

    pub fn input_total(&self) -> u64 {
        self.input_values.iter().sum()
    }

    pub fn output_total(&self) -> u64 {
        self.output_values.iter().sum()
    }

    /// Inputs minus outputs; zero for coinbase transactions.
    pub fn fee(&self) -> u64 {
        if self.is_coinbase() {
            0
        } else {
            self.input_total() - self.output_total()
        }
    }

    pub fn inputs(&self) -> impl Iterator<Item = (AddressId, u64)> + '_ {
        self.input_addrs.iter().copied().zip(self.input_values.iter().copied())
    }

    pub fn outputs(&self) -> impl Iterator<Item = (AddressId, u64)> + '_ {
        self.output_addrs.iter().copied().zip(self.output_values.iter().copied())
    }
}

impl TransactionStore {
    /// Validates and indexes records. Line numbers in errors are 1-based
    /// positions in the iterator.
    pub fn from_records<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = TxRecord>,
    {
        Self::from_numbered(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)))
    }

    fn from_numbered<I>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, TxRecord)>,
    {
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut records: Vec<TxRecord> = records
            .into_iter()
            .map(|(line, record)| {
                record.validate(line)?;
                match seen.entry(record.txid.clone()) {
                    Entry::Occupied(_) => Err(Error::DuplicateTx { line, txid: record.txid }),
                    Entry::Vacant(v) => {
                        v.insert(line);
                        Ok(record)
                    }
                }
            })
            .collect::<Result<_>>()?;
        records.sort_unstable_by(|a, b| a.time.cmp(&b.time).then_with(|| a.txid.cmp(&b.txid)));

        let n = records.len();
        let mut cols = Columns {
            txids: Vec::with_capacity(n),
            times: Vec::with_capacity(n),
            input_offsets: Vec::with_capacity(n + 1),
            output_offsets: Vec::with_capacity(n + 1),
            ..Columns::default()
        };
        let mut address_ids: HashMap<String, AddressId> = HashMap::new();
        cols.input_offsets.push(0);
        cols.output_offsets.push(0);

        let mut intern = |addr: String, addresses: &mut Vec<String>| -> AddressId {
            match address_ids.entry(addr) {
                Entry::Occupied(o) => *o.get(),
                Entry::Vacant(v) => {
                    let id = AddressId::from_index(addresses.len());
                    addresses.push(v.key().clone());
                    v.insert(id);
                    id
                }
            }
        };

        for record in records {
            for slot in record.vin {
                let id = intern(slot.addr, &mut cols.addresses);
                cols.input_addrs.push(id);
                cols.input_values.push(slot.value as u64);
            }
            for slot in record.vout {
                let id = intern(slot.addr, &mut cols.addresses);
                cols.output_addrs.push(id);
                cols.output_values.push(slot.value as u64);
            }
            cols.input_offsets.push(offset(cols.input_addrs.len()));
            cols.output_offsets.push(offset(cols.output_addrs.len()));
            cols.txids.push(record.txid);
            cols.times.push(record.time);
        }
        build_postings(&mut cols);
        Ok(Self { cols, address_ids })
    }

    pub fn len(&self) -> usize {
        self.cols.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.times.is_empty()
    }

    pub fn num_addresses(&self) -> usize {
        self.cols.addresses.len()
    }

    pub fn address(&self, id: AddressId) -> &str {
        &self.cols.addresses[id.index()]
    }

    pub fn address_id(&self, addr: &str) -> Option<AddressId> {
        self.address_ids.get(addr).copied()
    }

    pub fn times(&self) -> &[i64] {
        &self.cols.times
    }

    pub fn tx(&self, index: usize) -> TxView<'_> {
        let c = &self.cols;
        let ins = c.input_offsets[index] as usize..c.input_offsets[index + 1] as usize;
        let outs = c.output_offsets[index] as usize..c.output_offsets[index + 1] as usize;
        TxView {
            index,
            txid: &c.txids[index],
            time: c.times[index],
            input_addrs: &c.input_addrs[ins.clone()],
            input_values: &c.input_values[ins],
            output_addrs: &c.output_addrs[outs.clone()],
            output_values: &c.output_values[outs],
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = TxView<'_>> + '_ {
        (0..self.len()).map(move |i| self.tx(i))
    }

    /// Indices of transactions with `from <= time < to`.
    pub fn tx_range(&self, from: i64, to: i64) -> Range<usize> {
        let times = &self.cols.times;
        let lo = times.partition_point(|&t| t < from);
        let hi = times.partition_point(|&t| t < to);
        lo..hi.max(lo)
    }

    /// Earliest and latest timestamp, if any transaction exists.
    pub fn time_bounds(&self) -> Option<(i64, i64)> {
        Some((*self.cols.times.first()?, *self.cols.times.last()?))
    }

    /// Postings of an address ordered by transaction index, inputs before outputs.
    pub fn postings(&self, id: AddressId) -> &[Posting] {
        let c = &self.cols;
        &c.postings[c.posting_offsets[id.index()] as usize..c.posting_offsets[id.index() + 1] as usize]
    }

    pub fn record(&self, index: usize) -> TxRecord {
        let tx = self.tx(index);
        let slot = |(a, v): (AddressId, u64)| SlotRecord {
            addr: self.address(a).to_owned(),
            value: v as i64,
        };
        TxRecord {
            txid: tx.txid.to_owned(),
            time: tx.time,
            vin: tx.inputs().map(slot).collect(),
            vout: tx.outputs().map(slot).collect(),
        }
    }

    /// Writes the store back out in the transaction JSONL format.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.len() {
            serde_json::to_writer(&mut out, &self.record(i))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn offset(n: usize) -> u32 {
    u32::try_from(n).expect("store exceeds u32 slot capacity")
}

fn build_postings(cols: &mut Columns) {
    let n_addr = cols.addresses.len();
    let mut per_addr: Vec<Vec<Posting>> = vec![Vec::new(); n_addr];
    for tx in 0..cols.times.len() {
        let ins = cols.input_offsets[tx] as usize..cols.input_offsets[tx + 1] as usize;
        let outs = cols.output_offsets[tx] as usize..cols.output_offsets[tx + 1] as usize;
        for (addrs, role) in [(&cols.input_addrs[ins], Role::Input), (&cols.output_addrs[outs], Role::Output)] {
            for &a in addrs {
                let list = &mut per_addr[a.index()];
                let posting = Posting { tx: tx as u32, role };
                // a repeated address within one transaction posts once per role
                if !list.iter().rev().take_while(|p| p.tx == tx as u32).any(|p| p.role == role) {
                    list.push(posting);
                }
            }
        }
    }
    cols.posting_offsets = Vec::with_capacity(n_addr + 1);
    cols.posting_offsets.push(0);
    cols.postings.clear();
    for list in per_addr {
        cols.postings.extend(list);
        cols.posting_offsets.push(offset(cols.postings.len()));
    }
}

impl Serialize for TransactionStore {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.cols.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransactionStore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let cols = Columns::deserialize(deserializer)?;
        let address_ids = cols
            .addresses
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), AddressId::from_index(i)))
            .collect();
        Ok(Self { cols, address_ids })
    }
}

/// Parses the transaction JSONL format. Blank lines are skipped.
pub fn parse_transactions<R: BufRead>(source: R) -> Result<TransactionStore> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TxRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, record));
    }
    TransactionStore::from_numbered(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Exchange,
    Wallet,
    Pool,
    Payment,
    Gambling,
    Other,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Exchange => "exchange",
            Category::Wallet => "wallet",
            Category::Pool => "pool",
            Category::Payment => "payment",
            Category::Gambling => "gambling",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "exchange" => Category::Exchange,
            "wallet" => Category::Wallet,
            "pool" => Category::Pool,
            "payment" => Category::Payment,
            "gambling" => Category::Gambling,
            "other" | "" => Category::Other,
            other => return Err(format!("unknown category `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub label: String,
    pub category: Category,
}

/// Known-address labels keyed by address id. First occurrence wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagTable {
    tags: std::collections::BTreeMap<AddressId, Tag>,
    /// Rows ignored because the address was already tagged.
    pub duplicate_warnings: usize,
    /// Rows whose address does not occur in the store.
    pub unknown_addresses: usize,
}

impl TagTable {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn get(&self, id: AddressId) -> Option<&Tag> {
        self.tags.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AddressId, &Tag)> {
        self.tags.iter().map(|(a, t)| (*a, t))
    }
}

/// Reads a `address,label,category` CSV against the address dictionary of `store`.
pub fn import_tags<R: Read>(source: R, store: &TransactionStore) -> Result<TagTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers().map_err(|e| Error::Tags(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::Tags(format!("missing column `{name}`")))
    };
    let (addr_col, label_col, cat_col) = (column("address")?, column("label")?, column("category")?);

    let mut table = TagTable::default();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Tags(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or("");
        let label = field(label_col);
        if label.is_empty() {
            return Err(Error::Tags(format!("line {line}: empty label")));
        }
        let category = field(cat_col)
            .parse::<Category>()
            .map_err(|e| Error::Tags(format!("line {line}: {e}")))?;
        let Some(id) = store.address_id(field(addr_col)) else {
            table.unknown_addresses += 1;
            continue;
        };
        match table.tags.entry(id) {
            std::collections::btree_map::Entry::Occupied(_) => table.duplicate_warnings += 1,
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(Tag { label: label.to_owned(), category });
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn txid(n: u64) -> String {
        format!("{n:064x}")
    }

    fn slot(addr: &str, value: i64) -> SlotRecord {
        SlotRecord { addr: addr.into(), value }
    }

    fn parse(s: &str) -> Result<TransactionStore> {
        parse_transactions(s.as_bytes())
    }

    #[test]
    fn genesis_style_coinbase() {
        let line = format!(
            r#"{{"txid":"{}","time":0,"vin":[],"vout":[{{"addr":"A","value":5000000000}}]}}"#,
            "aa".repeat(32)
        );
        let store = parse(&line).unwrap();
        assert_eq!(store.len(), 1);
        let tx = store.tx(0);
        assert!(tx.is_coinbase());
        assert_eq!(tx.output_total(), 50 * 100_000_000);
        assert_eq!(tx.fee(), 0);
    }

    #[test]
    fn bob_pays_alice_with_change() {
        let rec = TxRecord {
            txid: txid(1),
            time: 100,
            vin: vec![slot("X", 1_000_000), slot("Y", 1_000_000)],
            vout: vec![slot("Alice", 1_500_000), slot("X", 500_000)],
        };
        let store = TransactionStore::from_records([rec]).unwrap();
        let tx = store.tx(0);
        assert!(!tx.is_coinbase());
        assert_eq!(tx.fee(), 0);
        let x = store.address_id("X").unwrap();
        assert_eq!(
            store.postings(x),
            &[Posting { tx: 0, role: Role::Input }, Posting { tx: 0, role: Role::Output }]
        );
    }

    #[test]
    fn negative_amount_is_a_validation_error() {
        let line = format!(
            r#"{{"txid":"{}","time":5,"vin":[{{"addr":"A","value":-1}}],"vout":[{{"addr":"B","value":0}}]}}"#,
            txid(9)
        );
        assert!(matches!(parse(&line), Err(Error::Validation { line: 1, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let good = format!(r#"{{"txid":"{}","time":5,"vin":[],"vout":[{{"addr":"B","value":1}}]}}"#, txid(1));
        let input = format!("{good}\n{{not json\n");
        match parse(&input) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let line = format!(r#"{{"txid":"{}","time":5,"vin":[],"vout":[],"extra":1}}"#, txid(1));
        assert!(matches!(parse(&line), Err(Error::Parse { .. })));
    }

    #[test]
    fn duplicate_txid_rejected() {
        let r = TxRecord { txid: txid(3), time: 1, vin: vec![], vout: vec![slot("A", 1)] };
        let err = TransactionStore::from_records([r.clone(), r]).unwrap_err();
        assert!(matches!(err, Error::DuplicateTx { line: 2, .. }));
    }

    #[test]
    fn overspending_and_empty_outputs_rejected() {
        let over = TxRecord { txid: txid(1), time: 1, vin: vec![slot("A", 1)], vout: vec![slot("B", 2)] };
        assert!(matches!(TransactionStore::from_records([over]), Err(Error::Validation { .. })));
        let empty = TxRecord { txid: txid(2), time: 1, vin: vec![], vout: vec![] };
        assert!(matches!(TransactionStore::from_records([empty]), Err(Error::Validation { .. })));
        let short = TxRecord { txid: "aa".into(), time: 1, vin: vec![], vout: vec![slot("B", 2)] };
        assert!(matches!(TransactionStore::from_records([short]), Err(Error::Validation { .. })));
    }

    #[test]
    fn sorted_by_time_then_txid() {
        let recs = vec![
            TxRecord { txid: txid(2), time: 10, vin: vec![], vout: vec![slot("A", 1)] },
            TxRecord { txid: txid(1), time: 10, vin: vec![], vout: vec![slot("B", 1)] },
            TxRecord { txid: txid(0), time: 20, vin: vec![], vout: vec![slot("C", 1)] },
        ];
        let store = TransactionStore::from_records(recs).unwrap();
        let ids: Vec<_> = store.iter().map(|t| t.txid.to_owned()).collect();
        assert_eq!(ids, vec![txid(1), txid(2), txid(0)]);
        assert_eq!(store.address_id("B"), Some(AddressId(0)));
        assert_eq!(store.tx_range(10, 20), 0..2);
        assert_eq!(store.tx_range(11, 12), 2..2);
    }

    #[test]
    fn tags_basic() {
        let recs = vec![TxRecord { txid: txid(1), time: 1, vin: vec![], vout: vec![slot("A", 1), slot("B", 1)] }];
        let store = TransactionStore::from_records(recs).unwrap();

        let t = import_tags("address,label,category\nA,MtGox,exchange\n".as_bytes(), &store).unwrap();
        let a = store.address_id("A").unwrap();
        assert_eq!(t.get(a), Some(&Tag { label: "MtGox".into(), category: Category::Exchange }));

        let empty = import_tags("address,label,category\n".as_bytes(), &store).unwrap();
        assert!(empty.is_empty());

        let dup = import_tags("address,label,category\nA,X,\nA,Y,pool\n".as_bytes(), &store).unwrap();
        assert_eq!(dup.len(), 1);
        assert_eq!(dup.duplicate_warnings, 1);
        assert_eq!(dup.get(a).unwrap().category, Category::Other);
        assert_eq!(dup.get(a).unwrap().label, "X");

        let unknown = import_tags("address,label,category\nZ,X,wallet\n".as_bytes(), &store).unwrap();
        assert_eq!(unknown.unknown_addresses, 1);

        assert!(matches!(import_tags("address,label\nA,X\n".as_bytes(), &store), Err(Error::Tags(_))));
        assert!(matches!(import_tags("address,label,category\nA,X,bank\n".as_bytes(), &store), Err(Error::Tags(_))));
    }
}
