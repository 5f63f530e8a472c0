//! Address clustering with the common-input heuristic.
//!
//! Every address spent together in one transaction is assumed to be
//! controlled by the same entity. The transitive closure of that relation
//! is computed with a disjoint-set forest.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ids::{AddressId, EntityId};
use crate::ingest::{Role, Tag, TagTable, TransactionStore};

/// Disjoint-set forest with union by size and path compression.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] as usize != root {
            root = self.parent[root] as usize;
        }
        let mut cur = x;
        while self.parent[cur] as usize != root {
            let next = self.parent[cur] as usize;
            self.parent[cur] = root as u32;
            cur = next;
        }
        root
    }

    /// Returns true if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra as u32;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

/// Result of entity resolution over a whole store.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntityIndex {
    address_entity: Vec<EntityId>,
    member_offsets: Vec<u32>,
    members: Vec<AddressId>,
    tags: Vec<Option<Tag>>,
}

/// Unions all input addresses of every transaction, then numbers entities
/// densely in order of their smallest member address id.
pub fn build_entities(store: &TransactionStore) -> EntityIndex {
    let n = store.num_addresses();
    let mut uf = UnionFind::new(n);
    for tx in store.iter() {
        if let Some((&first, rest)) = tx.input_addrs.split_first() {
            for a in rest {
                uf.union(first.index(), a.index());
            }
        }
    }

    // address ids ascend, so the first address seen for a root is its minimum
    let mut root_entity = vec![u32::MAX; n];
    let mut address_entity = Vec::with_capacity(n);
    let mut sizes: Vec<u32> = Vec::new();
    for a in 0..n {
        let root = uf.find(a);
        if root_entity[root] == u32::MAX {
            root_entity[root] = sizes.len() as u32;
            sizes.push(0);
        }
        let e = root_entity[root];
        sizes[e as usize] += 1;
        address_entity.push(EntityId(e));
    }

    let mut member_offsets = Vec::with_capacity(sizes.len() + 1);
    member_offsets.push(0u32);
    for s in &sizes {
        member_offsets.push(member_offsets.last().unwrap() + s);
    }
    let mut cursor: Vec<u32> = member_offsets[..sizes.len()].to_vec();
    let mut members = vec![AddressId(0); n];
    for (a, e) in address_entity.iter().enumerate() {
        let slot = &mut cursor[e.index()];
        members[*slot as usize] = AddressId::from_index(a);
        *slot += 1;
    }

    EntityIndex {
        address_entity,
        member_offsets,
        members,
        tags: vec![None; sizes.len()],
    }
}

impl EntityIndex {
    pub fn num_entities(&self) -> usize {
        self.tags.len()
    }

    pub fn num_addresses(&self) -> usize {
        self.address_entity.len()
    }

    pub fn entity_of_id(&self, addr: AddressId) -> EntityId {
        self.address_entity[addr.index()]
    }

    /// Entity containing `address`, or `None` if the address is unknown.
    pub fn entity_of(&self, store: &TransactionStore, address: &str) -> Option<EntityId> {
        store.address_id(address).map(|a| self.entity_of_id(a))
    }

    /// Sorted member address ids.
    pub fn members(&self, entity: EntityId) -> &[AddressId] {
        let e = entity.index();
        &self.members[self.member_offsets[e] as usize..self.member_offsets[e + 1] as usize]
    }

    pub fn tag(&self, entity: EntityId) -> Option<&Tag> {
        self.tags.get(entity.index()).and_then(Option::as_ref)
    }

    pub fn entities(&self) -> impl ExactSizeIterator<Item = EntityId> {
        (0..self.num_entities()).map(EntityId::from_index)
    }

    /// Assigns each entity the most frequent tag among its members. Ties go
    /// to the smallest label, then the smallest category.
    pub fn attach_tags(mut self, tags: &TagTable) -> Self {
        let mut votes: BTreeMap<EntityId, BTreeMap<&Tag, usize>> = BTreeMap::new();
        for (addr, tag) in tags.iter() {
            if addr.index() >= self.address_entity.len() {
                continue;
            }
            *votes.entry(self.entity_of_id(addr)).or_default().entry(tag).or_default() += 1;
        }
        self.tags.iter_mut().for_each(|t| *t = None);
        for (entity, counts) in votes {
            // BTreeMap iterates tags in ascending order; keep the first maximum
            let mut best: Option<(&Tag, usize)> = None;
            for (tag, n) in counts {
                if best.is_none_or(|(_, m)| n > m) {
                    best = Some((tag, n));
                }
            }
            self.tags[entity.index()] = best.map(|(t, _)| t.clone());
        }
        self
    }

    pub fn tagged(&self) -> impl Iterator<Item = (EntityId, &Tag)> {
        self.tags
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| (EntityId::from_index(i), t)))
    }

    /// Transactions in `[from, to)` where `entity` acts in `role`, in
    /// chronological order, with the entity's summed slot amount.
    pub fn transactions(
        &self,
        store: &TransactionStore,
        entity: EntityId,
        role: Role,
        from: i64,
        to: i64,
    ) -> Vec<EntityTx> {
        let mut txs: Vec<u32> = self
            .members(entity)
            .iter()
            .flat_map(|&a| store.postings(a))
            .filter(|p| p.role == role)
            .map(|p| p.tx)
            .collect();
        txs.sort_unstable();
        txs.dedup();
        txs.into_iter()
            .map(|i| store.tx(i as usize))
            .filter(|tx| tx.time >= from && tx.time < to)
            .map(|tx| {
                let (addrs, values) = match role {
                    Role::Input => (tx.input_addrs, tx.input_values),
                    Role::Output => (tx.output_addrs, tx.output_values),
                };
                let amount = addrs
                    .iter()
                    .zip(values)
                    .filter(|(&a, _)| self.entity_of_id(a) == entity)
                    .map(|(_, &v)| v)
                    .sum();
                EntityTx { tx: tx.index, txid: tx.txid.to_owned(), time: tx.time, amount }
            })
            .collect()
    }

    /// CSV `entity_id,address`, one row per member.
    pub fn write_members_csv<W: Write>(&self, store: &TransactionStore, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_id", "address"]).map_err(csv_err)?;
        for e in self.entities() {
            for &a in self.members(e) {
                w.write_record([e.to_string().as_str(), store.address(a)]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `entity_id,label,category` for tagged entities.
    pub fn write_tags_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_id", "label", "category"]).map_err(csv_err)?;
        for (e, tag) in self.tagged() {
            w.write_record([e.to_string().as_str(), tag.label.as_str(), tag.category.as_str()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One transaction of an entity in a given role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTx {
    pub tx: usize,
    pub txid: String,
    pub time: i64,
    /// Sum of the entity's input (sender) or output (receiver) slots.
    pub amount: u64,
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}
