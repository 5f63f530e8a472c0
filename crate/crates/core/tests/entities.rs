mod common;

use std::collections::BTreeSet;

use common::*;
use ledgerlens::{build_entities, generate_synthetic, GeneratorConfig, TransactionStore};
use proptest::prelude::*;

fn partition(store: &TransactionStore) -> BTreeSet<BTreeSet<String>> {
    let index = build_entities(store);
    index
        .entities()
        .map(|e| index.members(e).iter().map(|&a| store.address(a).to_owned()).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn union_find_matches_bfs_components(records in ledger(30, 40, 5)) {
        let store = TransactionStore::from_records(records.clone()).unwrap();
        prop_assert_eq!(partition(&store), components(&records));
    }

    #[test]
    fn entity_ids_are_dense_and_ordered_by_smallest_member(records in ledger(30, 40, 5)) {
        let store = TransactionStore::from_records(records).unwrap();
        let index = build_entities(&store);
        let mins: Vec<u32> = index.entities().map(|e| index.members(e)[0].0).collect();
        prop_assert!(mins.windows(2).all(|w| w[0] < w[1]));
        for e in index.entities() {
            let members = index.members(e);
            prop_assert!(members.windows(2).all(|w| w[0] < w[1]));
            for &a in members {
                prop_assert_eq!(index.entity_of_id(a), e);
            }
        }
        let covered: usize = index.entities().map(|e| index.members(e).len()).sum();
        prop_assert_eq!(covered, store.num_addresses());
    }

    #[test]
    fn build_is_independent_of_input_order(records in ledger(20, 30, 3), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = TransactionStore::from_records(records).unwrap();
        let b = TransactionStore::from_records(shuffled).unwrap();
        prop_assert_eq!(build_entities(&a), build_entities(&b));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn synthetic_ground_truth_is_recovered_exactly() {
    for seed in 1..=5 {
        let cfg = GeneratorConfig { seed, n_entities: 400, ..Default::default() };
        let synth = generate_synthetic(&cfg).unwrap();
        let store = TransactionStore::from_records(synth.records.clone()).unwrap();
        let index = build_entities(&store);
        assert_eq!(index.num_entities(), cfg.n_entities);
        let truth = synth.address_entities();
        for e in index.entities() {
            let gts: BTreeSet<usize> = index.members(e).iter().map(|&a| truth[store.address(a)]).collect();
            assert_eq!(gts.len(), 1, "entity {e} mixes ground-truth entities");
        }
        for row in &synth.truth {
            let e = index.entity_of(&store, &row.addr).unwrap();
            assert_eq!(index.members(e).len(), synth.truth.iter().filter(|r| r.entity_gt == row.entity_gt).count());
        }
    }
}
