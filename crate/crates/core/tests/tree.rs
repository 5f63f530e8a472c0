use ledgerlens::measures::Triplet;
use ledgerlens::{
    ActivityMeasures, ClassificationTree, EntityId, MeasureKey, MeasureTable, Predicate, Series, Tree64, TreeDocument64,
    Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table(n: u32, seed: u64) -> MeasureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let t = |rng: &mut ChaCha8Rng| {
                let (a, b) = (rng.random_range(0..1_000u64), rng.random_range(0..1_000u64));
                Triplet { smallest: a.min(b), largest: a.max(b), sum: (a + b) as u128, count: 2 }
            };
            let first = rng.random_range(0..1_000_000i64);
            ActivityMeasures {
                entity: EntityId(i),
                num_txs: 2,
                num_txs_sender: rng.random_range(0..5),
                num_txs_receiver: rng.random_range(1..5),
                time_first: first,
                time_last: first + rng.random_range(0..1_000_000),
                amount_rec: Some(t(&mut rng)),
                amount_sent: rng.random_bool(0.7).then(|| t(&mut rng)),
                num_inputs: t(&mut rng),
                num_outputs: t(&mut rng),
            }
        })
        .collect();
    MeasureTable::from_rows(0, 2_000_000, rows)
}

fn random_predicate(rng: &mut ChaCha8Rng) -> Predicate<f64> {
    let key = MeasureKey::ALL[rng.random_range(0..MeasureKey::ALL.len())];
    let variant = key.has_variants().then(|| Variant::ALL[rng.random_range(0..3)]);
    let series = Series { key, variant };
    let (lo, hi): (f64, f64) = if key.is_time() {
        (rng.random_range(0.0..1e6), rng.random_range(0.0..1e6))
    } else {
        (rng.random_range(0.0..600.0), rng.random_range(0.0..1200.0))
    };
    let lo = rng.random_bool(0.8).then_some(lo.min(hi));
    let hi = rng.random_bool(0.8).then_some(lo.map_or(hi, |l| l.max(hi)));
    Predicate::new(series, lo, hi).unwrap()
}

fn live_nodes(tree: &Tree64) -> Vec<usize> {
    tree.nodes().map(|n| n.id).collect()
}

#[test]
fn thousand_random_operations_keep_partitions() {
    let table = table(500, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut tree = ClassificationTree::<f64>::new(&table);
    let (mut splits, mut deletes) = (0, 0);
    for step in 0..1000 {
        let nodes = live_nodes(&tree);
        let target = nodes[rng.random_range(0..nodes.len())];
        match rng.random_range(0..10) {
            0..=5 => {
                let leaf = tree.node(target).unwrap().is_leaf();
                let r = tree.split(&table, target, random_predicate(&mut rng), "m", "r");
                assert_eq!(r.is_ok(), leaf, "step {step}");
                splits += usize::from(leaf);
            }
            6..=7 => {
                let r = tree.delete_split(target);
                if target == 0 {
                    assert!(r.is_err());
                } else {
                    let parent = r.unwrap();
                    assert!(tree.node(parent).unwrap().is_leaf());
                    assert!(tree.node(target).is_err());
                    deletes += 1;
                }
            }
            8 => tree.relabel(target, &format!("n{step}")).unwrap(),
            _ => tree.select(target).unwrap(),
        }
        tree.check_partitions().unwrap_or_else(|e| panic!("step {step}: {e}"));
        assert!(tree.node(tree.selected()).is_ok());
        let leaves: usize = tree.nodes().filter(|n| n.is_leaf()).map(|n| n.count()).sum();
        assert_eq!(leaves, tree.root().count(), "leaves cover the root at step {step}");
    }
    assert!(splits > 100 && deletes > 50);
}

#[test]
fn export_import_reproduces_counts_bit_identically() {
    let table = table(2000, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tree = ClassificationTree::<f64>::new(&table);
    let mut leaves = vec![0];
    while tree.len() < 13 {
        let target = leaves.swap_remove(rng.random_range(0..leaves.len()));
        let (m, r) = tree.split(&table, target, random_predicate(&mut rng), "match", "rest").unwrap();
        leaves.extend([m, r]);
    }
    let doc = tree.export("corpus-a", 0, 2_000_000, 1);
    assert_eq!(doc.splits.len(), 6);
    let json = serde_json::to_string(&doc).unwrap();
    let parsed: TreeDocument64 = serde_json::from_str(&json).unwrap();
    let (again, warnings) = ClassificationTree::import(&parsed, &table, "corpus-a").unwrap();
    assert!(warnings.is_empty());
    let counts = |t: &Tree64| -> Vec<(Vec<usize>, String, Vec<EntityId>)> {
        let mut v: Vec<_> =
            t.nodes().map(|n| (t.path(n.id).unwrap(), n.label.clone(), n.set.as_slice().to_vec())).collect();
        v.sort();
        v
    };
    assert_eq!(counts(&tree), counts(&again));
    assert_eq!(again.export("corpus-a", 0, 2_000_000, 1), doc);

    let (_, warnings) = ClassificationTree::import(&parsed, &table, "corpus-b").unwrap();
    assert_eq!(warnings.len(), 1);
}

#[test]
fn recompute_matches_fresh_replay() {
    let full = table(800, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tree = ClassificationTree::<f64>::new(&full);
    let (m, _) = tree.split(&full, 0, random_predicate(&mut rng), "a", "b").unwrap();
    tree.split(&full, m, random_predicate(&mut rng), "c", "d").unwrap();
    let half = MeasureTable::from_rows(0, 1, full.rows().iter().filter(|r| r.entity.0 % 2 == 0).copied().collect());
    let warnings = tree.recompute(&half);
    assert!(warnings.is_empty());
    tree.check_partitions().unwrap();
    let doc = tree.export("x", 0, 1, 0);
    let (fresh, _) = ClassificationTree::import(&doc, &half, "x").unwrap();
    let sets = |t: &Tree64| t.nodes().map(|n| n.set.clone()).collect::<Vec<_>>();
    assert_eq!(sets(&tree), sets(&fresh));
    assert!(tree.root().count() <= full.len());
}
