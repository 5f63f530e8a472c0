//! Entity-centered analytics for Bitcoin-style transaction ledgers.
//!
//! Pipeline: [`ingest`] parses transactions into a columnar
//! [`TransactionStore`], [`entity`] clusters addresses into entities with the
//! common-input heuristic, and [`measures`] pre-aggregates per-entity activity
//! into day slices so any time range can be re-evaluated quickly. On top of
//! that sit dynamic-query filters and histograms ([`filter`]), the
//! match/remainder classification tree ([`tree`]), and k-means profiling of
//! entity groups ([`cluster`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases at the crate root fix it to `f64`, which is what the service uses.

pub mod cluster;
pub mod corpus;
pub mod entity;
pub mod error;
pub mod filter;
pub mod ids;
pub mod ingest;
pub mod measures;
pub mod scalar;
pub mod set;
pub mod synth;
pub mod timefmt;
pub mod tree;

pub use cluster::{ClusterOutcome, ClusterRequest, ClusterSummary, KMeans, Preprocessing};
pub use corpus::{Corpus, CorpusManifest};
pub use entity::{build_entities, EntityIndex, EntityTx, UnionFind};
pub use error::{Error, Result};
pub use filter::{apply_filter, histogram, tx_volume, Bucket, Histogram, Predicate, Scale};
pub use ids::{AddressId, EntityId};
pub use ingest::{import_tags, parse_transactions, Category, Tag, TagTable, TransactionStore, TxRecord};
pub use measures::{
    build_slices, measure_value, ActivityMeasures, Axis, MeasureKey, MeasureTable, Series, SliceStore, Variant,
};
pub use scalar::Scalar;
pub use set::EntitySet;
pub use synth::{generate_synthetic, GeneratorConfig, SyntheticCorpus};
pub use tree::{ClassificationTree, NodeId, NodeKind, TreeDocument};

pub type Histogram64 = Histogram<f64>;
pub type Histogram32 = Histogram<f32>;
pub type Predicate64 = Predicate<f64>;
pub type Predicate32 = Predicate<f32>;
pub type KMeans64 = KMeans<f64>;
pub type KMeans32 = KMeans<f32>;
pub type Tree64 = ClassificationTree<f64>;
pub type TreeDocument64 = TreeDocument<f64>;
