//! On-disk corpus: a directory of versioned binary files plus `manifest.json`.
//!
//! Each binary file starts with [`MAGIC`], a little-endian format version and
//! a one-byte kind, followed by a bincode payload. The corpus id is the
//! SHA-256 of the transaction file, so re-ingesting identical input yields the
//! same id.

use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::entity::{build_entities, EntityIndex};
use crate::error::{Error, Result};
use crate::ingest::{parse_transactions, TagTable, TransactionStore};
use crate::measures::{build_slices, SliceStore};

pub const MAGIC: &[u8; 8] = b"LLCORPUS";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Kind {
    Transactions = 1,
    Entities = 2,
    Slices = 3,
    Tags = 4,
}

impl Kind {
    fn file(self) -> &'static str {
        match self {
            Kind::Transactions => "transactions.bin",
            Kind::Entities => "entities.bin",
            Kind::Slices => "slices.bin",
            Kind::Tags => "tags.bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub transactions: usize,
    pub addresses: usize,
    pub entities: usize,
    pub slices: usize,
    pub tagged_addresses: usize,
    pub tagged_entities: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub corpus_id: String,
    pub transactions: FileEntry,
    pub entities: FileEntry,
    pub slices: FileEntry,
    pub tags: Option<FileEntry>,
    pub counts: CorpusCounts,
    /// Time span of the corpus in unix seconds, absent when empty.
    pub time_bounds: Option<(i64, i64)>,
    pub built_at: String,
    pub tags_imported_at: Option<String>,
}

/// Everything the query layer needs, loaded in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub store: TransactionStore,
    pub index: EntityIndex,
    pub slices: SliceStore,
    pub tags: TagTable,
    pub id: String,
}

fn encode<T: Serialize>(kind: Kind, value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(kind as u8);
    bincode::serialize_into(&mut buf, value).map_err(|e| Error::Corpus(format!("encode {}: {e}", kind.file())))?;
    Ok(buf)
}

fn decode<T: DeserializeOwned>(kind: Kind, bytes: &[u8]) -> Result<T> {
    let name = kind.file();
    let header = MAGIC.len() + 5;
    if bytes.len() < header || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Corpus(format!("{name}: not a corpus file")));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Corpus(format!("{name}: format version {version}, expected {FORMAT_VERSION}")));
    }
    if bytes[12] != kind as u8 {
        return Err(Error::Corpus(format!("{name}: wrong file kind {}", bytes[12])));
    }
    bincode::deserialize(&bytes[header..]).map_err(|e| Error::Corpus(format!("decode {name}: {e}")))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, kind: Kind, bytes: &[u8]) -> Result<FileEntry> {
    let path = dir.join(kind.file());
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(FileEntry { path: kind.file().to_owned(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 })
}

fn read_file<T: DeserializeOwned>(dir: &Path, kind: Kind, entry: &FileEntry) -> Result<T> {
    let mut bytes = Vec::new();
    fs::File::open(dir.join(&entry.path))
        .map_err(|e| Error::Corpus(format!("{}: {e}", entry.path)))?
        .read_to_end(&mut bytes)?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::Corpus(format!("{}: checksum mismatch", entry.path)));
    }
    decode(kind, &bytes)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Corpus {
    /// Builds entities and slices for an already parsed store.
    pub fn build(store: TransactionStore) -> Result<Self> {
        let index = build_entities(&store);
        let slices = build_slices(&store, &index);
        let bytes = encode(Kind::Transactions, &store)?;
        Ok(Self { store, index, slices, tags: TagTable::default(), id: sha256_hex(&bytes) })
    }

    pub fn from_jsonl<R: BufRead>(source: R) -> Result<Self> {
        Self::build(parse_transactions(source)?)
    }

    /// Attaches a tag table, replacing any previous one.
    pub fn set_tags(&mut self, tags: TagTable) {
        let index = std::mem::take(&mut self.index);
        self.index = index.attach_tags(&tags);
        self.tags = tags;
    }

    pub fn counts(&self) -> CorpusCounts {
        CorpusCounts {
            transactions: self.store.len(),
            addresses: self.store.num_addresses(),
            entities: self.index.num_entities(),
            slices: self.slices.num_slices(),
            tagged_addresses: self.tags.len(),
            tagged_entities: self.index.tagged().count(),
        }
    }

    /// Writes every file and the manifest into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<CorpusManifest> {
        fs::create_dir_all(dir)?;
        let transactions = write_file(dir, Kind::Transactions, &encode(Kind::Transactions, &self.store)?)?;
        let entities = write_file(dir, Kind::Entities, &encode(Kind::Entities, &self.index)?)?;
        let slices = write_file(dir, Kind::Slices, &encode(Kind::Slices, &self.slices)?)?;
        let tags = if self.tags.is_empty() && self.tags.unknown_addresses == 0 {
            let _ = fs::remove_file(dir.join(Kind::Tags.file()));
            None
        } else {
            Some(write_file(dir, Kind::Tags, &encode(Kind::Tags, &self.tags)?)?)
        };
        let manifest = CorpusManifest {
            format_version: FORMAT_VERSION,
            corpus_id: transactions.sha256.clone(),
            tags_imported_at: tags.as_ref().map(|_| now()),
            transactions,
            entities,
            slices,
            tags,
            counts: self.counts(),
            time_bounds: self.store.time_bounds(),
            built_at: now(),
        };
        let path = dir.join(MANIFEST_FILE);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
        fs::rename(&tmp, &path)?;
        Ok(manifest)
    }

    pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
        let raw = fs::read(dir.join(MANIFEST_FILE))
            .map_err(|e| Error::Corpus(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let manifest: CorpusManifest =
            serde_json::from_slice(&raw).map_err(|e| Error::Corpus(format!("{MANIFEST_FILE}: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Corpus(format!(
                "corpus format version {}, expected {FORMAT_VERSION}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }

    /// Loads a corpus directory, verifying checksums and headers.
    pub fn load(dir: &Path) -> Result<(Self, CorpusManifest)> {
        let manifest = Self::read_manifest(dir)?;
        let store: TransactionStore = read_file(dir, Kind::Transactions, &manifest.transactions)?;
        let index: EntityIndex = read_file(dir, Kind::Entities, &manifest.entities)?;
        let slices: SliceStore = read_file(dir, Kind::Slices, &manifest.slices)?;
        let tags = match &manifest.tags {
            Some(entry) => read_file(dir, Kind::Tags, entry)?,
            None => TagTable::default(),
        };
        if index.num_addresses() != store.num_addresses() || slices.num_transactions() != store.len() {
            return Err(Error::Corpus("corpus files are inconsistent".into()));
        }
        let corpus = Self { store, index, slices, tags, id: manifest.corpus_id.clone() };
        Ok((corpus, manifest))
    }
}

/// Paths of the corpus files relative to `dir`.
pub fn corpus_files(dir: &Path) -> Vec<PathBuf> {
    [Kind::Transactions, Kind::Entities, Kind::Slices, Kind::Tags]
        .iter()
        .map(|k| dir.join(k.file()))
        .chain(std::iter::once(dir.join(MANIFEST_FILE)))
        .collect()
}
