//! Dataset ingestion, user sampling, leave-one-out splits and the synthetic
//! fixture generator.
//!
//! Every interaction is treated as an implicit positive; ratings are kept
//! only as metadata.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{canonical_json, sort_chronologically, Catalog, Interaction, Item, ItemId, UserId};
use crate::{Error, Result};

pub mod amazon;
pub mod movielens;
pub mod sampling;
pub mod synthetic;

pub use amazon::parse_amazon;
pub use movielens::parse_movielens;
pub use sampling::{
    leave_one_out_split, sample_eval_candidates, sample_users, split_users, SampleMode, SamplingConfig, UserSplit,
    EVAL_NEGATIVES,
};
pub use synthetic::{generate, SyntheticConfig, SyntheticDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    /// Abort when more than this fraction of data rows is malformed.
    pub max_malformed_fraction: f64,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { max_malformed_fraction: 0.01 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub malformed: usize,
    /// Interactions whose item has no usable catalog entry.
    pub missing_item: usize,
    /// Older rows dropped by the latest-wins (user, item) dedup.
    pub duplicates: usize,
    pub catalog_rows: usize,
    pub catalog_malformed: usize,
    /// Catalog rows dropped for lacking a title.
    pub untitled: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub catalog: Catalog,
}

pub(crate) fn check_malformed(path: &Path, malformed: usize, total: usize, options: &ParseOptions) -> Result<()> {
    if total > 0 && malformed as f64 > options.max_malformed_fraction * total as f64 {
        return Err(Error::MalformedInput { path: path.to_path_buf(), malformed, total });
    }
    Ok(())
}

/// Lines of a file decoded lossily, so Latin-1 titles survive.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let mut reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut lines = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        let line = String::from_utf8_lossy(&buf);
        lines.push(line.trim_end_matches(['\n', '\r']).to_string());
    }
    Ok(lines)
}

/// Keeps the latest row per (user, item); on equal timestamps the later row
/// wins. Returns the number of rows dropped.
pub(crate) fn dedup_latest(interactions: &mut Vec<Interaction>) -> usize {
    let before = interactions.len();
    let mut latest: BTreeMap<(UserId, ItemId), Interaction> = BTreeMap::new();
    for row in interactions.drain(..) {
        let key = (row.user.clone(), row.item.clone());
        match latest.get(&key) {
            Some(kept) if kept.timestamp > row.timestamp => {}
            _ => {
                latest.insert(key, row);
            }
        }
    }
    interactions.extend(latest.into_values());
    before - interactions.len()
}

/// Drops interactions with no catalog entry; returns how many.
pub(crate) fn retain_known(interactions: &mut Vec<Interaction>, catalog: &Catalog) -> usize {
    let before = interactions.len();
    interactions.retain(|i| catalog.contains(&i.item));
    before - interactions.len()
}

/// Per-user histories in chronological order, users sorted by id.
pub fn histories(interactions: &[Interaction]) -> BTreeMap<UserId, Vec<Interaction>> {
    let mut out: BTreeMap<UserId, Vec<Interaction>> = BTreeMap::new();
    for i in interactions {
        out.entry(i.user.clone()).or_default().push(i.clone());
    }
    for history in out.values_mut() {
        sort_chronologically(history);
    }
    out
}

pub fn interacted_items(history: &[Interaction]) -> BTreeSet<ItemId> {
    history.iter().map(|i| i.item.clone()).collect()
}

/// Writes one canonical JSON object per line.
pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        writeln!(out, "{}", canonical_json(row)?).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

pub const INTERACTIONS_TABLE: &str = "interactions.jsonl";
pub const CATALOG_TABLE: &str = "catalog.jsonl";
pub const SPLITS_TABLE: &str = "splits.jsonl";

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut interactions = self.interactions.clone();
        interactions.sort_by(|a, b| (&a.user, a.timestamp, &a.item).cmp(&(&b.user, b.timestamp, &b.item)));
        write_jsonl(&dir.join(INTERACTIONS_TABLE), &interactions)?;
        write_jsonl(&dir.join(CATALOG_TABLE), self.catalog.iter())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let interactions = read_jsonl(&dir.join(INTERACTIONS_TABLE))?;
        let items: Vec<Item> = read_jsonl(&dir.join(CATALOG_TABLE))?;
        Ok(Self { interactions, catalog: items.into_iter().collect() })
    }

    /// Restricts interactions to `users`.
    pub fn restrict_to(&self, users: &BTreeSet<UserId>) -> Self {
        Self {
            interactions: self.interactions.iter().filter(|i| users.contains(&i.user)).cloned().collect(),
            catalog: self.catalog.clone(),
        }
    }
}
