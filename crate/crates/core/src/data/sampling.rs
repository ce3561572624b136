//! User sampling, leave-one-out splits and evaluation candidates.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::domain::{sort_chronologically, CandidateSet, Catalog, Interaction, ItemId, Label, UserId};
use crate::seed::rng_for;
use crate::{Error, Result};

/// Sampled negatives per evaluation candidate set.
pub const EVAL_NEGATIVES: usize = 9;
/// Shortest history that can be split into train prefix and target.
pub const MIN_HISTORY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Dense,
    Sparse,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub mode: SampleMode,
    pub count: usize,
    pub seed: u64,
    pub dense_min: usize,
    pub sparse_min: usize,
    pub sparse_max: usize,
}

impl SamplingConfig {
    pub fn new(mode: SampleMode, count: usize, seed: u64) -> Self {
        Self { mode, count, seed, dense_min: 20, sparse_min: 5, sparse_max: 10 }
    }

    fn eligible(&self, len: usize) -> bool {
        len >= MIN_HISTORY
            && match self.mode {
                SampleMode::Dense => len >= self.dense_min,
                SampleMode::Sparse => (self.sparse_min..=self.sparse_max).contains(&len),
                SampleMode::Uniform => true,
            }
    }
}

/// Uniform sample without replacement among eligible users, returned in id
/// order.
pub fn sample_users(histories: &BTreeMap<UserId, Vec<Interaction>>, config: &SamplingConfig) -> Result<Vec<UserId>> {
    let eligible: Vec<&UserId> = histories.iter().filter(|(_, h)| config.eligible(h.len())).map(|(u, _)| u).collect();
    if eligible.len() < config.count {
        let short = histories.values().filter(|h| h.len() < MIN_HISTORY).count();
        let stats = format!(
            "{} users total, {} with fewer than {MIN_HISTORY} interactions, mode {:?} (dense >= {}, sparse {}-{})",
            histories.len(),
            short,
            config.mode,
            config.dense_min,
            config.sparse_min,
            config.sparse_max
        );
        return Err(Error::InsufficientUsers { requested: config.count, eligible: eligible.len(), stats });
    }
    let mut rng = rng_for(config.seed, &["sample_users"]);
    let mut sample: Vec<UserId> = eligible.choose_multiple(&mut rng, config.count).map(|u| (*u).clone()).collect();
    sample.sort();
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: UserId,
    /// Chronological, excluding the target.
    pub train: Vec<Interaction>,
    pub target: Interaction,
}

impl UserSplit {
    /// Every item the user interacted with, target included.
    pub fn all_items(&self) -> BTreeSet<ItemId> {
        self.train.iter().chain(std::iter::once(&self.target)).map(|i| i.item.clone()).collect()
    }
}

/// Holds out the chronologically last interaction; among tied last
/// timestamps the greatest ItemId is the target.
pub fn leave_one_out_split(history: &[Interaction]) -> Result<UserSplit> {
    if history.len() < MIN_HISTORY {
        return Err(Error::invalid("history", format!("{} interactions, need at least {MIN_HISTORY}", history.len())));
    }
    let mut sorted = history.to_vec();
    sort_chronologically(&mut sorted);
    let target = sorted.pop().expect("nonempty");
    Ok(UserSplit { user: target.user.clone(), train: sorted, target })
}

/// Splits every user; too-short histories are skipped and counted.
pub fn split_users(histories: &BTreeMap<UserId, Vec<Interaction>>) -> (BTreeMap<UserId, UserSplit>, usize) {
    let mut splits = BTreeMap::new();
    let mut excluded = 0;
    for (user, history) in histories {
        match leave_one_out_split(history) {
            Ok(split) => {
                splits.insert(user.clone(), split);
            }
            Err(_) => excluded += 1,
        }
    }
    (splits, excluded)
}

/// The target plus [`EVAL_NEGATIVES`] uniform negatives the user never
/// interacted with, in seeded shuffled order.
pub fn sample_eval_candidates(
    user: &UserId,
    target: &ItemId,
    history: &BTreeSet<ItemId>,
    catalog: &Catalog,
    seed: u64,
) -> Result<CandidateSet> {
    let pool: Vec<&ItemId> = catalog.ids().filter(|id| *id != target && !history.contains(*id)).collect();
    if pool.len() < EVAL_NEGATIVES {
        return Err(Error::InsufficientItems { needed: EVAL_NEGATIVES, available: pool.len() });
    }
    let mut rng = rng_for(seed, &["eval_candidates", user.as_str()]);
    let mut items: Vec<ItemId> = pool.choose_multiple(&mut rng, EVAL_NEGATIVES).map(|i| (*i).clone()).collect();
    let mut labels: BTreeMap<ItemId, Label> = items.iter().map(|i| (i.clone(), Label::Negative)).collect();
    items.push(target.clone());
    labels.insert(target.clone(), Label::Positive);
    items.shuffle(&mut rng);
    CandidateSet::new(items, labels)
}
