//! Synthetic fixture: keyword-tagged items and users with hidden keyword
//! weights, so the whole pipeline runs offline against the latent oracle.
//!
//! Each item carries `keywords_per_item` distinct keywords in its title and
//! categories. Each user likes a few keywords and dislikes a few others.
//! A history is drawn one item at a time: with probability
//! `flip_probability` uniformly, otherwise among unseen items with positive
//! hidden utility, weighted by `exp(3 * utility)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::backend::LatentOracleConfig;
use crate::domain::{Catalog, Interaction, Item, ItemId, UserId};
use crate::seed::rng_for;
use crate::{Error, Result};

pub const VOCABULARY: [&str; 24] = [
    "ambient",
    "bluegrass",
    "blues",
    "baroque",
    "country",
    "disco",
    "dub",
    "folk",
    "funk",
    "gospel",
    "grunge",
    "hiphop",
    "indie",
    "jazz",
    "latin",
    "lounge",
    "metal",
    "opera",
    "punk",
    "reggae",
    "soul",
    "swing",
    "techno",
    "trance",
];

const NOUNS: [&str; 8] = ["Sessions", "Tapes", "Anthology", "Nights", "Collection", "Sides", "Suite", "Reissue"];

pub const ORACLE_FILE: &str = "oracle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub keywords_per_item: usize,
    pub liked_per_user: usize,
    pub disliked_per_user: usize,
    pub min_history: usize,
    pub max_history: usize,
    pub flip_probability: f64,
    /// Passed through to the oracle's per-score noise.
    pub assessment_noise: f64,
    /// Passed through to the oracle's per-prompt offset.
    pub prompt_bias: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 20,
            items: 200,
            keywords_per_item: 3,
            liked_per_user: 3,
            disliked_per_user: 3,
            min_history: 12,
            max_history: 20,
            flip_probability: 0.05,
            assessment_noise: 0.05,
            prompt_bias: 0.15,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    fn check(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("synthetic config", reason));
        if self.keywords_per_item == 0 || self.keywords_per_item > VOCABULARY.len() {
            return bad(format!("keywords_per_item must be in 1..={}", VOCABULARY.len()));
        }
        if self.liked_per_user + self.disliked_per_user > VOCABULARY.len() {
            return bad("more liked and disliked keywords than the vocabulary holds".into());
        }
        if self.min_history < 3 || self.min_history > self.max_history {
            return bad("need 3 <= min_history <= max_history".into());
        }
        if self.max_history + 10 > self.items {
            return bad("catalog too small for the history length plus 9 evaluation negatives".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub oracle: LatentOracleConfig,
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.check()?;

    let mut rng = rng_for(config.seed, &["synthetic", "items"]);
    let mut catalog = Catalog::new();
    for i in 0..config.items {
        let mut keywords: Vec<&str> = VOCABULARY.choose_multiple(&mut rng, config.keywords_per_item).copied().collect();
        keywords.sort();
        let noun = NOUNS.choose(&mut rng).expect("nonempty");
        let mut title: Vec<String> = keywords.iter().map(|k| capitalize(k)).collect();
        title.push(noun.to_string());
        catalog.insert(Item::new(
            ItemId::new(format!("s{i:04}"))?,
            title.join(" "),
            keywords.iter().map(|k| k.to_string()).collect(),
            BTreeMap::new(),
        )?);
    }

    let mut oracle_users = BTreeMap::new();
    let mut interactions = Vec::new();
    let items: Vec<&Item> = catalog.iter().collect();
    for u in 0..config.users {
        let user = UserId::new(format!("user{u:03}"))?;
        let mut rng = rng_for(config.seed, &["synthetic", "user", user.as_str()]);

        let picks: Vec<&str> =
            VOCABULARY.choose_multiple(&mut rng, config.liked_per_user + config.disliked_per_user).copied().collect();
        let mut weights = BTreeMap::new();
        for (n, keyword) in picks.iter().enumerate() {
            let magnitude = round2(rng.random_range(0.5..=1.0));
            let sign = if n < config.liked_per_user { 1.0 } else { -1.0 };
            weights.insert(keyword.to_string(), sign * magnitude);
        }
        let utility = |item: &Item| -> f64 { item.categories.iter().filter_map(|k| weights.get(k)).sum() };

        let length = rng.random_range(config.min_history..=config.max_history);
        let mut seen = vec![false; items.len()];
        for step in 0..length {
            let unseen: Vec<usize> = (0..items.len()).filter(|i| !seen[*i]).collect();
            let liked: Vec<usize> = unseen.iter().copied().filter(|i| utility(items[*i]) > 0.0).collect();
            let pick = if rng.random::<f64>() < config.flip_probability || liked.is_empty() {
                *unseen.choose(&mut rng).expect("catalog larger than history")
            } else {
                let w: Vec<f64> = liked.iter().map(|i| (3.0 * utility(items[*i])).exp()).collect();
                let dist = WeightedIndex::new(&w).map_err(|e| Error::invalid("synthetic weights", e.to_string()))?;
                liked[dist.sample(&mut rng)]
            };
            seen[pick] = true;
            interactions.push(Interaction {
                user: user.clone(),
                item: items[pick].id.clone(),
                rating: None,
                timestamp: 1_600_000_000 + (u as i64) * 1_000_000 + (step as i64) * 3_600,
            });
        }
        oracle_users.insert(user, weights);
    }

    let oracle = LatentOracleConfig {
        users: oracle_users,
        noise_seed: config.seed,
        flip_probability: config.flip_probability,
        assessment_noise: config.assessment_noise,
        prompt_bias: config.prompt_bias,
    };
    oracle.validate()?;
    Ok(SyntheticDataset { dataset: Dataset { interactions, catalog }, oracle })
}

impl SyntheticDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.dataset.save(dir)?;
        let path = dir.join(ORACLE_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self.oracle)?).map_err(|e| Error::io(&path, e))
    }
}

pub fn load_oracle(dir: &Path) -> Result<LatentOracleConfig> {
    let path = dir.join(ORACLE_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::histories;

    #[test]
    fn shape_matches_config() {
        let cfg = SyntheticConfig::default();
        let data = generate(&cfg).unwrap();
        assert_eq!(data.dataset.catalog.len(), 200);
        assert_eq!(data.oracle.users.len(), 20);
        let h = histories(&data.dataset.interactions);
        assert_eq!(h.len(), 20);
        for history in h.values() {
            assert!((12..=20).contains(&history.len()));
            let distinct: std::collections::BTreeSet<_> = history.iter().map(|i| &i.item).collect();
            assert_eq!(distinct.len(), history.len());
        }
        for item in data.dataset.catalog.iter() {
            assert_eq!(item.categories.len(), 3);
            for k in &item.categories {
                assert!(item.title.to_lowercase().contains(k.as_str()));
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SyntheticConfig { seed: 8, ..cfg };
        assert_ne!(generate(&other).unwrap().dataset, generate(&SyntheticConfig::default()).unwrap().dataset);
    }

    #[test]
    fn histories_follow_hidden_weights() {
        let data = generate(&SyntheticConfig::default()).unwrap();
        let mut liked = 0;
        let mut total = 0;
        for i in &data.dataset.interactions {
            let text = &data.dataset.catalog.get(&i.item).unwrap().title;
            total += 1;
            if data.oracle.utility(&i.user, text) > 0.0 {
                liked += 1;
            }
        }
        assert!(liked as f64 / total as f64 > 0.85, "{liked}/{total}");
    }

    #[test]
    fn round_trip_with_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&SyntheticConfig { users: 3, ..Default::default() }).unwrap();
        data.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), data.dataset);
        assert_eq!(load_oracle(dir.path()).unwrap(), data.oracle);
    }
}
