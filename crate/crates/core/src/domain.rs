//! Value types shared by every stage of the loop.
//!
//! All types are immutable once built; refinement produces a new value with a
//! bumped version rather than mutating in place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

macro_rules! string_id {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self> {
                let id = id.into();
                if id.is_empty() {
                    return Err(Error::invalid($what, "identifier must be nonempty"));
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;

            fn try_from(value: String) -> Result<Self> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(ItemId, "item id");
string_id!(UserId, "user id");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    pub title: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub raw_metadata: BTreeMap<String, String>,
}

impl Item {
    pub fn new(
        id: ItemId,
        title: impl Into<String>,
        categories: Vec<String>,
        raw_metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let title = title.into();
        if title.trim().is_empty() {
            return Err(Error::invalid("item", format!("{id} has an empty title")));
        }
        Ok(Self { id, title, categories, raw_metadata })
    }
}

/// Item catalog keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    items: BTreeMap<ItemId, Item>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, item: Item) {
        self.items.insert(item.id.clone(), item);
    }

    pub fn get(&self, id: &ItemId) -> Option<&Item> {
        self.items.get(id)
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.items.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Item> {
        self.items.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ItemId> {
        self.items.keys()
    }
}

impl FromIterator<Item> for Catalog {
    fn from_iter<I: IntoIterator<Item = Item>>(iter: I) -> Self {
        let mut catalog = Catalog::new();
        for item in iter {
            catalog.insert(item);
        }
        catalog
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub rating: Option<f64>,
    pub timestamp: i64,
}

/// Sorts a history chronologically, breaking timestamp ties by item id.
pub fn sort_chronologically(history: &mut [Interaction]) {
    history.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.item.cmp(&b.item)));
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: UserId,
    pub profile_text: String,
    pub version: u32,
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl UserProfile {
    pub fn initial(user: UserId, text: impl Into<String>) -> Result<Self> {
        let profile_text = text.into();
        if profile_text.trim().is_empty() {
            return Err(Error::invalid("profile", "profile text must be nonempty"));
        }
        Ok(Self { user, profile_text, version: 0, provenance: Vec::new() })
    }

    /// Next version of this profile, tagged with the reflection step that
    /// produced it.
    pub fn refined(&self, text: impl Into<String>, step_ref: impl Into<String>) -> Result<Self> {
        let profile_text = text.into();
        if profile_text.trim().is_empty() {
            return Err(Error::invalid("profile", "profile text must be nonempty"));
        }
        let mut provenance = self.provenance.clone();
        provenance.push(step_ref.into());
        Ok(Self { user: self.user.clone(), profile_text, version: self.version + 1, provenance })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemDescription {
    pub item: ItemId,
    pub description_text: String,
    pub version: u32,
}

impl ItemDescription {
    pub fn initial(item: ItemId, text: impl Into<String>) -> Result<Self> {
        let description_text = text.into();
        if description_text.trim().is_empty() {
            return Err(Error::invalid("description", "description text must be nonempty"));
        }
        Ok(Self { item, description_text, version: 0 })
    }

    pub fn reframed(&self, text: impl Into<String>) -> Result<Self> {
        let description_text = text.into();
        if description_text.trim().is_empty() {
            return Err(Error::invalid("description", "description text must be nonempty"));
        }
        Ok(Self { item: self.item.clone(), description_text, version: self.version + 1 })
    }
}

/// Binary ground-truth feedback. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl From<bool> for Label {
    fn from(positive: bool) -> Self {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.is_positive() as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// Ordered, distinct candidate items with a label for every item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCandidateSet")]
pub struct CandidateSet {
    items: Vec<ItemId>,
    labels: BTreeMap<ItemId, Label>,
}

#[derive(Deserialize)]
struct RawCandidateSet {
    items: Vec<ItemId>,
    labels: BTreeMap<ItemId, Label>,
}

impl TryFrom<RawCandidateSet> for CandidateSet {
    type Error = Error;

    fn try_from(raw: RawCandidateSet) -> Result<Self> {
        CandidateSet::new(raw.items, raw.labels)
    }
}

impl CandidateSet {
    pub fn new(items: Vec<ItemId>, labels: BTreeMap<ItemId, Label>) -> Result<Self> {
        if items.len() < 2 {
            return Err(Error::invalid("candidate set", format!("needs at least 2 items, got {}", items.len())));
        }
        let distinct: BTreeSet<&ItemId> = items.iter().collect();
        if distinct.len() != items.len() {
            return Err(Error::invalid("candidate set", "items must be distinct"));
        }
        for item in &items {
            if !labels.contains_key(item) {
                return Err(Error::UnlabeledItem(item.clone()));
            }
        }
        if let Some(extra) = labels.keys().find(|k| !distinct.contains(k)) {
            return Err(Error::invalid("candidate set", format!("label for {extra} which is not a candidate")));
        }
        Ok(Self { items, labels })
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn labels(&self) -> &BTreeMap<ItemId, Label> {
        &self.labels
    }

    pub fn label(&self, item: &ItemId) -> Option<Label> {
        self.labels.get(item).copied()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One contiguous window of a candidate set. `window_index` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub window_index: usize,
    pub items: Vec<ItemId>,
}

/// The agent's judgment of one subset.
///
/// Invalid assessments carry no scores and are ignored by the loss and by
/// reflection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetAssessment {
    pub window_index: usize,
    pub items: Vec<ItemId>,
    pub item_scores: BTreeMap<ItemId, f64>,
    pub compatibility: Option<f64>,
    pub rationale: String,
    pub valid: bool,
    /// Repair prompts issued before a usable reply arrived (or the budget ran out).
    pub repairs: u32,
}

impl SubsetAssessment {
    pub fn invalid(subset: &Subset, repairs: u32, rationale: impl Into<String>) -> Self {
        Self {
            window_index: subset.window_index,
            items: subset.items.clone(),
            item_scores: BTreeMap::new(),
            compatibility: None,
            rationale: rationale.into(),
            valid: false,
            repairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub threshold: f64,
    pub window_size: usize,
}

impl ValidationConfig {
    pub fn new(threshold: f64, window_size: usize) -> Result<Self> {
        let config = Self { threshold, window_size };
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid(
                "validation config",
                format!("threshold must be a finite number >= 0, got {}", self.threshold),
            ));
        }
        if self.window_size < 2 {
            return Err(Error::invalid(
                "validation config",
                format!("window size must be >= 2, got {}", self.window_size),
            ));
        }
        Ok(())
    }
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { threshold: 0.5, window_size: 2 }
    }
}

/// Label composition of a subset. For pairs the names are literal; for
/// larger windows they mean all-positive / all-negative / mixed, and a
/// single-item window is tagged by its one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    TwoPositive,
    TwoNegative,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetLoss {
    pub window_index: usize,
    pub loss: f64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub loss: f64,
    pub threshold: f64,
    pub triggered: bool,
    pub per_subset: Vec<SubsetLoss>,
    pub invalid_windows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReflectionPath {
    ProfileRefinement,
    ItemReframing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub new_profile: Option<UserProfile>,
    pub reframed_descriptions: Vec<ItemDescription>,
    pub paths_taken: BTreeSet<ReflectionPath>,
    pub trace: Vec<String>,
}

/// Knobs for the fixed initialization templates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// How many of the latest history items the initial profile lists.
    pub profile_window: usize,
    /// How many metadata fields (in key order) an initial description carries.
    pub description_fields: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { profile_window: 10, description_fields: 3 }
    }
}

pub const PROFILE_PREAMBLE: &str = "The user has recently engaged with the following items:";

/// Version-0 profile listing the latest `config.profile_window` history items
/// (oldest first) with their categories.
pub fn init_profile(
    user: &UserId,
    history: &[Interaction],
    catalog: &Catalog,
    config: &InitConfig,
) -> Result<UserProfile> {
    if history.is_empty() {
        return Err(Error::NoInteractions(user.clone()));
    }
    let mut sorted = history.to_vec();
    sort_chronologically(&mut sorted);
    let start = sorted.len().saturating_sub(config.profile_window);

    let mut text = String::from(PROFILE_PREAMBLE);
    for interaction in &sorted[start..] {
        text.push_str("\n- ");
        match catalog.get(&interaction.item) {
            Some(item) => {
                text.push_str(&item.title);
                if !item.categories.is_empty() {
                    text.push_str(" [");
                    text.push_str(&item.categories.join(", "));
                    text.push(']');
                }
            }
            None => {
                tracing::warn!(item = %interaction.item, "history item missing from catalog");
                text.push_str(interaction.item.as_str());
            }
        }
    }
    UserProfile::initial(user.clone(), text)
}

/// Version-0 description: `title | categories: a, b | key: value ...`.
pub fn init_description(item: &Item, config: &InitConfig) -> Result<ItemDescription> {
    if item.title.trim().is_empty() {
        return Err(Error::invalid("item", format!("{} has an empty title", item.id)));
    }
    let mut text = item.title.clone();
    if !item.categories.is_empty() {
        text.push_str(" | categories: ");
        text.push_str(&item.categories.join(", "));
    }
    // BTreeMap iteration is already lexicographic by key.
    for (key, value) in item.raw_metadata.iter().take(config.description_fields) {
        text.push_str(&format!(" | {key}: {value}"));
    }
    ItemDescription::initial(item.id.clone(), text)
}

/// Single-line JSON with object keys in sorted order.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&sort_keys(value))?)
}

fn sort_keys(value: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}
