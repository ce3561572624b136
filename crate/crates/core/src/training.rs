//! The closed training loop: build candidate sets from each user's history,
//! assess, validate, and reflect, with a checkpoint after every user.
//!
//! Users run sequentially in id order; the subsets of one candidate set are
//! assessed concurrently. Every random draw is keyed on
//! `(shuffle_seed, user, position)`, so each epoch revisits identical sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::assessment::{assess_subsets, AssessmentMode};
use crate::backend::Backend;
use crate::data::{histories, split_users, Dataset, UserSplit};
use crate::domain::{
    canonical_json, init_description, init_profile, CandidateSet, Catalog, InitConfig, Interaction, ItemDescription,
    ItemId, Label, MismatchReport, SubsetAssessment, UserId, UserProfile, ValidationConfig,
};
use crate::reflection::{reflect, ReflectionContext, REPORT_CONTEXT};
use crate::seed::{config_hash, rng_for};
use crate::template::TemplateSet;
use crate::validation::validate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Point-wise prompts: one item per window, partitioning bypassed.
    NoSetwise,
    /// Assess and validate only; nothing is ever rewritten.
    NoReflection,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSetwise => "no_setwise",
            Ablation::NoReflection => "no_reflection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub epochs: u32,
    pub positives_per_set: usize,
    pub negatives_per_set: usize,
    pub max_reflections_per_set: u32,
    pub shuffle_seed: u64,
    pub ablation: Ablation,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            positives_per_set: 2,
            negatives_per_set: 2,
            max_reflections_per_set: 1,
            shuffle_seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl LoopConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("loop config", "epochs must be at least 1"));
        }
        if self.positives_per_set < 1 || self.negatives_per_set < 1 {
            return Err(Error::invalid("loop config", "positives and negatives per set must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    #[serde(rename = "loop")]
    pub training: LoopConfig,
    pub validation: ValidationConfig,
    pub init: InitConfig,
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        self.training.check()?;
        self.validation.check()
    }

    pub fn assessment_mode(&self) -> AssessmentMode {
        match self.training.ablation {
            Ablation::NoSetwise => AssessmentMode::PointWise,
            _ => AssessmentMode::SetWise { window_size: self.validation.window_size },
        }
    }
}

/// Catalog plus per-user leave-one-out splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub catalog: Catalog,
    pub splits: BTreeMap<UserId, UserSplit>,
}

impl TrainingData {
    /// Splits every user; returns the data and the number of users too short
    /// to split.
    pub fn from_dataset(dataset: &Dataset) -> (Self, usize) {
        let (splits, excluded) = split_users(&histories(&dataset.interactions));
        (Self { catalog: dataset.catalog.clone(), splits }, excluded)
    }
}

/// Version-0 description of every catalog item.
pub fn base_descriptions(catalog: &Catalog, init: &InitConfig) -> Result<BTreeMap<ItemId, ItemDescription>> {
    catalog.iter().map(|item| Ok((item.id.clone(), init_description(item, init)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub profile: UserProfile,
    /// This user's rewritten descriptions; absent items use the base text.
    #[serde(default)]
    pub descriptions: BTreeMap<ItemId, ItemDescription>,
    /// Last triggered reports, oldest first, at most [`REPORT_CONTEXT`].
    #[serde(default)]
    pub recent_reports: Vec<MismatchReport>,
}

impl UserState {
    /// Effective descriptions for `items`.
    pub fn descriptions_for<'a>(
        &self,
        items: impl IntoIterator<Item = &'a ItemId>,
        base: &BTreeMap<ItemId, ItemDescription>,
    ) -> Result<BTreeMap<ItemId, ItemDescription>> {
        items
            .into_iter()
            .map(|item| {
                let d = self
                    .descriptions
                    .get(item)
                    .or_else(|| base.get(item))
                    .ok_or_else(|| Error::MissingDescription(item.clone()))?;
                Ok((item.clone(), d.clone()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub users: BTreeMap<UserId, UserState>,
}

impl TrainingState {
    pub fn initial(data: &TrainingData, init: &InitConfig) -> Result<Self> {
        let mut users = BTreeMap::new();
        for (user, split) in &data.splits {
            users.insert(
                user.clone(),
                UserState {
                    profile: init_profile(user, &split.train, &data.catalog, init)?,
                    descriptions: BTreeMap::new(),
                    recent_reports: Vec::new(),
                },
            );
        }
        Ok(Self { users })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &canonical_json(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Training positions: 0-based indices `t` of the train prefix from `p` on.
/// The held-out target is never a position.
pub fn training_positions(split: &UserSplit, positives: usize) -> std::ops::Range<usize> {
    positives.min(split.train.len())..split.train.len()
}

/// The `p` most recent positives up to `t` plus `m` negatives drawn from
/// items the user never interacted with, shuffled under the seed.
#[allow(clippy::too_many_arguments)]
pub fn build_training_set(
    user: &UserId,
    history: &[Interaction],
    interacted: &BTreeSet<ItemId>,
    catalog: &Catalog,
    t: usize,
    positives: usize,
    negatives: usize,
    seed: u64,
) -> Result<CandidateSet> {
    if t >= history.len() || t + 1 < positives {
        return Err(Error::invalid(
            "training position",
            format!("position {t} has fewer than {positives} positives for {user}"),
        ));
    }
    let pool: Vec<&ItemId> = catalog.ids().filter(|id| !interacted.contains(*id)).collect();
    if pool.len() < negatives {
        return Err(Error::InsufficientItems { needed: negatives, available: pool.len() });
    }
    let mut rng = rng_for(seed, &["train", user.as_str(), &t.to_string()]);
    let mut labels = BTreeMap::new();
    let mut items = Vec::with_capacity(positives + negatives);
    for i in &history[t + 1 - positives..=t] {
        items.push(i.item.clone());
        labels.insert(i.item.clone(), Label::Positive);
    }
    for id in pool.choose_multiple(&mut rng, negatives) {
        items.push((*id).clone());
        labels.insert((*id).clone(), Label::Negative);
    }
    items.shuffle(&mut rng);
    CandidateSet::new(items, labels)
}

/// One line of the experiment log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: u32,
    pub user: UserId,
    pub position: usize,
    pub set: CandidateSet,
    /// Assessments before any reflection.
    pub assessments: Vec<SubsetAssessment>,
    pub loss_before: f64,
    pub loss_after: f64,
    pub triggered: bool,
    pub reflections: u32,
    pub invalid_windows: usize,
    pub profile_version: u32,
    /// (item, new version) for every description rewritten in this step.
    pub reframed: Vec<(ItemId, u32)>,
    pub trace: Vec<String>,
}

/// Loop driver bound to one dataset, config and backend.
pub struct Trainer<'a> {
    data: &'a TrainingData,
    config: ExperimentConfig,
    backend: &'a dyn Backend,
    templates: &'a TemplateSet,
    base: BTreeMap<ItemId, ItemDescription>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        data: &'a TrainingData,
        config: ExperimentConfig,
        backend: &'a dyn Backend,
        templates: &'a TemplateSet,
    ) -> Result<Self> {
        config.check()?;
        Ok(Self { data, config, backend, templates, base: base_descriptions(&data.catalog, &config.init)? })
    }

    pub fn base(&self) -> &BTreeMap<ItemId, ItemDescription> {
        &self.base
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Hash of the config and backend model; guards resumption.
    pub fn config_hash(&self) -> Result<String> {
        config_hash(&(&self.config, self.backend.model_id()))
    }

    pub fn training_set(&self, user: &UserId, t: usize) -> Result<CandidateSet> {
        let split = self.data.splits.get(user).ok_or_else(|| Error::NoInteractions(user.clone()))?;
        let cfg = &self.config.training;
        build_training_set(
            user,
            &split.train,
            &split.all_items(),
            &self.data.catalog,
            t,
            cfg.positives_per_set,
            cfg.negatives_per_set,
            cfg.shuffle_seed,
        )
    }

    fn assess(&self, state: &UserState, set: &CandidateSet) -> Result<(Vec<SubsetAssessment>, MismatchReport)> {
        let subsets = self.config.assessment_mode().subsets(set)?;
        let descriptions = state.descriptions_for(set.items(), &self.base)?;
        let assessments = assess_subsets(&state.profile, &subsets, &descriptions, self.templates, self.backend)?;
        let report = validate(&assessments, set.labels(), &self.config.validation)?;
        Ok((assessments, report))
    }

    /// Assess → validate → (reflect → re-assess) for one candidate set,
    /// updating `state` in place.
    pub fn run_step(
        &self,
        epoch: u32,
        position: usize,
        set: CandidateSet,
        state: &mut UserState,
    ) -> Result<StepRecord> {
        let user = state.profile.user.clone();
        let (assessments, mut report) = self.assess(state, &set)?;
        let loss_before = report.loss;
        let triggered = report.triggered;
        let invalid_windows = report.invalid_windows.len();
        let mut reflections = 0;
        let mut reframed = Vec::new();
        let mut trace = Vec::new();
        let mut current = assessments.clone();

        while report.triggered
            && self.config.training.ablation != Ablation::NoReflection
            && reflections < self.config.training.max_reflections_per_set
        {
            let step_ref = format!("e{epoch}/{user}/t{position}/r{reflections}");
            let descriptions = state.descriptions_for(set.items(), &self.base)?;
            let ctx = ReflectionContext {
                profile: &state.profile,
                assessments: &current,
                labels: set.labels(),
                report: &report,
                recent_reports: &state.recent_reports,
                descriptions: &descriptions,
                step_ref: &step_ref,
            };
            let outcome = reflect(&ctx, self.templates, self.backend)?;
            reflections += 1;

            // Descriptions commit before the profile.
            for d in outcome.reframed_descriptions {
                reframed.push((d.item.clone(), d.version));
                state.descriptions.insert(d.item.clone(), d);
            }
            if let Some(profile) = outcome.new_profile {
                state.profile = profile;
            }
            state.recent_reports.push(report.clone());
            let excess = state.recent_reports.len().saturating_sub(REPORT_CONTEXT);
            state.recent_reports.drain(..excess);
            trace.extend(outcome.trace.into_iter().map(|t| format!("{step_ref}: {t}")));

            (current, report) = self.assess(state, &set)?;
        }

        Ok(StepRecord {
            epoch,
            user,
            position,
            set,
            assessments,
            loss_before,
            loss_after: report.loss,
            triggered,
            reflections,
            invalid_windows,
            profile_version: state.profile.version,
            reframed,
            trace,
        })
    }

    /// All epochs over all users, resuming from `options.run_dir` when asked.
    pub fn run(&self, options: &RunOptions) -> Result<TrainingOutcome> {
        let hash = self.config_hash()?;
        let users: Vec<&UserId> = self.data.splits.keys().collect();
        let mut log = RunLog::new(options.run_dir.as_deref());

        let (mut state, mut cursor) = if options.resume {
            let dir =
                options.run_dir.as_deref().ok_or_else(|| Error::Checkpoint("resume needs a run directory".into()))?;
            let checkpoint = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
            if checkpoint.config_hash != hash {
                return Err(Error::Checkpoint(format!(
                    "checkpoint was written for config {}, current config is {hash}",
                    checkpoint.config_hash
                )));
            }
            log.resume(checkpoint.log_records)?;
            (checkpoint.state(), checkpoint.cursor)
        } else {
            log.start()?;
            (TrainingState::initial(self.data, &self.config.init)?, Cursor::default())
        };

        let mut processed = 0;
        while cursor.epoch < self.config.training.epochs {
            if cursor.user_index >= users.len() {
                cursor = Cursor { epoch: cursor.epoch + 1, user_index: 0 };
                continue;
            }
            if options.stop_after_users.is_some_and(|n| processed >= n) {
                return Ok(TrainingOutcome { state, records: log.into_records(), completed: false });
            }
            let user = users[cursor.user_index];
            let split = &self.data.splits[user];
            let user_state =
                state.users.get_mut(user).ok_or_else(|| Error::Checkpoint(format!("no state for user {user}")))?;
            for t in training_positions(split, self.config.training.positives_per_set) {
                let set = self.training_set(user, t)?;
                let record = self.run_step(cursor.epoch, t, set, user_state)?;
                log.append(record)?;
            }
            tracing::info!(epoch = cursor.epoch, user = %user, "user done");
            cursor.user_index += 1;
            processed += 1;
            if let Some(dir) = options.run_dir.as_deref() {
                Checkpoint::new(&hash, cursor, log.len(), &state).save(&dir.join(CHECKPOINT_FILE))?;
            }
        }

        if let Some(dir) = options.run_dir.as_deref() {
            state.save(&dir.join(STATE_FILE))?;
        }
        Ok(TrainingOutcome { state, records: log.into_records(), completed: true })
    }
}

pub fn run_training(
    data: &TrainingData,
    config: ExperimentConfig,
    backend: &dyn Backend,
    templates: &TemplateSet,
    options: &RunOptions,
) -> Result<TrainingOutcome> {
    Trainer::new(data, config, backend, templates)?.run(options)
}

pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATE_FILE: &str = "state.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub run_dir: Option<PathBuf>,
    pub resume: bool,
    /// Stop (resumably) after this many users have been processed.
    pub stop_after_users: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub state: TrainingState,
    /// The whole log, including records written before a resume.
    pub records: Vec<StepRecord>,
    pub completed: bool,
}

impl TrainingOutcome {
    /// Mean `loss_before` per epoch.
    pub fn mean_loss_by_epoch(&self) -> Vec<f64> {
        let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for r in &self.records {
            let e = sums.entry(r.epoch).or_default();
            e.0 += r.loss_before;
            e.1 += 1;
        }
        sums.values().map(|(s, n)| s / *n as f64).collect()
    }
}

/// Next user to process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: u32,
    pub user_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub cursor: Cursor,
    /// Log lines covered by this checkpoint; later lines are discarded on
    /// resume.
    pub log_records: usize,
    pub profiles: BTreeMap<UserId, UserProfile>,
    pub descriptions: BTreeMap<UserId, BTreeMap<ItemId, ItemDescription>>,
    pub recent_reports: BTreeMap<UserId, Vec<MismatchReport>>,
}

impl Checkpoint {
    fn new(hash: &str, cursor: Cursor, log_records: usize, state: &TrainingState) -> Self {
        Self {
            config_hash: hash.to_string(),
            cursor,
            log_records,
            profiles: state.users.iter().map(|(u, s)| (u.clone(), s.profile.clone())).collect(),
            descriptions: state
                .users
                .iter()
                .filter(|(_, s)| !s.descriptions.is_empty())
                .map(|(u, s)| (u.clone(), s.descriptions.clone()))
                .collect(),
            recent_reports: state
                .users
                .iter()
                .filter(|(_, s)| !s.recent_reports.is_empty())
                .map(|(u, s)| (u.clone(), s.recent_reports.clone()))
                .collect(),
        }
    }

    pub fn state(&self) -> TrainingState {
        let users = self
            .profiles
            .iter()
            .map(|(u, p)| {
                (
                    u.clone(),
                    UserState {
                        profile: p.clone(),
                        descriptions: self.descriptions.get(u).cloned().unwrap_or_default(),
                        recent_reports: self.recent_reports.get(u).cloned().unwrap_or_default(),
                    },
                )
            })
            .collect();
        TrainingState { users }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &canonical_json(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// The experiment log, in memory and optionally mirrored to `log.jsonl`.
struct RunLog {
    path: Option<PathBuf>,
    writer: Option<BufWriter<File>>,
    records: Vec<StepRecord>,
}

impl RunLog {
    fn new(dir: Option<&Path>) -> Self {
        Self { path: dir.map(|d| d.join(LOG_FILE)), writer: None, records: Vec::new() }
    }

    fn start(&mut self) -> Result<()> {
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            self.writer = Some(BufWriter::new(file));
        }
        Ok(())
    }

    /// Keeps the first `keep` records of an existing log and appends after
    /// them.
    fn resume(&mut self, keep: usize) -> Result<()> {
        let path = self.path.clone().expect("resume requires a run directory");
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut kept = Vec::with_capacity(keep);
        let mut lines = Vec::with_capacity(keep);
        for line in BufReader::new(file).lines().take(keep) {
            let line = line.map_err(|e| Error::io(&path, e))?;
            kept.push(serde_json::from_str::<StepRecord>(&line)?);
            lines.push(line);
        }
        if kept.len() < keep {
            return Err(Error::Checkpoint(format!("log has {} records, checkpoint expects {keep}", kept.len())));
        }
        let mut writer = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        // Kept lines are copied verbatim so the log stays byte-identical.
        for line in &lines {
            writeln!(writer, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        writer.flush().map_err(|e| Error::io(&path, e))?;
        drop(writer);
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        self.writer = Some(BufWriter::new(file));
        self.records = kept;
        Ok(())
    }

    fn append(&mut self, record: StepRecord) -> Result<()> {
        if let (Some(writer), Some(path)) = (self.writer.as_mut(), self.path.as_ref()) {
            writeln!(writer, "{}", canonical_json(&record)?).map_err(|e| Error::io(path, e))?;
            // Flushed per record so the checkpoint count never exceeds the file.
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
        self.records.push(record);
        Ok(())
    }

    fn len(&self) -> usize {
        self.records.len()
    }

    fn into_records(self) -> Vec<StepRecord> {
        self.records
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::domain::Item;
    use crate::template::{ASSESS, REFLECT_ITEM, REFLECT_USER};

    fn iid(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn uid(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    /// `users` users with `len` interactions each over a 30-item catalog.
    fn data(users: usize, len: usize) -> TrainingData {
        let catalog: Catalog = (0..30)
            .map(|i| {
                Item::new(iid(&format!("i{i:02}")), format!("Title {i}"), vec!["x".into()], BTreeMap::new()).unwrap()
            })
            .collect();
        let rows: Vec<Interaction> = (0..users)
            .flat_map(|u| {
                (0..len).map(move |t| Interaction {
                    user: uid(&format!("u{u}")),
                    item: iid(&format!("i{:02}", (u + t) % 30)),
                    rating: None,
                    timestamp: t as i64,
                })
            })
            .collect();
        TrainingData::from_dataset(&Dataset { interactions: rows, catalog }).0
    }

    /// Scores every assessed item 1.0 and rewrites with fixed texts.
    struct AllOnes;

    impl Backend for AllOnes {
        fn model_id(&self) -> &str {
            "all-ones"
        }

        fn complete(
            &self,
            request: &crate::backend::AgentRequest,
        ) -> Result<crate::backend::AgentReply, crate::backend::BackendError> {
            let raw_text = match request.template_name.as_str() {
                ASSESS => {
                    let scores: Vec<String> = request
                        .rendered_prompt
                        .split(" id=\"")
                        .skip(1)
                        .map(|rest| format!("\"{}\":1", &rest[..rest.find('"').unwrap()]))
                        .collect();
                    format!("{{\"scores\":{{{}}},\"compatibility\":1}}", scores.join(","))
                }
                REFLECT_USER => "new profile".into(),
                REFLECT_ITEM => "new description".into(),
                other => panic!("unexpected template {other}"),
            };
            Ok(crate::backend::AgentReply { raw_text, source: crate::backend::ReplySource::Scripted, latency_ms: 0.0 })
        }
    }

    fn all_ones() -> AllOnes {
        AllOnes
    }

    #[test]
    fn training_set_shape_and_determinism() {
        let d = data(1, 8);
        let split = &d.splits[&uid("u0")];
        let set = build_training_set(&uid("u0"), &split.train, &split.all_items(), &d.catalog, 4, 2, 2, 9).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.labels().values().filter(|l| l.is_positive()).count(), 2);
        assert_eq!(set.label(&split.train[4].item), Some(Label::Positive));
        assert_eq!(set.label(&split.train[3].item), Some(Label::Positive));
        let again = build_training_set(&uid("u0"), &split.train, &split.all_items(), &d.catalog, 4, 2, 2, 9).unwrap();
        assert_eq!(set, again);

        // Negatives never intersect the full interaction set.
        for seed in 0..40 {
            let s =
                build_training_set(&uid("u0"), &split.train, &split.all_items(), &d.catalog, 4, 2, 5, seed).unwrap();
            for (item, label) in s.labels() {
                if !label.is_positive() {
                    assert!(!split.all_items().contains(item));
                }
            }
        }
        assert!(build_training_set(&uid("u0"), &split.train, &split.all_items(), &d.catalog, 0, 2, 2, 9).is_err());
    }

    #[test]
    fn positions_skip_target_and_short_prefix() {
        let d = data(1, 8);
        let split = &d.splits[&uid("u0")];
        assert_eq!(split.train.len(), 7);
        assert_eq!(training_positions(split, 2), 2..7);
    }

    #[test]
    fn zero_users_gives_empty_log() {
        let d = data(0, 0);
        let out = run_training(
            &d,
            ExperimentConfig::default(),
            &ScriptedBackend::new(vec![]),
            &TemplateSet::default(),
            &RunOptions::default(),
        )
        .unwrap();
        assert!(out.records.is_empty());
        assert!(out.state.users.is_empty());
        assert!(out.completed);
    }

    #[test]
    fn every_position_is_visited_once_per_epoch() {
        let d = data(2, 6);
        let config = ExperimentConfig {
            training: LoopConfig { ablation: Ablation::NoReflection, ..Default::default() },
            ..Default::default()
        };
        let out = run_training(&d, config, &all_ones(), &TemplateSet::default(), &RunOptions::default()).unwrap();
        let mut counts: BTreeMap<(UserId, usize), u32> = BTreeMap::new();
        for r in &out.records {
            *counts.entry((r.user.clone(), r.position)).or_default() += 1;
        }
        assert_eq!(counts.len(), 2 * 3);
        assert!(counts.values().all(|c| *c == 2));
    }

    #[test]
    fn no_reflection_never_rewrites() {
        let d = data(2, 6);
        let config = ExperimentConfig {
            training: LoopConfig { ablation: Ablation::NoReflection, ..Default::default() },
            ..Default::default()
        };
        let out = run_training(&d, config, &all_ones(), &TemplateSet::default(), &RunOptions::default()).unwrap();
        assert!(out.records.iter().all(|r| r.triggered && r.reflections == 0));
        assert_eq!(out.state, TrainingState::initial(&d, &InitConfig::default()).unwrap());
    }

    #[test]
    fn full_loop_reflects_at_most_the_bound() {
        let d = data(1, 6);
        let out =
            run_training(&d, ExperimentConfig::default(), &all_ones(), &TemplateSet::default(), &RunOptions::default())
                .unwrap();
        assert!(out.records.iter().all(|r| r.reflections <= 1));
        let state = &out.state.users[&uid("u0")];
        assert_eq!(state.profile.profile_text, "new profile");
        assert!(!state.descriptions.is_empty());
        assert!(state.recent_reports.len() <= REPORT_CONTEXT);
    }

    #[test]
    fn no_setwise_uses_single_item_windows() {
        let d = data(1, 5);
        let config = ExperimentConfig {
            training: LoopConfig { ablation: Ablation::NoSetwise, epochs: 1, ..Default::default() },
            ..Default::default()
        };
        let out = run_training(&d, config, &all_ones(), &TemplateSet::default(), &RunOptions::default()).unwrap();
        assert!(!out.records.is_empty());
        for r in &out.records {
            assert_eq!(r.assessments.len(), r.set.len());
            assert!(r.assessments.iter().all(|a| a.items.len() == 1));
        }
    }

    #[test]
    fn resume_rejects_missing_checkpoint_and_changed_config() {
        let dir = tempfile::tempdir().unwrap();
        let d = data(2, 5);
        let options = RunOptions { run_dir: Some(dir.path().to_path_buf()), resume: true, stop_after_users: None };
        let err =
            run_training(&d, ExperimentConfig::default(), &all_ones(), &TemplateSet::default(), &options).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));

        let first = RunOptions { resume: false, stop_after_users: Some(1), ..options.clone() };
        run_training(&d, ExperimentConfig::default(), &all_ones(), &TemplateSet::default(), &first).unwrap();
        let mut changed = ExperimentConfig::default();
        changed.training.epochs = 3;
        let err = run_training(&d, changed, &all_ones(), &TemplateSet::default(), &options).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
