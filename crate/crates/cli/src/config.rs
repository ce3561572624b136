//! Experiment configuration: shipped defaults, then the TOML file, then flags.

use std::path::Path;

use anyhow::Context;
use clap::Args;
use srlf_core::domain::ValidationConfig;
use srlf_core::training::{Ablation, ExperimentConfig};

use crate::exit::{usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationArg {
    Full,
    NoSetwise,
    NoReflection,
}

impl From<AblationArg> for Ablation {
    fn from(value: AblationArg) -> Self {
        match value {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoSetwise => Ablation::NoSetwise,
            AblationArg::NoReflection => Ablation::NoReflection,
        }
    }
}

/// Flags that override individual config fields.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with `[loop]`, `[validation]` and `[init]` tables.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub positives: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub max_reflections: Option<u32>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    /// Mismatch threshold τ.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Window size k.
    #[arg(long)]
    pub window: Option<usize>,
}

pub fn read_file(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(usage)?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display())).map_err(usage)
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => read_file(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut config);
        config.check().map_err(|e| usage(e.into()))?;
        Ok(config)
    }

    pub fn apply(&self, config: &mut ExperimentConfig) {
        let t = &mut config.training;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.positives {
            t.positives_per_set = v;
        }
        if let Some(v) = self.negatives {
            t.negatives_per_set = v;
        }
        if let Some(v) = self.max_reflections {
            t.max_reflections_per_set = v;
        }
        if let Some(v) = self.shuffle_seed {
            t.shuffle_seed = v;
        }
        if let Some(v) = self.ablation {
            t.ablation = v.into();
        }
        let v: &mut ValidationConfig = &mut config.validation;
        if let Some(x) = self.threshold {
            v.threshold = x;
        }
        if let Some(x) = self.window {
            v.window_size = x;
        }
    }
}
