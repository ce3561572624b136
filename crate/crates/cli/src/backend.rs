//! Backend construction from flags. Everything is validated before a run
//! directory is touched.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use srlf_core::backend::{Backend, CacheMode, CachedBackend, LiveBackend, LiveConfig, OracleBackend, ScriptedBackend};
use srlf_core::data::synthetic::{load_oracle, ORACLE_FILE};

use crate::exit::{data, usage, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendKind {
    Live,
    Oracle,
    Scripted,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    pub backend: BackendKind,
    /// Model name sent to the live endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// Oracle weights; defaults to `oracle.json` in the data directory.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// JSON-lines reply rules for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Response cache file, created if missing.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Serve only from the cache; a miss is an error.
    #[arg(long, requires = "cache")]
    pub replay: bool,
}

pub fn build(args: &BackendArgs, data_dir: &Path) -> CliResult<Box<dyn Backend>> {
    let inner: Box<dyn Backend> = match args.backend {
        BackendKind::Live => {
            let model = args.model.clone().ok_or_else(|| usage(anyhow!("--backend live needs --model")))?;
            let config = LiveConfig::from_env(model).map_err(|e| data(e.into()))?;
            Box::new(LiveBackend::new(config).map_err(|e| data(e.into()))?)
        }
        BackendKind::Oracle => {
            let config = match &args.oracle {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("cannot read oracle weights {}", path.display()))
                        .map_err(usage)?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("invalid oracle weights {}", path.display()))
                        .map_err(data)?
                }
                None => load_oracle(data_dir).map_err(|e| {
                    usage(anyhow!(e).context(format!("no {ORACLE_FILE} in {}; pass --oracle", data_dir.display())))
                })?,
            };
            Box::new(OracleBackend::new(config).map_err(|e| data(e.into()))?)
        }
        BackendKind::Scripted => {
            let path = args.script.as_ref().ok_or_else(|| usage(anyhow!("--backend scripted needs --script")))?;
            Box::new(ScriptedBackend::from_jsonl(path).map_err(|e| data(e.into()))?)
        }
    };
    match &args.cache {
        None => Ok(inner),
        Some(path) => {
            let mode = if args.replay { CacheMode::ReplayOnly } else { CacheMode::ReadWrite };
            Ok(Box::new(CachedBackend::open(inner, path, mode).map_err(|e| data(e.into()))?))
        }
    }
}
