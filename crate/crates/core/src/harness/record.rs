//! Run records and the top-level `run` entry point.
//!
//! `records.jsonl` holds one line per seed with only deterministic fields;
//! wall-clock time goes to `timings.jsonl` so reruns compare byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ExperimentKind};
use crate::harness::experiments::{run_seed, SeedOutcome};

pub const CONFIG_FILE: &str = "config.toml";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: ExperimentKind,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Stage CKA of the plain run (task-1 model against task-2 model).
    pub stage_cka: Vec<(String, f64)>,
    #[serde(flatten)]
    pub outcome: SeedOutcome,
    /// The resolved configuration, verbatim.
    pub config: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seed: u64,
    pub seconds: f64,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::State(format!("record serialization failed: {e}"))
}

impl RunRecord {
    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(json_err)
    }
}

fn lines<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        out.extend(serde_json::to_vec(it).map_err(json_err)?);
        out.push(b'\n');
    }
    Ok(out)
}

/// Reads every record of a run directory (or a `records.jsonl` path).
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = if path.is_dir() { path.join(RECORDS_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                offset: i as u64,
                reason: format!("record line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Runs every seed of `cfg`. A failing seed is recorded and the others still run.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let root: PathBuf = cfg.output_dir.clone();
    let toml = cfg.to_toml()?;
    let hash = cfg.hash()?;
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write_atomic(&root.join(CONFIG_FILE), toml.as_bytes())?;
    let mut records = Vec::with_capacity(cfg.seeds.len());
    let mut timings = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let (status, error, outcome) = match run_seed(cfg, seed, &root) {
            Ok(o) => (RunStatus::Ok, None, o),
            Err(e) => (RunStatus::Failed, Some(e.to_string()), SeedOutcome::default()),
        };
        records.push(RunRecord {
            kind: cfg.kind,
            config_hash: hash.clone(),
            seed,
            status,
            error,
            stage_cka: outcome.report.as_ref().map(|r| r.stage_cka.clone()).unwrap_or_default(),
            outcome,
            config: toml.clone(),
        });
        timings.push(Timing {
            seed,
            seconds: t0.elapsed().as_secs_f64(),
        });
        write_atomic(&root.join(RECORDS_FILE), &lines(&records)?)?;
        write_atomic(&root.join(TIMINGS_FILE), &lines(&timings)?)?;
    }
    Ok(records)
}
