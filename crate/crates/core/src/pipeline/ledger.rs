//! The run ledger: stage checkpoints with the sha256 of every artifact.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_json, sha256_hex, write_json};

pub const LEDGER_FILE: &str = "ledger.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dataset,
    Index,
    Retrieve,
    Generate,
    Attribute,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Dataset,
        Stage::Index,
        Stage::Retrieve,
        Stage::Generate,
        Stage::Attribute,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Dataset => "dataset",
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::Generate => "generate",
            Stage::Attribute => "attribute",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCheckpoint {
    /// Artifact path relative to the run directory, mapped to its sha256.
    pub artifacts: BTreeMap<String, String>,
    pub completed_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub config_hash: String,
    pub stages: BTreeMap<Stage, StageCheckpoint>,
    /// "ok", or the first stage at which the query failed.
    #[serde(default)]
    pub query_status: BTreeMap<String, String>,
}

impl RunLedger {
    /// Loads the ledger in `run_dir`, or starts a fresh one. A ledger written
    /// under a different configuration is refused.
    pub fn open(run_dir: &Path, run_id: &str, config_hash: &str) -> Result<Self> {
        let path = run_dir.join(LEDGER_FILE);
        if !path.exists() {
            return Ok(RunLedger {
                run_id: run_id.to_string(),
                config_hash: config_hash.to_string(),
                stages: BTreeMap::new(),
                query_status: BTreeMap::new(),
            });
        }
        let ledger: RunLedger = read_json(&path)?;
        if ledger.config_hash != config_hash {
            return Err(Error::Config(format!(
                "run {} was started with a different configuration",
                ledger.run_id
            )));
        }
        Ok(ledger)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(LEDGER_FILE);
        if !path.exists() {
            return Err(Error::MissingLedger(path.display().to_string()));
        }
        read_json(&path)
    }

    /// True when `stage` is checkpointed and its artifacts are unchanged.
    pub fn is_complete(&self, stage: Stage, run_dir: &Path) -> Result<bool> {
        let Some(cp) = self.stages.get(&stage) else {
            return Ok(false);
        };
        for (rel, digest) in &cp.artifacts {
            let path = run_dir.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != *digest {
                return Err(Error::Corrupt(path));
            }
        }
        Ok(true)
    }

    /// Records `stage` as done with the given artifacts and persists the
    /// ledger.
    pub fn complete(&mut self, stage: Stage, run_dir: &Path, artifacts: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for path in artifacts {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let rel = path.strip_prefix(run_dir).unwrap_or(path);
            map.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(&bytes));
        }
        let completed_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.stages.insert(
            stage,
            StageCheckpoint {
                artifacts: map,
                completed_at,
            },
        );
        self.save(run_dir)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join(LEDGER_FILE), self)
    }

    pub fn completed_stages(&self) -> Vec<Stage> {
        self.stages.keys().copied().collect()
    }
}
