use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryParams;
use crate::sampler::{BufferParams, SamplerParams};
use crate::scheduler::SchedulerParams;

/// Engine-level settings (the `[engine]` section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    /// Mixed-batch size that `lambda` is a fraction of.
    pub batch_size: usize,
    pub seed: u64,
    pub snapshot_path: Option<PathBuf>,
    /// Only accept `mark_replayed` ids from the last decision.
    pub strict_mark: bool,
    /// Skip the EMA update for losses reported with `replay: true`.
    pub exclude_replay_losses: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self { batch_size: 256, seed: 0, snapshot_path: None, strict_mark: false, exclude_replay_losses: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub memory: MemoryParams,
    pub scheduler: SchedulerParams,
    pub sampler: SamplerParams,
    pub buffer: BufferParams,
    pub engine: EngineSettings,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.memory.validate()?;
        self.scheduler.validate()?;
        self.sampler.validate()?;
        self.buffer.validate()?;
        if self.engine.batch_size == 0 {
            return Err(Error::range("engine.batch_size", "must be >= 1"));
        }
        Ok(())
    }

    /// Gap-aware time coefficient, defaulting to the consolidation `rho`.
    pub fn rho_gap(&self) -> f64 {
        self.sampler.rho_gap.unwrap_or(self.memory.rho)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: EngineConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            if msg.contains("unknown field") {
                Error::UnknownKey(msg)
            } else {
                Error::Malformed(e.to_string())
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
