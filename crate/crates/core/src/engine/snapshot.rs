use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::canonical::to_canonical_string;
use super::config::EngineConfig;
use super::machine::Tracked;
use crate::error::{Error, Result};
use crate::memory::{LossNormalizer, SampleId};
use crate::sampler::{ReplayBuffer, ReplayDecision};
use crate::scheduler::ScheduleState;

pub const FORMAT_VERSION: u32 = 1;

/// Position of the engine's ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string; it can exceed 64 bits.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::CorruptSnapshot(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Complete engine state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Snapshot {
    pub format_version: u32,
    pub config: EngineConfig,
    pub step: u64,
    pub epoch: u64,
    pub samples: Vec<Tracked>,
    pub datasets: Vec<String>,
    pub current_dataset: Option<u32>,
    pub eligible: Vec<SampleId>,
    pub normalizer: LossNormalizer,
    pub schedule: ScheduleState,
    pub buffer: ReplayBuffer,
    pub rng: RngState,
    pub last_decision: Option<ReplayDecision>,
    pub decisions_made: u64,
}

impl Snapshot {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_string(self)
    }

    /// Parses a snapshot, checking the format version before the body.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptSnapshot("missing format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch { found: found.min(u32::MAX as u64) as u32, expected: FORMAT_VERSION });
        }
        serde_json::from_value(value).map_err(|e| Error::CorruptSnapshot(e.to_string()))
    }

    /// Writes via a temporary file and rename so readers never see a partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let body = self.to_json()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &body).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(body.len())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
