//! Newline-delimited JSON request/response protocol.
//!
//! Request: `{"id": <any>, "op": "<name>", "args": {...}}`.
//! Response: `{"id": <echo>, "ok": true, "result": ...}` or
//! `{"id": <echo>, "ok": false, "error": {"code": "...", "msg": "..."}}`.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::canonical::to_canonical_string;
use super::machine::{Engine, MarkTarget};
use super::snapshot::Snapshot;
use crate::error::{Error, Result};
use crate::memory::SampleId;

pub const OPS: [&str; 9] = [
    "register_samples",
    "report_losses",
    "advance_epoch",
    "tick",
    "query_replay",
    "mark_replayed",
    "snapshot",
    "restore",
    "stats",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    #[serde(default)]
    pub id: Value,
    pub op: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterArgs {
    ids: Vec<u64>,
    #[serde(default = "default_dataset")]
    dataset: String,
}

fn default_dataset() -> String {
    "default".into()
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LossEntry {
    Pair(u64, f64),
    Object { id: u64, loss: f64 },
}

impl LossEntry {
    fn into_pair(self) -> (SampleId, f64) {
        match self {
            LossEntry::Pair(id, loss) | LossEntry::Object { id, loss } => (SampleId(id), loss),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportArgs {
    losses: Vec<LossEntry>,
    #[serde(default)]
    epoch_end: bool,
    #[serde(default)]
    replay: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TickArgs {
    #[serde(default = "one")]
    steps: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkArgs {
    ids: Option<Vec<u64>>,
    decision: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotArgs {
    path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RestoreArgs {
    path: Option<PathBuf>,
    snapshot: Option<Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsArgs {
    ids: Option<Vec<u64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoArgs {}

fn parse_args<T: DeserializeOwned>(args: Value) -> Result<T> {
    let args = if args.is_null() { json!({}) } else { args };
    serde_json::from_value(args).map_err(|e| Error::BadRequest(e.to_string()))
}

fn to_ids(ids: Vec<u64>) -> Vec<SampleId> {
    ids.into_iter().map(SampleId).collect()
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Malformed(e.to_string()))
}

impl Engine {
    /// Executes one request and returns its result payload.
    pub fn dispatch(&mut self, op: &str, args: Value) -> Result<Value> {
        match op {
            "register_samples" => {
                let a: RegisterArgs = parse_args(args)?;
                let n = self.register_samples(&to_ids(a.ids), &a.dataset)?;
                Ok(json!({ "registered": n, "tracked": self.len() }))
            }
            "report_losses" => {
                let a: ReportArgs = parse_args(args)?;
                let losses: Vec<(SampleId, f64)> = a.losses.into_iter().map(LossEntry::into_pair).collect();
                to_value(&self.report_losses(&losses, a.epoch_end, a.replay)?)
            }
            "advance_epoch" => {
                let _: NoArgs = parse_args(args)?;
                let epoch = self.advance_epoch()?;
                Ok(json!({ "epoch": epoch, "step": self.step() }))
            }
            "tick" => {
                let a: TickArgs = parse_args(args)?;
                let decisions = self.tick(a.steps)?;
                Ok(json!({ "step": self.step(), "decisions": to_value(&decisions)? }))
            }
            "query_replay" => {
                let _: NoArgs = parse_args(args)?;
                to_value(&self.query_replay())
            }
            "mark_replayed" => {
                let a: MarkArgs = parse_args(args)?;
                let target = match (a.ids, a.decision) {
                    (Some(ids), None) => MarkTarget::Ids(to_ids(ids)),
                    (None, Some(d)) => MarkTarget::Decision(d),
                    _ => return Err(Error::BadRequest("give exactly one of `ids` or `decision`".into())),
                };
                let outcomes = self.mark_replayed(target)?;
                Ok(json!({ "marked": outcomes.len(), "outcomes": to_value(&outcomes)? }))
            }
            "snapshot" => {
                let a: SnapshotArgs = parse_args(args)?;
                let snap = self.snapshot();
                match a.path.or_else(|| self.config().engine.snapshot_path.clone()) {
                    Some(path) => {
                        let bytes = snap.save(&path)?;
                        Ok(json!({ "path": path, "bytes": bytes, "step": snap.step }))
                    }
                    None => Ok(json!({ "snapshot": to_value(&snap)? })),
                }
            }
            "restore" => {
                let a: RestoreArgs = parse_args(args)?;
                let snap = match (a.path, a.snapshot) {
                    (Some(path), None) => Snapshot::load(path)?,
                    (None, Some(v)) => Snapshot::from_value(v)?,
                    _ => return Err(Error::BadRequest("give exactly one of `path` or `snapshot`".into())),
                };
                self.restore(snap)?;
                Ok(json!({ "step": self.step(), "tracked": self.len() }))
            }
            "stats" => {
                let a: StatsArgs = parse_args(args)?;
                let ids = a.ids.map(to_ids);
                to_value(&self.stats(ids.as_deref())?)
            }
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }

    /// Handles one protocol line and returns the canonical response line
    /// (without the trailing newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let (id, outcome) = match serde_json::from_str::<Value>(line) {
            Err(e) => (Value::Null, Err(Error::Malformed(e.to_string()))),
            Ok(raw) => {
                let id = raw.get("id").cloned().unwrap_or(Value::Null);
                match serde_json::from_value::<Request>(raw) {
                    Err(e) => (id, Err(Error::BadRequest(e.to_string()))),
                    Ok(req) => (req.id, self.dispatch(&req.op, req.args)),
                }
            }
        };
        debug_assert!(self.check_invariants().is_ok(), "{:?}", self.check_invariants());
        let response = match outcome {
            Ok(result) => json!({ "id": id, "ok": true, "result": result }),
            Err(e) => json!({ "id": id, "ok": false, "error": { "code": e.code(), "msg": e.to_string() } }),
        };
        to_canonical_string(&response).unwrap_or_else(|e| {
            format!(r#"{{"error":{{"code":"malformed","msg":{}}},"id":null,"ok":false}}"#, json!(e.to_string()))
        })
    }

    /// Serves requests until `input` is exhausted. Blank lines are skipped.
    pub fn serve<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let response = self.handle_line(&line);
            writeln!(output, "{response}")?;
            output.flush()?;
        }
        Ok(())
    }
}
