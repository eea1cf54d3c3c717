//! Append-only decision log and replay into a [`BodyState`].

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::adjacency::CandidateId;
use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::workflow::BodyState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Merge,
    NoMerge,
    Indeterminate,
}

impl FromStr for Verdict {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merge" => Ok(Verdict::Merge),
            "no_merge" => Ok(Verdict::NoMerge),
            "indeterminate" => Ok(Verdict::Indeterminate),
            other => Err(Error::InvalidArgument(format!("unknown verdict {other:?}"))),
        }
    }
}

/// Who produced a decision: `human:<reviewer>` or `auto:<model fingerprint>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum DecisionSource {
    Human(String),
    Auto(String),
}

impl fmt::Display for DecisionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionSource::Human(r) => write!(f, "human:{r}"),
            DecisionSource::Auto(m) => write!(f, "auto:{m}"),
        }
    }
}

impl FromStr for DecisionSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("human", r)) if !r.is_empty() => Ok(DecisionSource::Human(r.to_string())),
            Some(("auto", m)) if !m.is_empty() => Ok(DecisionSource::Auto(m.to_string())),
            _ => Err(Error::InvalidArgument(format!("malformed decision source {s:?}"))),
        }
    }
}

impl Serialize for DecisionSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DecisionSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub candidate_id: CandidateId,
    pub verdict: Verdict,
    pub source: DecisionSource,
    pub timestamp: DateTime<Utc>,
    pub sequence: u64,
}

/// Source of decision timestamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Deterministic clock for batch runs: `base + n` seconds on the n-th call.
pub struct LogicalClock {
    base: DateTime<Utc>,
    ticks: AtomicU64,
}

impl LogicalClock {
    pub fn new(base: DateTime<Utc>) -> Self {
        LogicalClock {
            base,
            ticks: AtomicU64::new(0),
        }
    }

    pub fn from_unix(secs: i64) -> Self {
        Self::new(Utc.timestamp_opt(secs, 0).single().expect("valid unix time"))
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> DateTime<Utc> {
        let n = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.base + chrono::Duration::seconds(n as i64)
    }
}

/// Decisions in sequence order; optionally mirrored to a JSONL file that is
/// only ever appended to.
#[derive(Debug, Default)]
pub struct DecisionLog {
    entries: Vec<Decision>,
    path: Option<PathBuf>,
}

impl DecisionLog {
    pub fn in_memory() -> Self {
        DecisionLog::default()
    }

    /// Opens (or creates) a file-backed log, validating existing entries.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = if path.exists() {
            read_jsonl(path)?
        } else {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            File::create(path).map_err(|e| Error::io(path, e))?;
            Vec::new()
        };
        validate_sequence(&entries)?;
        Ok(DecisionLog {
            entries,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn entries(&self) -> &[Decision] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_sequence(&self) -> u64 {
        self.entries.last().map_or(1, |d| d.sequence + 1)
    }

    pub fn append(
        &mut self,
        candidate_id: CandidateId,
        verdict: Verdict,
        source: DecisionSource,
        timestamp: DateTime<Utc>,
    ) -> Result<&Decision> {
        let d = Decision {
            candidate_id,
            verdict,
            source,
            timestamp,
            sequence: self.next_sequence(),
        };
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&d).map_err(|e| Error::json(path, e))?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        self.entries.push(d);
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Latest decision recorded for a candidate.
    pub fn latest_for(&self, id: CandidateId) -> Option<&Decision> {
        self.entries.iter().rev().find(|d| d.candidate_id == id)
    }
}

/// Sequences must start at 1 and increase by exactly one.
pub fn validate_sequence(log: &[Decision]) -> Result<()> {
    for (i, d) in log.iter().enumerate() {
        let expected = i as u64 + 1;
        if d.sequence != expected {
            return Err(Error::Log(format!(
                "sequence gap: entry {} has sequence {}, expected {}",
                i, d.sequence, expected
            )));
        }
    }
    Ok(())
}

/// Applies every merge verdict in `log` to `initial`. `pairs` resolves
/// candidate ids to their fragment pair.
pub fn replay(
    log: &[Decision],
    pairs: &HashMap<CandidateId, (u64, u64)>,
    initial: BodyState,
) -> Result<BodyState> {
    validate_sequence(log)?;
    let mut state = initial;
    for d in log {
        let &(a, b) = pairs
            .get(&d.candidate_id)
            .ok_or_else(|| Error::UnknownCandidate(d.candidate_id.to_string()))?;
        if d.verdict == Verdict::Merge {
            state.union(a, b)?;
        }
    }
    Ok(state)
}
