//! State checkpoints on disk.
//!
//! A snapshot is a UTF-8 JSON object with keys `cursor`, `digest`,
//! `format_version` and `state`. All object keys are sorted and decimals are
//! strings, so equal states always produce byte-identical files. The digest
//! is recomputed on load and must match.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::state_digest;
use crate::event::OrderingKey;
use crate::model::GlobalState;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed snapshot: {0}")]
    Parse(String),
    #[error("snapshot format version {found} is not supported (expected {supported})")]
    Version { found: u64, supported: u64 },
    #[error("snapshot digest mismatch: file says {stored}, state hashes to {computed}")]
    DigestMismatch { stored: String, computed: String },
    #[error("snapshot cursor {header:?} disagrees with state cursor {state:?}")]
    CursorMismatch { header: Option<OrderingKey>, state: Option<OrderingKey> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u64,
    pub cursor: Option<OrderingKey>,
    pub digest: String,
    pub state: GlobalState,
}

/// Header fields of a written snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SnapshotMeta {
    pub format_version: u64,
    pub cursor: Option<OrderingKey>,
    pub digest: String,
}

impl Snapshot {
    pub fn of(state: &GlobalState) -> Self {
        Snapshot {
            format_version: FORMAT_VERSION,
            cursor: state.cursor,
            digest: state_digest(state),
            state: state.clone(),
        }
    }

    pub fn meta(&self) -> SnapshotMeta {
        SnapshotMeta { format_version: self.format_version, cursor: self.cursor, digest: self.digest.clone() }
    }

    /// Canonical file contents: sorted keys, two-space indent, trailing
    /// newline.
    pub fn to_canonical_string(&self) -> String {
        let value = serde_json::to_value(self).expect("snapshot serializes");
        let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
        out.push('\n');
        out
    }

    /// Parses and verifies a snapshot document.
    pub fn from_str_verified(text: &str) -> Result<Self, SnapshotError> {
        let value: Value = serde_json::from_str(text).map_err(|e| SnapshotError::Parse(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| SnapshotError::Parse("missing or invalid format_version".into()))?;
        if found != FORMAT_VERSION {
            return Err(SnapshotError::Version { found, supported: FORMAT_VERSION });
        }
        let snap: Snapshot = serde_json::from_value(value).map_err(|e| SnapshotError::Parse(e.to_string()))?;
        let computed = state_digest(&snap.state);
        if computed != snap.digest {
            return Err(SnapshotError::DigestMismatch { stored: snap.digest, computed });
        }
        if snap.cursor != snap.state.cursor {
            return Err(SnapshotError::CursorMismatch { header: snap.cursor, state: snap.state.cursor });
        }
        Ok(snap)
    }
}

pub fn save_snapshot(state: &GlobalState, path: impl AsRef<Path>) -> Result<SnapshotMeta, SnapshotError> {
    let snap = Snapshot::of(state);
    std::fs::write(path, snap.to_canonical_string())?;
    Ok(snap.meta())
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<GlobalState, SnapshotError> {
    read_snapshot(path).map(|s| s.state)
}

/// Loads a snapshot keeping its header.
pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot, SnapshotError> {
    let text = std::fs::read_to_string(path)?;
    Snapshot::from_str_verified(&text)
}
