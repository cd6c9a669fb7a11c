//! Deterministic discrete-event transfer fabric.
//!
//! Transfers share capacity by an equal-split fluid model: every flowing
//! transfer gets
//! `min(egress(src)/n_src, ingress(dst)/n_dst, route_cap/n_route)`, further
//! limited by the route's per-transfer ceiling, where each `n` counts the
//! flowing transfers on that resource. A transfer that is queued, scanning,
//! stalled on a fault or paused for maintenance does not count. Rates are
//! recomputed at every event boundary and time advances in whole
//! milliseconds, rounding durations up.

mod config;
mod fabric;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{DatasetPath, FileEntry, Manifest};
use crate::model::{FailureKind, Route, SimTime, Site, TransferId, TransferStatus};

pub use config::{
    validate_windows, ConfigError, FabricConfig, FaultModel, Periodic, RouteCap, SiteSpec, Window, GIB,
};
pub use fabric::Fabric;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("unknown path {0}")]
    UnknownPath(String),
    #[error("{site} does not hold {path}")]
    SourceMissingData { site: Site, path: String },
    #[error("unknown transfer {0}")]
    UnknownTransfer(String),
    #[error("cannot submit {0}")]
    InvalidRoute(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

/// What the scheduler sees when it polls a transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStatusReport {
    pub uuid: TransferId,
    pub status: TransferStatus,
    pub directories: u64,
    pub files: u64,
    /// Includes retransmitted files.
    pub bytes_transferred: u64,
    pub faults: u64,
    /// Lifetime mean, B/s.
    pub rate: f64,
    pub paused_reason: Option<String>,
    pub failure: Option<FailureKind>,
    pub missing_metadata: bool,
    pub requested: SimTime,
    pub started: Option<SimTime>,
    pub completed: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Submit,
    ScanStart,
    ScanDone,
    ScanOom,
    BytesProgress,
    Fault,
    FileRetransmit,
    Pause,
    Resume,
    Succeed,
    Fail,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// Counters attached to an event. Which fields are set depends on the kind:
/// `BYTES_PROGRESS` carries `since`, `bytes` and `rate` for the constant-rate
/// segment ending at the event time; `SUCCEED` carries the payload `bytes`,
/// the destination `path`, `faults` and the lifetime `rate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventPayload {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub since: Option<SimTime>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entries: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub faults: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub time: SimTime,
    pub kind: EventKind,
    pub uuid: TransferId,
    pub route: Route,
    #[serde(default)]
    pub payload: EventPayload,
}

/// One JSON object per line.
pub fn write_event_log(events: &[EventLogEntry]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn read_event_log(text: &str) -> Result<Vec<EventLogEntry>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Files stored at one site, keyed by absolute path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdings {
    files: BTreeMap<String, (u64, u64)>,
}

impl Holdings {
    fn key(dataset: &DatasetPath, rel: &str) -> String {
        format!("{dataset}/{rel}")
    }

    /// Stores (or overwrites) one file of `dataset`.
    pub fn insert(&mut self, dataset: &DatasetPath, entry: &FileEntry) {
        self.files
            .insert(Self::key(dataset, &entry.rel_path), (entry.size, entry.checksum));
    }

    /// Overwrites the checksum of a stored file; returns false if absent.
    pub fn set_checksum(&mut self, dataset: &DatasetPath, rel: &str, checksum: u64) -> bool {
        match self.files.get_mut(&Self::key(dataset, rel)) {
            Some(v) => {
                v.1 = checksum;
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, dataset: &DatasetPath, rel: &str) -> bool {
        self.files.remove(&Self::key(dataset, rel)).is_some()
    }

    pub fn contains(&self, dataset: &DatasetPath, rel: &str) -> bool {
        self.files.contains_key(&Self::key(dataset, rel))
    }

    /// Everything stored under `dataset`, as a manifest rooted there.
    pub fn manifest_for(&self, dataset: &DatasetPath) -> Manifest {
        let prefix = format!("{dataset}/");
        let entries = self
            .files
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .map(|(k, &(size, checksum))| FileEntry {
                rel_path: k[prefix.len()..].to_string(),
                size,
                checksum,
            })
            .collect();
        Manifest::new(dataset.clone(), entries)
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn bytes(&self) -> u64 {
        self.files.values().map(|v| v.0).sum()
    }
}

/// The operations the scheduler needs from a transfer service.
pub trait TransferBackend {
    fn now(&self) -> SimTime;
    fn submit(&mut self, route: Route, path: &DatasetPath) -> Result<TransferId, BackendError>;
    fn poll(&mut self, id: &TransferId) -> Result<TransferStatusReport, BackendError>;
    fn endpoint_paused(&self, site: Site) -> bool;
}

/// Time source the control loop sleeps on.
pub trait Clock {
    fn now(&self) -> SimTime;
    /// Blocks (or simulates) until `t`.
    fn sleep_until(&mut self, t: SimTime) -> Result<(), BackendError>;
}
