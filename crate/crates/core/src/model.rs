//! Tracking-table domain model: sites, routes, transfer statuses and records,
//! and construction of the initial replication plan.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, DatasetPath};

/// Simulation time in integer milliseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    /// Seconds to milliseconds, rounding up.
    pub fn from_secs_f64(secs: f64) -> SimTime {
        assert!(secs >= 0.0 && secs.is_finite(), "bad duration {secs}");
        SimTime((secs * 1000.0 - 1e-6).ceil().max(0.0) as u64)
    }

    pub fn from_secs(secs: u64) -> SimTime {
        SimTime(secs * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}s", self.0 / 1000, self.0 % 1000)
    }
}

/// The three endpoints of a cascade: one source hub and two destinations.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Site {
    SourceHub,
    LcfA,
    LcfB,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::SourceHub, Site::LcfA, Site::LcfB];

    pub fn default_name(self) -> &'static str {
        match self {
            Site::SourceHub => "LLNL",
            Site::LcfA => "ALCF",
            Site::LcfB => "OLCF",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Site::SourceHub => "SOURCE_HUB",
            Site::LcfA => "LCF_A",
            Site::LcfB => "LCF_B",
        }
    }

    pub fn is_hub(self) -> bool {
        self == Site::SourceHub
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SOURCE_HUB" => Ok(Site::SourceHub),
            "LCF_A" => Ok(Site::LcfA),
            "LCF_B" => Ok(Site::LcfB),
            _ => Err(format!("unknown site {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Route {
    pub source: Site,
    pub destination: Site,
}

impl Route {
    pub fn new(source: Site, destination: Site) -> Result<Route, PlanError> {
        if source == destination {
            return Err(PlanError::SelfRoute(source));
        }
        Ok(Route {
            source,
            destination,
        })
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.source, self.destination)
    }
}

/// Row status in the tracking table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransferStatus {
    Null,
    Queued,
    Active,
    Succeeded,
    Failed,
    Paused,
    PermanentFailed,
    /// Replaced by rows for its subdirectories.
    Split,
}

impl TransferStatus {
    pub const ALL: [TransferStatus; 8] = [
        TransferStatus::Null,
        TransferStatus::Queued,
        TransferStatus::Active,
        TransferStatus::Succeeded,
        TransferStatus::Failed,
        TransferStatus::Paused,
        TransferStatus::PermanentFailed,
        TransferStatus::Split,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferStatus::Null => "NULL",
            TransferStatus::Queued => "QUEUED",
            TransferStatus::Active => "ACTIVE",
            TransferStatus::Succeeded => "SUCCEEDED",
            TransferStatus::Failed => "FAILED",
            TransferStatus::Paused => "PAUSED",
            TransferStatus::PermanentFailed => "PERMANENT_FAILED",
            TransferStatus::Split => "SPLIT",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TransferStatus::Succeeded | TransferStatus::PermanentFailed | TransferStatus::Split
        )
    }

    /// Submitted to a backend and not finished.
    pub fn is_in_flight(self) -> bool {
        matches!(
            self,
            TransferStatus::Queued | TransferStatus::Active | TransferStatus::Paused
        )
    }

    /// Waiting for a (re)submission.
    pub fn is_pending(self) -> bool {
        matches!(self, TransferStatus::Null | TransferStatus::Failed)
    }

    fn successors(self) -> &'static [TransferStatus] {
        use TransferStatus::*;
        match self {
            Null => &[Queued, Split],
            Queued => &[Active],
            Active => &[Succeeded, Failed, Paused],
            Paused => &[Active],
            Failed => &[Queued, PermanentFailed, Split],
            Succeeded | PermanentFailed | Split => &[],
        }
    }

    /// The single transition rule. A new row must start at `NULL`; a row may
    /// be rewritten with its current status.
    pub fn can_transition(from: Option<TransferStatus>, to: TransferStatus) -> bool {
        match from {
            None => to == TransferStatus::Null,
            Some(f) if f == to => true,
            Some(f) => f.successors().contains(&to),
        }
    }

    /// Shortest chain of legal steps from `self` to `to`, excluding `self`.
    pub fn path_to(self, to: TransferStatus) -> Option<Vec<TransferStatus>> {
        if self == to {
            return Some(Vec::new());
        }
        let mut prev: Vec<Option<TransferStatus>> = vec![None; Self::ALL.len()];
        let mut seen = HashSet::from([self]);
        let mut q = VecDeque::from([self]);
        while let Some(s) = q.pop_front() {
            for &n in s.successors() {
                if seen.insert(n) {
                    prev[n as usize] = Some(s);
                    if n == to {
                        let mut chain = vec![n];
                        let mut cur = s;
                        while cur != self {
                            chain.push(cur);
                            cur = prev[cur as usize].expect("linked");
                        }
                        chain.reverse();
                        return Some(chain);
                    }
                    q.push_back(n);
                }
            }
        }
        None
    }
}

impl fmt::Display for TransferStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransferStatus {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransferStatus::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown status {s:?}"))
    }
}

/// Why the latest attempt of a row failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureKind {
    /// The source scan ran out of memory.
    ScanOom,
    /// Files could not be read at the source.
    Unreadable,
    Other,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::ScanOom => "SCAN_OOM",
            FailureKind::Unreadable => "UNREADABLE",
            FailureKind::Other => "OTHER",
        }
    }
}

impl FromStr for FailureKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SCAN_OOM" => Ok(FailureKind::ScanOom),
            "UNREADABLE" => Ok(FailureKind::Unreadable),
            "OTHER" => Ok(FailureKind::Other),
            _ => Err(format!("unknown failure kind {s:?}")),
        }
    }
}

/// Backend transfer identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransferId(pub String);

impl fmt::Display for TransferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One row of the tracking table, keyed by `(dataset, destination)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub dataset: DatasetPath,
    pub source: Site,
    pub destination: Site,
    pub uuid: Option<TransferId>,
    pub requested: Option<SimTime>,
    pub completed: Option<SimTime>,
    pub status: TransferStatus,
    pub directories: u64,
    pub files: u64,
    /// Lifetime mean rate of the latest attempt, B/s.
    pub rate: f64,
    pub faults: u64,
    pub bytes_transferred: u64,
    /// Failed attempts so far.
    pub attempts: u32,
    pub failure: Option<FailureKind>,
    /// The backend recorded no metadata (faults, rate) for this transfer.
    pub missing_metadata: bool,
}

impl TransferRecord {
    /// A fresh `NULL` row sourced from the hub.
    pub fn pending(dataset: DatasetPath, destination: Site) -> TransferRecord {
        TransferRecord {
            dataset,
            source: Site::SourceHub,
            destination,
            uuid: None,
            requested: None,
            completed: None,
            status: TransferStatus::Null,
            directories: 0,
            files: 0,
            rate: 0.0,
            faults: 0,
            bytes_transferred: 0,
            attempts: 0,
            failure: None,
            missing_metadata: false,
        }
    }

    pub fn route(&self) -> Route {
        Route {
            source: self.source,
            destination: self.destination,
        }
    }

    pub fn key(&self) -> (&DatasetPath, Site) {
        (&self.dataset, self.destination)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("catalog has no paths")]
    EmptyCatalog,
    #[error("invalid destinations: {0}")]
    InvalidDestinations(String),
    #[error("route from {0} to itself")]
    SelfRoute(Site),
}

/// Initial plan: one `NULL` hub-sourced row per (path, destination), in
/// catalog order then destination order.
pub fn build_plan(
    catalog: &Catalog,
    destinations: &[Site],
) -> Result<Vec<TransferRecord>, PlanError> {
    validate_destinations(destinations)?;
    if catalog.is_empty() {
        return Err(PlanError::EmptyCatalog);
    }
    Ok(catalog
        .paths()
        .flat_map(|p| {
            destinations
                .iter()
                .map(move |&d| TransferRecord::pending(p.clone(), d))
        })
        .collect())
}

pub fn validate_destinations(destinations: &[Site]) -> Result<(), PlanError> {
    if destinations.is_empty() {
        return Err(PlanError::InvalidDestinations("none given".into()));
    }
    if destinations.contains(&Site::SourceHub) {
        return Err(PlanError::InvalidDestinations(
            "the source hub cannot be a destination".into(),
        ));
    }
    let distinct: HashSet<_> = destinations.iter().collect();
    if distinct.len() != destinations.len() {
        return Err(PlanError::InvalidDestinations("duplicates".into()));
    }
    Ok(())
}
