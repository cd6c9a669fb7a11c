//! The replication control loop.
//!
//! Each [`step`] runs six phases in a fixed order:
//!
//! 1. start hub transfers to the primary destination while it has free slots;
//! 2. poll every in-flight row and record status changes, retrying or
//!    splitting failures;
//! 3. start hub transfers to the secondary destination when the primary is
//!    paused;
//! 4. and 5. cascade datasets already held at one destination to the other;
//! 6. report termination once no row is waiting or in flight.
//!
//! A dataset leaves the hub at most once when cascading is on: a pending row
//! whose dataset another destination already holds is only ever served by
//! that destination.

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, DatasetPath};
use crate::model::{
    validate_destinations, FailureKind, Route, SimTime, Site, TransferId, TransferRecord,
    TransferStatus,
};
use crate::simnet::{BackendError, Clock, TransferBackend, TransferStatusReport};
use crate::store::{StoreError, Table};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Backend(BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("backend reported {to} for {dataset} at {destination}, which is {from} in the table")]
    IllegalReport {
        dataset: String,
        destination: Site,
        from: TransferStatus,
        to: TransferStatus,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<BackendError> for SchedulerError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Unavailable(m) => SchedulerError::BackendUnavailable(m),
            other => SchedulerError::Backend(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerPolicy {
    /// Transfers in flight per route, counting queued and paused ones.
    pub per_route_active_limit: usize,
    /// Failed attempts allowed before a row becomes `PERMANENT_FAILED`.
    pub retry_limit: u32,
    pub split_on_scan_oom: bool,
    /// Seconds between steps.
    pub poll_interval: f64,
    pub cascade_enabled: bool,
    /// Primary destination first.
    pub destinations: Vec<Site>,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy {
            per_route_active_limit: 2,
            retry_limit: 5,
            split_on_scan_oom: true,
            poll_interval: 30.0,
            cascade_enabled: true,
            destinations: vec![Site::LcfA, Site::LcfB],
        }
    }
}

impl SchedulerPolicy {
    pub fn from_toml(text: &str) -> Result<Self, SchedulerError> {
        let p: SchedulerPolicy =
            toml::from_str(text).map_err(|e| SchedulerError::InvalidPolicy(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.per_route_active_limit == 0 {
            return Err(SchedulerError::InvalidPolicy(
                "per_route_active_limit must be >= 1".into(),
            ));
        }
        if !(self.poll_interval.is_finite() && self.poll_interval >= 0.001) {
            return Err(SchedulerError::InvalidPolicy(format!(
                "poll_interval {} must be at least one millisecond",
                self.poll_interval
            )));
        }
        validate_destinations(&self.destinations)
            .map_err(|e| SchedulerError::InvalidPolicy(e.to_string()))
    }

    pub fn poll(&self) -> SimTime {
        SimTime::from_secs_f64(self.poll_interval).max(SimTime(1))
    }

    fn primary(&self) -> Site {
        self.destinations[0]
    }

    fn secondary(&self) -> Option<Site> {
        self.destinations.get(1).copied()
    }
}

/// What a step did, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Submit {
        route: Route,
        path: DatasetPath,
        uuid: TransferId,
    },
    Update {
        record: TransferRecord,
    },
    /// `children` is empty when [`handle_failed`] proposes the split.
    Split {
        path: DatasetPath,
        children: Vec<DatasetPath>,
    },
    Alert {
        record: TransferRecord,
        message: String,
    },
    Terminate,
}

/// One line of the action log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub time: SimTime,
    #[serde(flatten)]
    pub action: Action,
}

pub fn write_action_line(time: SimTime, action: &Action) -> String {
    let rec = ActionRecord {
        time,
        action: action.clone(),
    };
    let mut s = serde_json::to_string(&rec).expect("action serializes");
    s.push('\n');
    s
}

pub fn read_action_log(text: &str) -> Result<Vec<ActionRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Where the next copy of `path` should come from: a destination that already
/// holds it, or the hub.
pub fn choose_source(path: &DatasetPath, table: &Table, cascade_enabled: bool) -> Site {
    if cascade_enabled {
        for site in [Site::LcfA, Site::LcfB] {
            if table.held_at(path, site) {
                return site;
            }
        }
    }
    Site::SourceHub
}

/// Decides what to do with a `FAILED` row.
///
/// Returns `Split` (with no children yet) for scan memory failures when
/// splitting is enabled, `Update` with the row unchanged to requeue it, or
/// `Alert` carrying the row moved to `PERMANENT_FAILED`.
pub fn handle_failed(record: &TransferRecord, policy: &SchedulerPolicy) -> Action {
    if record.failure == Some(FailureKind::ScanOom) && policy.split_on_scan_oom {
        return Action::Split {
            path: record.dataset.clone(),
            children: Vec::new(),
        };
    }
    if record.attempts < policy.retry_limit {
        return Action::Update {
            record: record.clone(),
        };
    }
    let mut r = record.clone();
    r.status = TransferStatus::PermanentFailed;
    let message = format!(
        "{} to {} failed {} times ({})",
        r.dataset,
        r.destination,
        r.attempts,
        r.failure.map(FailureKind::as_str).unwrap_or("unknown")
    );
    Action::Alert { record: r, message }
}

/// Immediate subdirectories of `path` as dataset paths.
///
/// Fails with `UnsplittablePath` when `path` has no subdirectories or also
/// holds files directly, since the children would not cover it.
pub fn split_path(path: &DatasetPath, catalog: &Catalog) -> Result<Vec<DatasetPath>, CatalogError> {
    let (dirs, loose) = catalog.subdirectories(path)?;
    let unsplittable = |reason: &str| CatalogError::UnsplittablePath {
        path: path.to_string(),
        reason: reason.into(),
    };
    if dirs.is_empty() {
        return Err(unsplittable("no subdirectories"));
    }
    if loose {
        return Err(unsplittable("holds files next to its subdirectories"));
    }
    let facet = catalog.child_facet(path);
    dirs.iter().map(|d| path.child(&facet, d)).collect()
}

/// Adds one `NULL` row per destination for each path without rows. Returns
/// the number of rows added.
pub fn ingest_new_paths(
    table: &mut Table,
    paths: &[DatasetPath],
    destinations: &[Site],
) -> Result<usize, SchedulerError> {
    validate_destinations(destinations).map_err(|e| SchedulerError::InvalidPolicy(e.to_string()))?;
    let mut added = 0;
    for p in paths {
        if table.rows_for(p).next().is_some() {
            continue;
        }
        for &d in destinations {
            table.upsert(TransferRecord::pending(p.clone(), d))?;
            added += 1;
        }
    }
    Ok(added)
}

/// One pass of the control loop at the backend's current time.
///
/// On `BackendUnavailable` the step stops where it is. Every table write made
/// before that point is a complete, legal transition.
pub fn step<B: TransferBackend + ?Sized>(
    table: &mut Table,
    backend: &mut B,
    catalog: &Catalog,
    policy: &SchedulerPolicy,
) -> Result<Vec<Action>, SchedulerError> {
    let mut s = Step {
        table,
        backend,
        catalog,
        policy,
        actions: Vec::new(),
    };
    s.table.set_now(s.backend.now());
    s.run()?;
    Ok(s.actions)
}

struct Step<'a, B: ?Sized> {
    table: &'a mut Table,
    backend: &'a mut B,
    catalog: &'a Catalog,
    policy: &'a SchedulerPolicy,
    actions: Vec<Action>,
}

impl<B: TransferBackend + ?Sized> Step<'_, B> {
    fn run(&mut self) -> Result<(), SchedulerError> {
        let primary = self.policy.primary();
        let secondary = self.policy.secondary();

        self.fill_from_hub(primary, false)?;
        self.poll_all()?;

        if let Some(sec) = secondary {
            let rerouting = !self.policy.cascade_enabled
                || self.backend.endpoint_paused(primary)
                || self
                    .table
                    .in_flight_rows()
                    .iter()
                    .any(|r| r.destination == primary && r.status == TransferStatus::Paused);
            if rerouting {
                self.fill_from_hub(sec, false)?;
            } else if self.table.count_status(TransferStatus::PermanentFailed) > 0 {
                self.fill_from_hub(sec, true)?;
            }
        }

        if self.policy.cascade_enabled {
            let dests = self.policy.destinations.clone();
            for &src in &dests {
                for &dst in &dests {
                    if src != dst {
                        self.fill_cascade(src, dst)?;
                    }
                }
            }
        }

        let open = [
            TransferStatus::Null,
            TransferStatus::Queued,
            TransferStatus::Active,
            TransferStatus::Failed,
            TransferStatus::Paused,
        ];
        if open.iter().all(|&s| self.table.count_status(s) == 0) {
            self.actions.push(Action::Terminate);
        }
        Ok(())
    }

    fn route_open(&self, route: Route) -> bool {
        !self.backend.endpoint_paused(route.source) && !self.backend.endpoint_paused(route.destination)
    }

    /// Whether `path`, or a dataset containing it, is on its way to another
    /// destination.
    fn in_flight_elsewhere(&self, path: &DatasetPath, dest: Site) -> bool {
        let busy = |p: &DatasetPath| {
            self.table
                .rows_for(p)
                .any(|r| r.destination != dest && r.status.is_in_flight())
        };
        busy(path) || path.ancestors().any(|a| busy(&a))
    }

    /// Hub submissions to `dest` up to the route limit. With `only_orphans`
    /// a row qualifies only when the primary copy of its dataset gave up.
    fn fill_from_hub(&mut self, dest: Site, only_orphans: bool) -> Result<(), SchedulerError> {
        let route = Route {
            source: Site::SourceHub,
            destination: dest,
        };
        if !self.route_open(route) {
            return Ok(());
        }
        let primary = self.policy.primary();
        while self.table.in_flight_on(route) < self.policy.per_route_active_limit {
            let pick = {
                let cands: Box<dyn Iterator<Item = &TransferRecord>> = if self.policy.cascade_enabled {
                    Box::new(self.table.hub_candidates(dest))
                } else {
                    Box::new(self.table.pending_for(dest))
                };
                let mut found = None;
                for r in cands {
                    if only_orphans
                        && self
                            .table
                            .get(&r.dataset, primary)
                            .is_none_or(|p| p.status != TransferStatus::PermanentFailed)
                    {
                        continue;
                    }
                    if self.policy.cascade_enabled && self.in_flight_elsewhere(&r.dataset, dest) {
                        continue;
                    }
                    found = Some(r.clone());
                    break;
                }
                found
            };
            match pick {
                Some(r) => self.submit(route, r)?,
                None => break,
            }
        }
        Ok(())
    }

    fn fill_cascade(&mut self, src: Site, dst: Site) -> Result<(), SchedulerError> {
        let route = Route {
            source: src,
            destination: dst,
        };
        if !self.route_open(route) {
            return Ok(());
        }
        while self.table.in_flight_on(route) < self.policy.per_route_active_limit {
            let pick = self
                .table
                .cascade_candidates(dst)
                .find(|r| self.table.held_at(&r.dataset, src))
                .cloned();
            match pick {
                Some(r) => self.submit(route, r)?,
                None => break,
            }
        }
        Ok(())
    }

    fn submit(&mut self, route: Route, row: TransferRecord) -> Result<(), SchedulerError> {
        let uuid = self.backend.submit(route, &row.dataset)?;
        debug!("submit {} on {route} as {uuid}", row.dataset);
        let r = TransferRecord {
            source: route.source,
            uuid: Some(uuid.clone()),
            requested: Some(self.backend.now()),
            completed: None,
            status: TransferStatus::Queued,
            directories: 0,
            files: 0,
            rate: 0.0,
            faults: 0,
            bytes_transferred: 0,
            failure: None,
            missing_metadata: false,
            ..row
        };
        let path = r.dataset.clone();
        self.table.upsert(r)?;
        self.actions.push(Action::Submit { route, path, uuid });
        Ok(())
    }

    fn poll_all(&mut self) -> Result<(), SchedulerError> {
        let rows: Vec<TransferRecord> = self.table.in_flight_rows().into_iter().cloned().collect();
        for row in rows {
            let Some(uuid) = row.uuid.clone() else {
                continue;
            };
            let report = self.backend.poll(&uuid)?;
            if report.status != row.status {
                self.apply_report(row, &report)?;
            }
        }
        Ok(())
    }

    fn apply_report(
        &mut self,
        row: TransferRecord,
        report: &TransferStatusReport,
    ) -> Result<(), SchedulerError> {
        let chain = row
            .status
            .path_to(report.status)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| SchedulerError::IllegalReport {
                dataset: row.dataset.to_string(),
                destination: row.destination,
                from: row.status,
                to: report.status,
            })?;
        let mut r = TransferRecord {
            directories: report.directories,
            files: report.files,
            rate: report.rate,
            faults: report.faults,
            bytes_transferred: report.bytes_transferred,
            failure: report.failure,
            missing_metadata: report.missing_metadata,
            completed: report.completed,
            ..row
        };
        match report.status {
            TransferStatus::Succeeded => {
                r.bytes_transferred = self.catalog.manifest(&r.dataset)?.bytes;
            }
            TransferStatus::Failed => r.attempts += 1,
            _ => {}
        }
        for s in chain {
            r.status = s;
            self.table.upsert(r.clone())?;
        }
        self.actions.push(Action::Update { record: r.clone() });
        if r.status == TransferStatus::Failed {
            self.on_failed(r)?;
        }
        Ok(())
    }

    fn on_failed(&mut self, r: TransferRecord) -> Result<(), SchedulerError> {
        match handle_failed(&r, self.policy) {
            Action::Split { path, .. } => match split_path(&path, self.catalog) {
                Ok(children) => self.apply_split(&path, children),
                Err(CatalogError::UnsplittablePath { reason, .. }) => {
                    warn!("cannot split {path}: {reason}");
                    // fall back to plain retry accounting
                    let policy = SchedulerPolicy {
                        split_on_scan_oom: false,
                        ..self.policy.clone()
                    };
                    match handle_failed(&r, &policy) {
                        Action::Alert { record, message } => self.give_up(record, message),
                        _ => Ok(()),
                    }
                }
                Err(e) => Err(e.into()),
            },
            Action::Alert { record, message } => self.give_up(record, message),
            _ => Ok(()),
        }
    }

    fn give_up(&mut self, record: TransferRecord, message: String) -> Result<(), SchedulerError> {
        warn!("{message}");
        self.table.upsert(record.clone())?;
        self.actions.push(Action::Alert { record, message });
        Ok(())
    }

    /// Replaces every pending row of `path` by rows for its children.
    fn apply_split(&mut self, path: &DatasetPath, children: Vec<DatasetPath>) -> Result<(), SchedulerError> {
        let pending: Vec<TransferRecord> = self
            .table
            .rows_for(path)
            .filter(|r| r.status.is_pending())
            .cloned()
            .collect();
        for mut r in pending.iter().cloned() {
            r.status = TransferStatus::Split;
            self.table.upsert(r)?;
        }
        for c in &children {
            for r in &pending {
                if self.table.get(c, r.destination).is_none() {
                    self.table.upsert(TransferRecord::pending(c.clone(), r.destination))?;
                }
            }
        }
        self.actions.push(Action::Split {
            path: path.clone(),
            children,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTotals {
    pub route: Route,
    pub transfers: usize,
    pub bytes: u64,
    pub faults: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub started: SimTime,
    pub finished: SimTime,
    pub steps: u64,
    pub terminated: bool,
    /// Succeeded rows grouped by the route that delivered them.
    pub routes: Vec<RouteTotals>,
    pub succeeded: usize,
    pub permanent_failed: usize,
    pub faults_total: u64,
    pub faults_max: u64,
    /// Succeeded rows with at least one fault.
    pub transfers_with_faults: usize,
}

impl RunSummary {
    pub fn elapsed(&self) -> SimTime {
        self.finished.saturating_sub(self.started)
    }

    /// Totals recomputed from the table.
    pub fn from_table(table: &Table, started: SimTime, finished: SimTime, steps: u64, terminated: bool) -> RunSummary {
        let mut routes: Vec<RouteTotals> = Vec::new();
        let mut s = RunSummary {
            started,
            finished,
            steps,
            terminated,
            routes: Vec::new(),
            succeeded: 0,
            permanent_failed: table.count_status(TransferStatus::PermanentFailed),
            faults_total: 0,
            faults_max: 0,
            transfers_with_faults: 0,
        };
        for r in table.rows().filter(|r| r.status == TransferStatus::Succeeded) {
            s.succeeded += 1;
            s.faults_total += r.faults;
            s.faults_max = s.faults_max.max(r.faults);
            s.transfers_with_faults += usize::from(r.faults > 0);
            let route = r.route();
            let i = match routes.iter().position(|t| t.route == route) {
                Some(i) => i,
                None => {
                    routes.push(RouteTotals {
                        route,
                        transfers: 0,
                        bytes: 0,
                        faults: 0,
                    });
                    routes.len() - 1
                }
            };
            routes[i].transfers += 1;
            routes[i].bytes += r.bytes_transferred;
            routes[i].faults += r.faults;
        }
        routes.sort_by_key(|t| t.route);
        s.routes = routes;
        s
    }
}

/// Steps until termination, or until the next step would fall after `until`.
///
/// Actions go to `sink` before the step's commit marker is written, so a
/// crash never leaves committed rows without their actions.
pub fn run<B: TransferBackend + Clock>(
    table: &mut Table,
    backend: &mut B,
    catalog: &Catalog,
    policy: &SchedulerPolicy,
    until: Option<SimTime>,
    sink: &mut dyn FnMut(SimTime, &Action) -> std::io::Result<()>,
) -> Result<RunSummary, SchedulerError> {
    policy.validate()?;
    let started = TransferBackend::now(backend);
    let mut steps = 0;
    let mut terminated = false;
    loop {
        let now = TransferBackend::now(backend);
        match step(table, backend, catalog, policy) {
            Ok(actions) => {
                for a in &actions {
                    sink(now, a)?;
                }
                table.commit()?;
                terminated = actions.last() == Some(&Action::Terminate);
            }
            Err(SchedulerError::BackendUnavailable(m)) => {
                warn!("step at {now} skipped: backend unavailable: {m}");
                table.commit()?;
            }
            Err(e) => return Err(e),
        }
        steps += 1;
        if terminated {
            break;
        }
        let next = now + policy.poll();
        if until.is_some_and(|u| next > u) {
            break;
        }
        Clock::sleep_until(backend, next)?;
    }
    let finished = TransferBackend::now(backend);
    Ok(RunSummary::from_table(table, started, finished, steps, terminated))
}
