use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use xxhash_rust::xxh64::xxh64;

use super::config::{validate_windows, ConfigError, FabricConfig, Window};
use super::{
    BackendError, Clock, EventKind, EventLogEntry, EventPayload, Holdings, TransferBackend,
    TransferStatusReport,
};
use crate::catalog::{Catalog, DatasetPath, Manifest};
use crate::model::{FailureKind, Route, SimTime, Site, TransferId, TransferStatus};

const PERSISTENT_SALT: u64 = 0x7065_7273_6973_7421;
/// XOR applied to the checksum of a file stored without verification.
const CORRUPTION_MASK: u64 = 0x0bad_c0de;

fn idx(s: Site) -> usize {
    match s {
        Site::SourceHub => 0,
        Site::LcfA => 1,
        Site::LcfB => 2,
    }
}

/// Milliseconds to cover `secs`, rounded up but tolerant of float noise.
fn ceil_ms(secs: f64) -> u64 {
    let x = secs * 1000.0;
    let r = x.round();
    if (x - r).abs() <= (x.abs() * 1e-12).max(1e-6) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Queued,
    Scanning { remaining: u64, oom: bool },
    Stalled { remaining: u64 },
    Moving,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mark {
    Fault,
    Retransmit(usize),
    End,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    since: SimTime,
    start: f64,
    rate: f64,
}

#[derive(Debug, Clone)]
struct Transfer {
    id: TransferId,
    route: Route,
    path: DatasetPath,
    /// What the destination receives, with the source's checksums.
    copy: Manifest,
    corrupted: Vec<bool>,
    file_ends: Vec<u64>,
    marks: VecDeque<(f64, Mark)>,
    phase: Phase,
    outcome: TransferStatus,
    paused: bool,
    progress: f64,
    rate: f64,
    due: Option<SimTime>,
    segment: Option<Segment>,
    faults: u64,
    directories: u64,
    requested: SimTime,
    started: Option<SimTime>,
    completed: Option<SimTime>,
    failure: Option<FailureKind>,
    missing_metadata: bool,
}

impl Transfer {
    fn status(&self) -> TransferStatus {
        match self.phase {
            Phase::Queued => TransferStatus::Queued,
            Phase::Done => self.outcome,
            _ if self.paused => TransferStatus::Paused,
            _ => TransferStatus::Active,
        }
    }

    fn flowing(&self) -> bool {
        self.phase == Phase::Moving && !self.paused
    }

    fn next_mark(&self) -> f64 {
        self.marks.front().map_or(self.progress, |m| m.0)
    }

    fn bytes(&self) -> u64 {
        self.progress.round() as u64
    }

    fn files_done(&self) -> u64 {
        self.file_ends.partition_point(|&e| (e as f64) <= self.progress) as u64
    }

    fn lifetime_rate(&self, now: SimTime) -> f64 {
        let Some(start) = self.started else { return 0.0 };
        let end = self.completed.unwrap_or(now);
        let secs = end.saturating_sub(start).as_secs_f64();
        if secs > 0.0 {
            self.bytes() as f64 / secs
        } else {
            0.0
        }
    }
}

/// The simulated transfer service.
///
/// ```
/// use std::sync::Arc;
/// use cascade_core::catalog::{generate_catalog, CatalogSpec};
/// use cascade_core::model::{Route, Site, TransferStatus};
/// use cascade_core::simnet::{Fabric, FabricConfig, TransferBackend, GIB};
///
/// let catalog = Arc::new(generate_catalog(&CatalogSpec::new(3, 1)).unwrap());
/// let path = catalog.paths().next().unwrap().clone();
/// let mut fabric = Fabric::new(FabricConfig::uniform(GIB), catalog).unwrap();
/// let id = fabric.submit(Route::new(Site::SourceHub, Site::LcfA).unwrap(), &path).unwrap();
/// fabric.advance(fabric.now() + cascade_core::model::SimTime::from_secs(3600));
/// assert_eq!(fabric.poll(&id).unwrap().status, TransferStatus::Succeeded);
/// ```
#[derive(Debug, Clone)]
pub struct Fabric {
    config: FabricConfig,
    catalog: Arc<Catalog>,
    now: SimTime,
    egress: [f64; 3],
    ingress: [f64; 3],
    scan_cost: [f64; 3],
    scan_cap: [u64; 3],
    route_cap: [[f64; 3]; 3],
    per_transfer: [[f64; 3]; 3],
    windows: [Vec<(SimTime, SimTime)>; 3],
    transfers: Vec<Transfer>,
    by_id: HashMap<TransferId, usize>,
    live: Vec<usize>,
    holdings: [Holdings; 3],
    first_failure: HashMap<DatasetPath, SimTime>,
    log: Vec<EventLogEntry>,
}

impl Fabric {
    pub fn new(config: FabricConfig, catalog: Arc<Catalog>) -> Result<Fabric, ConfigError> {
        config.validate()?;
        let mut f = Fabric {
            catalog,
            now: SimTime::ZERO,
            egress: [0.0; 3],
            ingress: [0.0; 3],
            scan_cost: [0.0; 3],
            scan_cap: [0; 3],
            route_cap: [[f64::INFINITY; 3]; 3],
            per_transfer: [[f64::INFINITY; 3]; 3],
            windows: Default::default(),
            transfers: Vec::new(),
            by_id: HashMap::new(),
            live: Vec::new(),
            holdings: Default::default(),
            first_failure: HashMap::new(),
            log: Vec::new(),
            config,
        };
        for s in &f.config.sites {
            let i = idx(s.site);
            f.egress[i] = s.egress_cap;
            f.ingress[i] = s.ingress_cap;
            f.scan_cost[i] = s.scan_cost;
            f.scan_cap[i] = s.scan_entry_cap;
            f.windows[i] = s.windows()?;
        }
        for r in &f.config.routes {
            let (a, b) = (idx(r.source), idx(r.destination));
            f.route_cap[a][b] = r.cap;
            f.per_transfer[a][b] = r.per_transfer_cap.unwrap_or(f64::INFINITY);
        }
        Ok(f)
    }

    pub fn config(&self) -> &FabricConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Files received at an LCF. The hub's data is the catalog itself and is
    /// not materialized here.
    pub fn holdings(&self, site: Site) -> &Holdings {
        &self.holdings[idx(site)]
    }

    /// Replaces a site's stored files, e.g. when restoring saved state.
    pub fn restore_holdings(&mut self, site: Site, h: Holdings) {
        self.holdings[idx(site)] = h;
    }

    /// What `site` holds under `path`.
    pub fn manifest_at(&self, site: Site, path: &DatasetPath) -> Option<Manifest> {
        if site.is_hub() {
            self.catalog.manifest(path).ok()
        } else {
            Some(self.holdings[idx(site)].manifest_for(path))
        }
    }

    /// Every event emitted so far.
    pub fn log(&self) -> &[EventLogEntry] {
        &self.log
    }

    /// The log plus a `BYTES_PROGRESS` entry closing each open segment at
    /// the current time; the fabric itself is unchanged.
    pub fn log_snapshot(&self) -> Vec<EventLogEntry> {
        let mut out = self.log.clone();
        let mut open: Vec<EventLogEntry> = self
            .live
            .iter()
            .filter_map(|&i| self.segment_event(&self.transfers[i]))
            .collect();
        open.sort_by(|a, b| a.uuid.cmp(&b.uuid));
        out.extend(open);
        out
    }

    pub fn transfer_count(&self) -> usize {
        self.transfers.len()
    }

    /// Whether `site` is inside a maintenance window at `t`.
    pub fn endpoint_paused_at(&self, site: Site, t: SimTime) -> bool {
        let w = &self.windows[idx(site)];
        let i = w.partition_point(|&(s, _)| s <= t);
        i > 0 && t < w[i - 1].1
    }

    pub fn windows(&self, site: Site) -> &[(SimTime, SimTime)] {
        &self.windows[idx(site)]
    }

    /// Replaces the maintenance windows of `site`. Transfers touching it are
    /// paused or resumed at the next advance.
    pub fn set_maintenance(&mut self, site: Site, windows: &[Window]) -> Result<(), ConfigError> {
        let ms = validate_windows(site, windows)?;
        self.windows[idx(site)] = ms;
        let spec = self.config.site_mut(site);
        spec.maintenance = windows.to_vec();
        spec.periodic_maintenance.clear();
        Ok(())
    }

    fn path_fails(&self, path: &DatasetPath) -> bool {
        let p = self.config.faults.persistent_fail_prob;
        if p <= 0.0 {
            return false;
        }
        let h = xxh64(path.to_string().as_bytes(), self.config.seed ^ PERSISTENT_SALT);
        (h as f64 / 2f64.powi(64)) < p
    }

    pub fn submit(&mut self, route: Route, path: &DatasetPath) -> Result<TransferId, BackendError> {
        if route.source == route.destination {
            return Err(BackendError::InvalidRoute(route.to_string()));
        }
        let reference = self
            .catalog
            .manifest(path)
            .map_err(|_| BackendError::UnknownPath(path.to_string()))?;
        let copy = if route.source.is_hub() {
            reference
        } else {
            let held = self.holdings[idx(route.source)].manifest_for(path);
            let complete = held.entries.len() == reference.entries.len()
                && held
                    .entries
                    .iter()
                    .zip(&reference.entries)
                    .all(|(a, b)| a.rel_path == b.rel_path);
            if !complete {
                return Err(BackendError::SourceMissingData {
                    site: route.source,
                    path: path.to_string(),
                });
            }
            held
        };
        let n = self.transfers.len() as u64 + 1;
        let id = TransferId(format!("sim-{n:08}"));
        let mut rng = ChaCha8Rng::seed_from_u64(xxh64(&n.to_le_bytes(), self.config.seed));
        let faults = &self.config.faults;

        let mut file_ends = Vec::with_capacity(copy.entries.len());
        let mut acc = 0u64;
        for e in &copy.entries {
            acc += e.size;
            file_ends.push(acc);
        }
        let payload = acc;

        let n_faults = draw_fault_count(&mut rng, faults.transient_rate, faults.transient_shape);
        let mut marks: Vec<(f64, Mark)> = (0..n_faults)
            .map(|_| (rng.random::<f64>() * payload as f64, Mark::Fault))
            .collect();
        let mut corrupted = vec![false; copy.entries.len()];
        let mut work = payload;
        for (i, e) in copy.entries.iter().enumerate() {
            if faults.file_corruption_prob > 0.0 && rng.random_bool(faults.file_corruption_prob) {
                corrupted[i] = true;
                if self.config.integrity_check {
                    marks.push((file_ends[i] as f64, Mark::Retransmit(i)));
                    work += e.size;
                }
            }
        }
        let missing_metadata =
            faults.missing_metadata_prob > 0.0 && rng.random_bool(faults.missing_metadata_prob);
        marks.sort_by(|a, b| a.0.total_cmp(&b.0));
        marks.push((work as f64, Mark::End));

        let t = Transfer {
            id: id.clone(),
            route,
            path: path.clone(),
            corrupted,
            file_ends,
            marks: marks.into(),
            phase: Phase::Queued,
            outcome: TransferStatus::Queued,
            paused: false,
            progress: 0.0,
            rate: 0.0,
            due: None,
            segment: None,
            faults: 0,
            directories: 0,
            requested: self.now,
            started: None,
            completed: None,
            failure: None,
            missing_metadata,
            copy,
        };
        self.log.push(EventLogEntry {
            time: self.now,
            kind: EventKind::Submit,
            uuid: id.clone(),
            route,
            payload: EventPayload {
                path: Some(path.to_string()),
                bytes: Some(payload),
                ..Default::default()
            },
        });
        self.by_id.insert(id.clone(), self.transfers.len());
        self.live.push(self.transfers.len());
        self.transfers.push(t);
        Ok(id)
    }

    pub fn poll(&self, id: &TransferId) -> Result<TransferStatusReport, BackendError> {
        let &i = self
            .by_id
            .get(id)
            .ok_or_else(|| BackendError::UnknownTransfer(id.to_string()))?;
        let t = &self.transfers[i];
        let status = t.status();
        let paused_reason = (status == TransferStatus::Paused).then(|| {
            let sites: Vec<&str> = [t.route.source, t.route.destination]
                .into_iter()
                .filter(|&s| self.endpoint_paused_at(s, self.now))
                .map(|s| self.config.site(s).display_name())
                .collect();
            format!("maintenance at {}", sites.join(", "))
        });
        Ok(TransferStatusReport {
            uuid: t.id.clone(),
            status,
            directories: t.directories,
            files: t.files_done(),
            bytes_transferred: t.bytes(),
            faults: t.faults,
            rate: t.lifetime_rate(self.now),
            paused_reason,
            failure: t.failure,
            missing_metadata: t.missing_metadata,
            requested: t.requested,
            started: t.started,
            completed: t.completed,
        })
    }

    /// Processes every event up to and including `until` and returns the
    /// entries appended to the log. Earlier `until` values are a no-op.
    pub fn advance(&mut self, until: SimTime) -> Vec<EventLogEntry> {
        let mark = self.log.len();
        self.run_until(until);
        self.log[mark..].to_vec()
    }

    fn run_until(&mut self, until: SimTime) {
        if until < self.now {
            return;
        }
        loop {
            self.reallocate();
            let due = self.live.iter().filter_map(|&i| self.transfers[i].due).min();
            let next = match (due, self.next_boundary()) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            match next {
                Some(t) if t <= until => {
                    self.progress_to(t);
                    self.fire(t);
                }
                _ => {
                    self.progress_to(until);
                    break;
                }
            }
        }
    }

    fn next_boundary(&self) -> Option<SimTime> {
        let now = self.now;
        self.windows
            .iter()
            .filter_map(|w| {
                let i = w.partition_point(|&(_, e)| e <= now);
                w.get(i).map(|&(s, e)| if s > now { s } else { e })
            })
            .min()
    }

    fn segment_event(&self, t: &Transfer) -> Option<EventLogEntry> {
        let seg = t.segment?;
        if seg.since >= self.now {
            return None;
        }
        Some(EventLogEntry {
            time: self.now,
            kind: EventKind::BytesProgress,
            uuid: t.id.clone(),
            route: t.route,
            payload: EventPayload {
                since: Some(seg.since),
                bytes: Some(t.bytes() - seg.start.round() as u64),
                rate: Some(seg.rate),
                ..Default::default()
            },
        })
    }

    fn close_segment(&mut self, i: usize, batch: &mut Vec<EventLogEntry>) {
        if let Some(e) = self.segment_event(&self.transfers[i]) {
            batch.push(e);
        }
        self.transfers[i].segment = None;
    }

    /// Refreshes pause flags, shares capacity among flowing transfers and
    /// computes each transfer's next event time.
    fn reallocate(&mut self) {
        let now = self.now;
        let mut batch = Vec::new();
        for k in 0..self.live.len() {
            let i = self.live[k];
            let r = self.transfers[i].route;
            let paused =
                self.endpoint_paused_at(r.source, now) || self.endpoint_paused_at(r.destination, now);
            if paused != self.transfers[i].paused {
                self.transfers[i].paused = paused;
                let t = &self.transfers[i];
                batch.push(EventLogEntry {
                    time: now,
                    kind: if paused { EventKind::Pause } else { EventKind::Resume },
                    uuid: t.id.clone(),
                    route: r,
                    payload: EventPayload {
                        bytes: Some(t.bytes()),
                        ..Default::default()
                    },
                });
            }
        }

        let mut n_src = [0usize; 3];
        let mut n_dst = [0usize; 3];
        let mut n_route = [[0usize; 3]; 3];
        for &i in &self.live {
            let t = &self.transfers[i];
            if t.flowing() {
                let (a, b) = (idx(t.route.source), idx(t.route.destination));
                n_src[a] += 1;
                n_dst[b] += 1;
                n_route[a][b] += 1;
            }
        }

        for k in 0..self.live.len() {
            let i = self.live[k];
            let (a, b) = {
                let t = &self.transfers[i];
                (idx(t.route.source), idx(t.route.destination))
            };
            let rate = if self.transfers[i].flowing() {
                (self.egress[a] / n_src[a] as f64)
                    .min(self.ingress[b] / n_dst[b] as f64)
                    .min(self.route_cap[a][b] / n_route[a][b] as f64)
                    .min(self.per_transfer[a][b])
            } else {
                0.0
            };
            if self.transfers[i].segment.is_some_and(|s| s.rate != rate) {
                self.close_segment(i, &mut batch);
            }
            let t = &mut self.transfers[i];
            if rate > 0.0 && t.segment.is_none() {
                t.segment = Some(Segment {
                    since: now,
                    start: t.progress,
                    rate,
                });
            }
            t.rate = rate;
            t.due = match t.phase {
                Phase::Queued => Some(now),
                Phase::Scanning { remaining, .. } | Phase::Stalled { remaining } if !t.paused => {
                    Some(now + SimTime(remaining))
                }
                // derived from the segment alone, so chunking `advance` calls
                // differently cannot shift event times
                Phase::Moving if rate > 0.0 => t.segment.map(|seg| {
                    let left = (t.next_mark() - seg.start).max(0.0);
                    seg.since + SimTime(ceil_ms(left / rate))
                }),
                _ => None,
            };
        }
        self.flush(batch);
    }

    fn progress_to(&mut self, t: SimTime) {
        let dt = t.saturating_sub(self.now).as_millis();
        if dt > 0 {
            for &i in &self.live {
                let tr = &mut self.transfers[i];
                if tr.paused {
                    continue;
                }
                match &mut tr.phase {
                    Phase::Scanning { remaining, .. } | Phase::Stalled { remaining } => {
                        *remaining = remaining.saturating_sub(dt);
                    }
                    Phase::Moving if tr.rate > 0.0 => {
                        let target = tr.next_mark();
                        tr.progress = match tr.segment {
                            _ if tr.due == Some(t) => target,
                            Some(seg) => {
                                let secs = t.saturating_sub(seg.since).as_secs_f64();
                                (seg.start + seg.rate * secs).min(target)
                            }
                            None => tr.progress,
                        };
                    }
                    _ => {}
                }
            }
        }
        self.now = t;
    }

    fn fire(&mut self, now: SimTime) {
        let mut batch = Vec::new();
        let mut finished = false;
        for k in 0..self.live.len() {
            let i = self.live[k];
            if self.transfers[i].due != Some(now) {
                continue;
            }
            self.transfers[i].due = None;
            let src = idx(self.transfers[i].route.source);
            match self.transfers[i].phase {
                Phase::Queued => {
                    let t = &mut self.transfers[i];
                    let entries = t.copy.scan_entries();
                    let oom = entries > self.scan_cap[src];
                    let scanned = if oom { self.scan_cap[src] } else { entries };
                    let remaining = ceil_ms(self.scan_cost[src] * scanned as f64 / 1000.0);
                    t.started = Some(now);
                    t.outcome = TransferStatus::Active;
                    t.phase = Phase::Scanning { remaining, oom };
                    batch.push(event(t, now, EventKind::ScanStart, EventPayload {
                        entries: Some(entries),
                        ..Default::default()
                    }));
                }
                Phase::Scanning { oom: true, .. } => {
                    let entries = self.transfers[i].copy.scan_entries();
                    let t = &self.transfers[i];
                    batch.push(event(t, now, EventKind::ScanOom, EventPayload {
                        entries: Some(entries),
                        ..Default::default()
                    }));
                    self.fail(i, FailureKind::ScanOom, "scan ran out of memory", &mut batch);
                    finished = true;
                }
                Phase::Scanning { oom: false, .. } => {
                    let t = &mut self.transfers[i];
                    t.directories = t.copy.directories;
                    let entries = t.copy.scan_entries();
                    batch.push(event(t, now, EventKind::ScanDone, EventPayload {
                        entries: Some(entries),
                        ..Default::default()
                    }));
                    let path = self.transfers[i].path.clone();
                    if self.transfers[i].route.source.is_hub() && self.path_fails(&path) {
                        let first = *self.first_failure.entry(path).or_insert(now);
                        let fixed_at = first + SimTime::from_secs_f64(self.config.faults.persistent_autofix_after);
                        if now < fixed_at {
                            self.fail(i, FailureKind::Unreadable, "unreadable files at source", &mut batch);
                            finished = true;
                            continue;
                        }
                    }
                    self.transfers[i].phase = Phase::Moving;
                }
                Phase::Stalled { .. } => self.transfers[i].phase = Phase::Moving,
                Phase::Moving => {
                    let (_, m) = self.transfers[i].marks.pop_front().expect("moving transfer has a mark");
                    match m {
                        Mark::Fault => {
                            self.close_segment(i, &mut batch);
                            let delay = ceil_ms(self.config.faults.transient_delay);
                            let t = &mut self.transfers[i];
                            t.faults += 1;
                            if delay > 0 {
                                t.phase = Phase::Stalled { remaining: delay };
                            }
                            batch.push(event(t, now, EventKind::Fault, EventPayload {
                                faults: Some(t.faults),
                                bytes: Some(t.bytes()),
                                ..Default::default()
                            }));
                        }
                        Mark::Retransmit(f) => {
                            let t = &mut self.transfers[i];
                            t.faults += 1;
                            let file = t.copy.entries[f].rel_path.clone();
                            batch.push(event(t, now, EventKind::FileRetransmit, EventPayload {
                                faults: Some(t.faults),
                                bytes: Some(t.copy.entries[f].size),
                                file: Some(file),
                                ..Default::default()
                            }));
                        }
                        Mark::End => {
                            self.close_segment(i, &mut batch);
                            self.succeed(i, now, &mut batch);
                            finished = true;
                        }
                    }
                }
                Phase::Done => {}
            }
        }
        if finished {
            let transfers = &self.transfers;
            self.live.retain(|&i| transfers[i].phase != Phase::Done);
        }
        self.flush(batch);
    }

    fn succeed(&mut self, i: usize, now: SimTime, batch: &mut Vec<EventLogEntry>) {
        let integrity = self.config.integrity_check;
        let t = &mut self.transfers[i];
        t.phase = Phase::Done;
        t.outcome = TransferStatus::Succeeded;
        t.completed = Some(now);
        let dst = &mut self.holdings[idx(t.route.destination)];
        for (e, &bad) in t.copy.entries.iter().zip(&t.corrupted) {
            if bad && !integrity {
                let mut stored = e.clone();
                stored.checksum ^= CORRUPTION_MASK;
                dst.insert(&t.path, &stored);
            } else {
                dst.insert(&t.path, e);
            }
        }
        let rate = t.lifetime_rate(now);
        batch.push(event(t, now, EventKind::Succeed, EventPayload {
            path: Some(t.path.to_string()),
            bytes: Some(t.copy.bytes),
            faults: Some(t.faults),
            rate: Some(rate),
            ..Default::default()
        }));
    }

    fn fail(&mut self, i: usize, kind: FailureKind, reason: &str, batch: &mut Vec<EventLogEntry>) {
        self.close_segment(i, batch);
        let now = self.now;
        let t = &mut self.transfers[i];
        t.phase = Phase::Done;
        t.outcome = TransferStatus::Failed;
        t.failure = Some(kind);
        t.completed = Some(now);
        batch.push(event(t, now, EventKind::Fail, EventPayload {
            reason: Some(format!("{}: {reason}", kind.as_str())),
            ..Default::default()
        }));
    }

    /// Appends a batch of same-time events ordered by uuid, then kind.
    fn flush(&mut self, mut batch: Vec<EventLogEntry>) {
        batch.sort_by(|a, b| a.uuid.cmp(&b.uuid).then(a.kind.cmp(&b.kind)));
        self.log.extend(batch);
    }
}

fn event(t: &Transfer, time: SimTime, kind: EventKind, payload: EventPayload) -> EventLogEntry {
    EventLogEntry {
        time,
        kind,
        uuid: t.id.clone(),
        route: t.route,
        payload,
    }
}

/// Poisson count, optionally mixed over a gamma-distributed intensity
/// (a negative binomial with the same mean).
fn draw_fault_count(rng: &mut ChaCha8Rng, mean: f64, shape: Option<f64>) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let lambda = match shape {
        Some(k) => Gamma::new(k, mean / k).expect("validated shape").sample(rng),
        None => mean,
    };
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |p| p.sample(rng) as u64)
}

impl TransferBackend for Fabric {
    fn now(&self) -> SimTime {
        self.now
    }

    fn submit(&mut self, route: Route, path: &DatasetPath) -> Result<TransferId, BackendError> {
        Fabric::submit(self, route, path)
    }

    fn poll(&mut self, id: &TransferId) -> Result<TransferStatusReport, BackendError> {
        Fabric::poll(self, id)
    }

    fn endpoint_paused(&self, site: Site) -> bool {
        self.endpoint_paused_at(site, self.now)
    }
}

impl Clock for Fabric {
    fn now(&self) -> SimTime {
        self.now
    }

    fn sleep_until(&mut self, t: SimTime) -> Result<(), BackendError> {
        self.run_until(t);
        Ok(())
    }
}
