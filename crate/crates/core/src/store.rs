//! Crash-recoverable tracking table backed by an append-only journal.
//!
//! Journal layout (UTF-8, LF-terminated, tab-separated):
//!
//! ```text
//! #cascade-journal v1
//! R <seq> <time_ms> <dataset> <facets> <source> <destination> <uuid> <requested_ms> <completed_ms> <status> <directories> <files> <rate> <faults> <bytes_transferred> <attempts> <failure> <missing_metadata> <crc32>
//! C <seq> <time_ms> <crc32>
//! ```
//!
//! `R` lines are full-record snapshots, `C` lines mark the end of a
//! scheduler step. Compaction writes `S` lines, which carry the same fields as
//! `R` but may introduce a row at any status. Absent values are written as `-`. The trailing field is the
//! CRC-32 (8 hex digits) of everything before its separating tab. Sequence
//! numbers increase strictly across both kinds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

use crate::catalog::DatasetPath;
use crate::model::{
    FailureKind, Route, SimTime, Site, TransferId, TransferRecord, TransferStatus,
};

const HEADER: &str = "#cascade-journal v1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("journal I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal at line {line} (last good sequence {last_good_seq}): {reason}")]
    CorruptJournal {
        last_good_seq: u64,
        line: usize,
        reason: String,
    },
    #[error("illegal transition for {dataset} -> {destination}: {from} to {to}")]
    IllegalTransition {
        dataset: String,
        destination: Site,
        from: String,
        to: TransferStatus,
    },
}

/// When journal appends reach stable storage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Durability {
    /// `fdatasync` after every append.
    #[default]
    Sync,
    /// Appends are handed to the OS only; survives process death, not power loss.
    Flush,
}

/// Conjunctive row filter; `None` fields match anything.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    pub status: Option<TransferStatus>,
    pub source: Option<Site>,
    pub destination: Option<Site>,
    pub dataset: Option<DatasetPath>,
}

impl Filter {
    pub fn status(mut self, s: TransferStatus) -> Self {
        self.status = Some(s);
        self
    }
    pub fn source(mut self, s: Site) -> Self {
        self.source = Some(s);
        self
    }
    pub fn destination(mut self, s: Site) -> Self {
        self.destination = Some(s);
        self
    }
    pub fn route(self, r: Route) -> Self {
        self.source(r.source).destination(r.destination)
    }
    pub fn dataset(mut self, p: DatasetPath) -> Self {
        self.dataset = Some(p);
        self
    }

    pub fn matches(&self, r: &TransferRecord) -> bool {
        self.status.is_none_or(|s| s == r.status)
            && self.source.is_none_or(|s| s == r.source)
            && self.destination.is_none_or(|s| s == r.destination)
            && self.dataset.as_ref().is_none_or(|d| d == &r.dataset)
    }
}

/// Catalog order: datasets first seen without an ancestor in the table get an
/// ordinal; descendants sort right after their ancestor.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct OrderKey {
    root: u32,
    rest: Vec<String>,
    destination: Site,
}

struct Writer {
    path: PathBuf,
    file: File,
    durability: Durability,
}

impl Writer {
    fn append(&mut self, line: &str) -> Result<(), StoreError> {
        self.file.write_all(line.as_bytes())?;
        if self.durability == Durability::Sync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

/// Handle on the tracking table. One writer; readers borrow immutably.
pub struct Table {
    writer: Option<Writer>,
    now: SimTime,
    last_seq: u64,
    last_commit: Option<(u64, SimTime)>,
    dirty: bool,
    rows: Vec<TransferRecord>,
    index: HashMap<DatasetPath, [Option<usize>; 3]>,
    keys: Vec<OrderKey>,
    order: BTreeMap<OrderKey, usize>,
    roots: HashMap<DatasetPath, u32>,
    status_counts: [usize; TransferStatus::ALL.len()],
    pending: BTreeMap<Site, BTreeSet<OrderKey>>,
    in_flight: HashMap<Route, usize>,
    in_flight_keys: BTreeSet<OrderKey>,
    succeeded: HashMap<DatasetPath, Vec<Site>>,
    /// Pending rows whose dataset another LCF already holds.
    ready: BTreeMap<Site, BTreeSet<OrderKey>>,
}

fn slot(s: Site) -> usize {
    match s {
        Site::SourceHub => 0,
        Site::LcfA => 1,
        Site::LcfB => 2,
    }
}

impl Table {
    /// A table with no journal.
    pub fn in_memory() -> Table {
        Table {
            writer: None,
            now: SimTime::ZERO,
            last_seq: 0,
            last_commit: None,
            dirty: false,
            rows: Vec::new(),
            index: HashMap::new(),
            keys: Vec::new(),
            order: BTreeMap::new(),
            roots: HashMap::new(),
            status_counts: [0; TransferStatus::ALL.len()],
            pending: BTreeMap::new(),
            in_flight: HashMap::new(),
            in_flight_keys: BTreeSet::new(),
            succeeded: HashMap::new(),
            ready: BTreeMap::new(),
        }
    }

    pub fn open(location: impl AsRef<Path>) -> Result<Table, StoreError> {
        Self::open_with(location, Durability::default())
    }

    /// Opens or creates a journal and replays it. A torn final line is
    /// discarded (and truncated away) with a warning.
    pub fn open_with(location: impl AsRef<Path>, durability: Durability) -> Result<Table, StoreError> {
        let path = location.as_ref().to_path_buf();
        let mut table = Table::in_memory();
        let good_len = if path.exists() {
            let text = fs::read(&path)?;
            table.replay(&text)?
        } else {
            0
        };
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        let current = file.metadata()?.len();
        if good_len < current {
            file.set_len(good_len)?;
        }
        if good_len == 0 {
            file.write_all(format!("{HEADER}\n").as_bytes())?;
            file.sync_data()?;
        }
        table.writer = Some(Writer {
            path,
            file,
            durability,
        });
        table.dirty = false;
        Ok(table)
    }

    /// Replays journal bytes into an empty table; returns the length of the
    /// valid prefix.
    fn replay(&mut self, bytes: &[u8]) -> Result<u64, StoreError> {
        if bytes.is_empty() {
            return Ok(0);
        }
        let text = String::from_utf8_lossy(bytes);
        let mut offset = 0usize;
        let mut lines = text.split_inclusive('\n').enumerate().peekable();
        while let Some((i, raw)) = lines.next() {
            let line_no = i + 1;
            let is_last = lines.peek().is_none();
            let complete = raw.ends_with('\n');
            let body = raw.trim_end_matches('\n');
            if i == 0 {
                if body != HEADER {
                    if is_last && !complete && HEADER.starts_with(body) {
                        warn!("discarding torn journal header");
                        return Ok(0);
                    }
                    return Err(StoreError::CorruptJournal {
                        last_good_seq: 0,
                        line: 1,
                        reason: format!("bad header {body:?}"),
                    });
                }
                offset += raw.len();
                continue;
            }
            let parsed = if complete {
                parse_line(body)
            } else {
                Err("torn line".to_string())
            };
            let result = parsed.and_then(|entry| self.apply_entry(entry).map_err(|e| e.to_string()));
            match result {
                Ok(()) => offset += raw.len(),
                Err(reason) if is_last => {
                    warn!(
                        "discarding bad final journal line {line_no} after sequence {}: {reason}",
                        self.last_seq
                    );
                    break;
                }
                Err(reason) => {
                    return Err(StoreError::CorruptJournal {
                        last_good_seq: self.last_seq,
                        line: line_no,
                        reason,
                    })
                }
            }
        }
        Ok(offset as u64)
    }

    fn apply_entry(&mut self, entry: Entry) -> Result<(), StoreError> {
        let seq = entry.seq();
        if seq <= self.last_seq {
            return Err(StoreError::CorruptJournal {
                last_good_seq: self.last_seq,
                line: 0,
                reason: format!("sequence {seq} does not follow {}", self.last_seq),
            });
        }
        match entry {
            Entry::Record {
                time,
                record,
                snapshot,
                ..
            } => {
                self.now = time;
                self.apply(record, snapshot)?;
            }
            Entry::Commit { time, .. } => {
                self.now = time;
                self.last_commit = Some((seq, time));
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.writer.as_ref().map(|w| w.path.as_path())
    }

    /// Timestamp stamped on subsequent journal lines.
    pub fn set_now(&mut self, t: SimTime) {
        self.now = t;
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    /// Sequence and time of the latest step marker.
    pub fn last_commit(&self) -> Option<(u64, SimTime)> {
        self.last_commit
    }

    /// Inserts or replaces the row keyed by `(dataset, destination)`. The
    /// journal line is written (and synced, per durability) before the
    /// in-memory view changes.
    pub fn upsert(&mut self, r: TransferRecord) -> Result<u64, StoreError> {
        let current = self.get(&r.dataset, r.destination).map(|c| c.status);
        if !TransferStatus::can_transition(current, r.status) {
            return Err(illegal(&r, current));
        }
        let seq = self.last_seq + 1;
        if let Some(w) = self.writer.as_mut() {
            w.append(&format_record(seq, self.now, &r))?;
        }
        self.apply(r, false)?;
        self.last_seq = seq;
        self.dirty = true;
        Ok(seq)
    }

    /// Upserts a batch, e.g. a freshly built plan.
    pub fn insert_all<I: IntoIterator<Item = TransferRecord>>(&mut self, records: I) -> Result<(), StoreError> {
        for r in records {
            self.upsert(r)?;
        }
        Ok(())
    }

    /// Writes a step marker if anything changed since the last one.
    pub fn commit(&mut self) -> Result<Option<u64>, StoreError> {
        if !self.dirty {
            return Ok(None);
        }
        let seq = self.last_seq + 1;
        if let Some(w) = self.writer.as_mut() {
            let body = format!("C\t{seq}\t{}", self.now.as_millis());
            w.append(&with_crc(body))?;
        }
        self.last_seq = seq;
        self.last_commit = Some((seq, self.now));
        self.dirty = false;
        Ok(Some(seq))
    }

    fn apply(&mut self, r: TransferRecord, snapshot: bool) -> Result<(), StoreError> {
        match self.id_of(&r.dataset, r.destination) {
            Some(id) => {
                let old = &self.rows[id];
                if !TransferStatus::can_transition(Some(old.status), r.status) {
                    return Err(illegal(&r, Some(old.status)));
                }
                let (old_status, old_route) = (old.status, old.route());
                self.unindex(id, old_status, old_route);
                self.rows[id] = r;
                self.reindex(id);
            }
            None => {
                if !snapshot && r.status != TransferStatus::Null {
                    return Err(illegal(&r, None));
                }
                let id = self.rows.len();
                let ok = self.order_key(&r.dataset, r.destination);
                self.order.insert(ok.clone(), id);
                self.keys.push(ok);
                self.index.entry(r.dataset.clone()).or_default()[slot(r.destination)] = Some(id);
                self.rows.push(r);
                self.reindex(id);
            }
        }
        Ok(())
    }

    fn id_of(&self, dataset: &DatasetPath, destination: Site) -> Option<usize> {
        self.index.get(dataset).and_then(|s| s[slot(destination)])
    }

    fn order_key(&mut self, dataset: &DatasetPath, destination: Site) -> OrderKey {
        if let Some(&root) = self.roots.get(dataset) {
            return OrderKey {
                root,
                rest: Vec::new(),
                destination,
            };
        }
        for a in dataset.ancestors() {
            if let Some(&root) = self.roots.get(&a) {
                let rest = dataset.components()[a.depth()..]
                    .iter()
                    .map(|f| f.value.clone())
                    .collect();
                return OrderKey {
                    root,
                    rest,
                    destination,
                };
            }
        }
        let root = self.roots.len() as u32;
        self.roots.insert(dataset.clone(), root);
        OrderKey {
            root,
            rest: Vec::new(),
            destination,
        }
    }

    fn unindex(&mut self, id: usize, status: TransferStatus, route: Route) {
        self.status_counts[status as usize] -= 1;
        let key = &self.keys[id];
        if status.is_pending() {
            if let Some(set) = self.pending.get_mut(&route.destination) {
                set.remove(key);
            }
            if let Some(set) = self.ready.get_mut(&route.destination) {
                set.remove(key);
            }
        }
        if status.is_in_flight() {
            if let Some(n) = self.in_flight.get_mut(&route) {
                *n -= 1;
            }
            self.in_flight_keys.remove(key);
        }
    }

    fn reindex(&mut self, id: usize) {
        let r = &self.rows[id];
        let key = self.keys[id].clone();
        self.status_counts[r.status as usize] += 1;
        if r.status.is_pending() {
            let dest = r.destination;
            if self.held_elsewhere(&r.dataset, dest) {
                self.ready.entry(dest).or_default().insert(key.clone());
            }
            self.pending.entry(dest).or_default().insert(key);
        } else if r.status.is_in_flight() {
            *self.in_flight.entry(r.route()).or_default() += 1;
            self.in_flight_keys.insert(key);
        } else if r.status == TransferStatus::Succeeded {
            let (site, dataset) = (r.destination, r.dataset.clone());
            let holders = self.succeeded.entry(dataset).or_default();
            if !holders.contains(&site) {
                holders.push(site);
            }
            self.mark_ready_below(id, site);
        }
    }

    /// After `site` receives row `id`'s dataset, pending rows for that
    /// dataset or anything below it elsewhere become cascade candidates.
    fn mark_ready_below(&mut self, id: usize, site: Site) {
        if site.is_hub() {
            return;
        }
        let base = &self.keys[id];
        let from = OrderKey {
            root: base.root,
            rest: base.rest.clone(),
            destination: Site::SourceHub,
        };
        let found: Vec<OrderKey> = self
            .order
            .range(from..)
            .take_while(|(k, _)| k.root == base.root && k.rest.starts_with(&base.rest))
            .filter(|(k, &i)| k.destination != site && self.rows[i].status.is_pending())
            .map(|(k, _)| k.clone())
            .collect();
        for k in found {
            self.ready.entry(k.destination).or_default().insert(k);
        }
    }

    fn held_elsewhere(&self, dataset: &DatasetPath, destination: Site) -> bool {
        Site::ALL
            .iter()
            .any(|&s| !s.is_hub() && s != destination && self.held_at(dataset, s))
    }

    pub fn get(&self, dataset: &DatasetPath, destination: Site) -> Option<&TransferRecord> {
        self.id_of(dataset, destination).map(|id| &self.rows[id])
    }

    /// Every row for `dataset`, one per destination.
    pub fn rows_for(&self, dataset: &DatasetPath) -> impl Iterator<Item = &TransferRecord> {
        self.index
            .get(dataset)
            .into_iter()
            .flat_map(|s| s.iter().flatten())
            .map(move |&id| &self.rows[id])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// All rows in catalog order, then destination.
    pub fn rows(&self) -> impl Iterator<Item = &TransferRecord> {
        self.order.values().map(move |&id| &self.rows[id])
    }

    pub fn query(&self, filter: &Filter) -> Vec<&TransferRecord> {
        if let Some(d) = &filter.dataset {
            let mut hits: Vec<(&OrderKey, &TransferRecord)> = self
                .index
                .get(d)
                .into_iter()
                .flat_map(|s| s.iter().flatten())
                .map(|&id| (&self.keys[id], &self.rows[id]))
                .filter(|(_, r)| filter.matches(r))
                .collect();
            hits.sort_by(|a, b| a.0.cmp(b.0));
            return hits.into_iter().map(|(_, r)| r).collect();
        }
        if filter.status.is_some_and(|s| s.is_pending()) {
            let dests: Vec<Site> = match filter.destination {
                Some(d) => vec![d],
                None => Site::ALL.to_vec(),
            };
            let mut keys: Vec<&OrderKey> = dests
                .iter()
                .filter_map(|d| self.pending.get(d))
                .flatten()
                .collect();
            keys.sort();
            return keys
                .into_iter()
                .map(|k| &self.rows[self.order[k]])
                .filter(|r| filter.matches(r))
                .collect();
        }
        if filter.status.is_some_and(|s| s.is_in_flight()) {
            return self.in_flight_rows().into_iter().filter(|r| filter.matches(r)).collect();
        }
        self.rows().filter(|r| filter.matches(r)).collect()
    }

    pub fn count_status(&self, s: TransferStatus) -> usize {
        self.status_counts[s as usize]
    }

    /// Rows submitted on `route` and not yet finished.
    pub fn in_flight_on(&self, route: Route) -> usize {
        self.in_flight.get(&route).copied().unwrap_or(0)
    }

    /// `NULL` and `FAILED` rows for a destination, in catalog order.
    pub fn pending_for(&self, destination: Site) -> impl Iterator<Item = &TransferRecord> {
        self.pending
            .get(&destination)
            .into_iter()
            .flat_map(|set| set.iter())
            .map(move |k| &self.rows[self.order[k]])
    }

    /// Pending rows for `destination` whose dataset no other LCF holds yet,
    /// in catalog order.
    pub fn hub_candidates(&self, destination: Site) -> impl Iterator<Item = &TransferRecord> {
        let ready = self.ready.get(&destination);
        self.pending
            .get(&destination)
            .into_iter()
            .flat_map(|set| set.iter())
            .filter(move |k| !ready.is_some_and(|r| r.contains(k)))
            .map(move |k| &self.rows[self.order[k]])
    }

    /// Pending rows for `destination` whose dataset some other LCF already
    /// holds, in catalog order.
    pub fn cascade_candidates(&self, destination: Site) -> impl Iterator<Item = &TransferRecord> {
        self.ready
            .get(&destination)
            .into_iter()
            .flat_map(|set| set.iter())
            .map(move |k| &self.rows[self.order[k]])
    }

    /// In-flight rows, in catalog order.
    pub fn in_flight_rows(&self) -> Vec<&TransferRecord> {
        self.in_flight_keys
            .iter()
            .map(|k| &self.rows[self.order[k]])
            .collect()
    }

    /// Whether `site` holds `dataset`: a row for it, or for an ancestor,
    /// SUCCEEDED there.
    pub fn held_at(&self, dataset: &DatasetPath, site: Site) -> bool {
        if self.succeeded.is_empty() {
            return false;
        }
        let holds = |p: &DatasetPath| self.succeeded.get(p).is_some_and(|v| v.contains(&site));
        holds(dataset) || dataset.ancestors().any(|a| holds(&a))
    }

    /// Rewrites the journal with one line per row and a closing marker.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let Some(w) = self.writer.as_ref() else {
            return Ok(());
        };
        let tmp = w.path.with_extension("compact");
        let mut out = String::from(HEADER);
        out.push('\n');
        let mut seq = 0;
        for r in self.rows() {
            seq += 1;
            out.push_str(&format_line('S', seq, self.now, r));
        }
        seq += 1;
        let marker_time = self.now;
        out.push_str(&with_crc(format!("C\t{seq}\t{}", marker_time.as_millis())));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(out.as_bytes())?;
            f.sync_all()?;
        }
        let path = w.path.clone();
        let durability = w.durability;
        fs::rename(&tmp, &path)?;
        let file = OpenOptions::new().append(true).read(true).open(&path)?;
        self.writer = Some(Writer {
            path,
            file,
            durability,
        });
        self.last_seq = seq;
        self.last_commit = Some((seq, marker_time));
        self.dirty = false;
        Ok(())
    }
}

/// Drops every journal line after the last step marker. Returns the marker's
/// time, or `None` when no step was ever committed (the journal is reset to
/// its header).
pub fn rollback_uncommitted(location: impl AsRef<Path>) -> Result<Option<SimTime>, StoreError> {
    let path = location.as_ref();
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read(path)?;
    // validate first; corrupt journals are not silently truncated
    let mut probe = Table::in_memory();
    let good = probe.replay(&text)? as usize;
    let text = String::from_utf8_lossy(&text[..good]);
    let mut offset = 0usize;
    let mut keep = 0usize;
    let mut marker = None;
    for raw in text.split_inclusive('\n') {
        offset += raw.len();
        if raw == format!("{HEADER}\n") {
            keep = offset;
        } else if let Ok(Entry::Commit { time, .. }) = parse_line(raw.trim_end_matches('\n')) {
            keep = offset;
            marker = Some(time);
        }
    }
    let f = OpenOptions::new().write(true).open(path)?;
    f.set_len(keep as u64)?;
    f.sync_all()?;
    Ok(marker)
}

/// Every submission recorded in a journal (rows written as `QUEUED`), in
/// journal order. Compaction discards this history.
pub fn journal_submissions(location: impl AsRef<Path>) -> Result<Vec<TransferRecord>, StoreError> {
    let path = location.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let bytes = fs::read(path)?;
    let mut probe = Table::in_memory();
    let good = probe.replay(&bytes)? as usize;
    let text = String::from_utf8_lossy(&bytes[..good]);
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| match parse_line(l) {
            Ok(Entry::Record {
                record,
                snapshot: false,
                ..
            }) if record.status == TransferStatus::Queued => Some(record),
            _ => None,
        })
        .collect())
}

fn illegal(r: &TransferRecord, from: Option<TransferStatus>) -> StoreError {
    StoreError::IllegalTransition {
        dataset: r.dataset.to_string(),
        destination: r.destination,
        from: from.map_or("(none)".to_string(), |s| s.to_string()),
        to: r.status,
    }
}

enum Entry {
    Record {
        seq: u64,
        time: SimTime,
        record: TransferRecord,
        snapshot: bool,
    },
    Commit {
        seq: u64,
        time: SimTime,
    },
}

impl Entry {
    fn seq(&self) -> u64 {
        match self {
            Entry::Record { seq, .. } | Entry::Commit { seq, .. } => *seq,
        }
    }
}

fn with_crc(body: String) -> String {
    let crc = crc32fast::hash(body.as_bytes());
    format!("{body}\t{crc:08x}\n")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("-".to_string(), |x| x.to_string())
}

fn format_record(seq: u64, time: SimTime, r: &TransferRecord) -> String {
    format_line('R', seq, time, r)
}

fn format_line(kind: char, seq: u64, time: SimTime, r: &TransferRecord) -> String {
    let facets: Vec<&str> = r.dataset.facet_names().collect();
    let body = format!(
        "{kind}\t{seq}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        time.as_millis(),
        r.dataset,
        facets.join(","),
        r.source,
        r.destination,
        opt(&r.uuid),
        opt(&r.requested.map(SimTime::as_millis)),
        opt(&r.completed.map(SimTime::as_millis)),
        r.status,
        r.directories,
        r.files,
        r.rate,
        r.faults,
        r.bytes_transferred,
        r.attempts,
        opt(&r.failure.map(FailureKind::as_str)),
        u8::from(r.missing_metadata),
    );
    with_crc(body)
}

fn parse_line(line: &str) -> Result<Entry, String> {
    let (body, crc) = line.rsplit_once('\t').ok_or("missing checksum")?;
    let want = u32::from_str_radix(crc, 16).map_err(|_| format!("bad checksum field {crc:?}"))?;
    if crc.len() != 8 || crc32fast::hash(body.as_bytes()) != want {
        return Err("checksum mismatch".into());
    }
    let f: Vec<&str> = body.split('\t').collect();
    let num = |i: usize| -> Result<u64, String> {
        f.get(i)
            .ok_or_else(|| format!("missing field {i}"))?
            .parse::<u64>()
            .map_err(|e| format!("field {i}: {e}"))
    };
    let opt_num = |i: usize| -> Result<Option<u64>, String> {
        match f.get(i) {
            Some(&"-") => Ok(None),
            Some(_) => num(i).map(Some),
            None => Err(format!("missing field {i}")),
        }
    };
    match f.first() {
        Some(&"C") if f.len() == 3 => Ok(Entry::Commit {
            seq: num(1)?,
            time: SimTime(num(2)?),
        }),
        Some(&kind @ ("R" | "S")) if f.len() == 19 => {
            let facets: Vec<&str> = f[4].split(',').collect();
            let dataset = DatasetPath::from_text_and_facets(f[3], &facets).map_err(|e| e.to_string())?;
            let record = TransferRecord {
                dataset,
                source: f[5].parse()?,
                destination: f[6].parse()?,
                uuid: (f[7] != "-").then(|| TransferId(f[7].to_string())),
                requested: opt_num(8)?.map(SimTime),
                completed: opt_num(9)?.map(SimTime),
                status: f[10].parse()?,
                directories: num(11)?,
                files: num(12)?,
                rate: f[13].parse::<f64>().map_err(|e| format!("rate: {e}"))?,
                faults: num(14)?,
                bytes_transferred: num(15)?,
                attempts: num(16)? as u32,
                failure: match f[17] {
                    "-" => None,
                    s => Some(s.parse()?),
                },
                missing_metadata: match f[18] {
                    "0" => false,
                    "1" => true,
                    s => return Err(format!("bad flag {s:?}")),
                },
            };
            Ok(Entry::Record {
                seq: num(1)?,
                time: SimTime(num(2)?),
                record,
                snapshot: kind == "S",
            })
        }
        _ => Err(format!("unrecognized entry with {} fields", f.len())),
    }
}
