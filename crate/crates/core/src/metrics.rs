//! Analyses over the event log and the tracking table.
//!
//! Rates are reported in units of 2^30 B/s, written GB/s.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, EntryDiff};
use crate::model::{Route, SimTime, Site, TransferStatus};
use crate::simnet::{EventKind, EventLogEntry, Holdings};
use crate::store::Table;

pub const GB: f64 = 1_073_741_824.0;

/// Default averaging window of [`instantaneous_rate`], seconds.
pub const DEFAULT_RATE_WINDOW: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub label: String,
    /// Strictly increasing in time.
    pub points: Vec<(SimTime, f64)>,
}

impl TimeSeries {
    /// Value of the last point at or before `t`, or zero.
    pub fn value_at(&self, t: SimTime) -> f64 {
        match self.points.partition_point(|p| p.0 <= t) {
            0 => 0.0,
            i => self.points[i - 1].1,
        }
    }

    pub fn last(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// Payload bytes delivered to `destination` over time, one point per
/// completion instant.
pub fn cumulative_bytes(log: &[EventLogEntry], destination: Site) -> TimeSeries {
    let mut points: Vec<(SimTime, f64)> = Vec::new();
    let mut total = 0u64;
    for e in log {
        if e.kind != EventKind::Succeed || e.route.destination != destination {
            continue;
        }
        total += e.payload.bytes.unwrap_or(0);
        match points.last_mut() {
            Some(last) if last.0 == e.time => last.1 = total as f64,
            _ => points.push((e.time, total as f64)),
        }
    }
    TimeSeries {
        label: format!("cumulative bytes at {destination}"),
        points,
    }
}

/// Mean rate on `route` over consecutive windows of `window` seconds, in B/s.
///
/// The point at `t` covers `(t - window, t]`. Points run from the first
/// window end to the one containing the last logged event, so an idle route
/// yields zeros over the same span as a busy one.
pub fn instantaneous_rate(log: &[EventLogEntry], route: Route, window: f64) -> TimeSeries {
    assert!(window > 0.0, "window must be positive");
    let label = format!("rate {route}");
    let w = SimTime::from_secs_f64(window).as_millis().max(1);
    let Some(end) = log.iter().map(|e| e.time.as_millis()).max() else {
        return TimeSeries {
            label,
            points: Vec::new(),
        };
    };
    let n = (end / w + 1) as usize;
    let mut bins = vec![0.0f64; n];
    for e in log {
        if e.kind != EventKind::BytesProgress || e.route != route {
            continue;
        }
        let bytes = e.payload.bytes.unwrap_or(0) as f64;
        let to = e.time.as_millis();
        let from = e.payload.since.map_or(to, SimTime::as_millis);
        if to <= from {
            // bin k holds (k*w, (k+1)*w]
            bins[(to.saturating_sub(1) / w) as usize] += bytes;
            continue;
        }
        let span = (to - from) as f64;
        let mut k = from / w;
        while k * w < to {
            let lo = from.max(k * w);
            let hi = to.min((k + 1) * w);
            if hi > lo {
                bins[k as usize] += bytes * (hi - lo) as f64 / span;
            }
            k += 1;
        }
    }
    let secs = w as f64 / 1000.0;
    TimeSeries {
        label,
        points: bins
            .into_iter()
            .enumerate()
            .map(|(k, b)| (SimTime((k as u64 + 1) * w), b / secs))
            .collect(),
    }
}

/// Rows that count as completed transfers: succeeded or given up on.
fn completed_rows(table: &Table) -> impl Iterator<Item = &crate::model::TransferRecord> {
    table.rows().filter(|r| {
        matches!(
            r.status,
            TransferStatus::Succeeded | TransferStatus::PermanentFailed
        )
    })
}

/// Faults per transfer over completed rows with metadata: count to number
/// of transfers.
pub fn fault_histogram(table: &Table) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for r in completed_rows(table).filter(|r| !r.missing_metadata) {
        *h.entry(r.faults).or_insert(0) += 1;
    }
    h
}

/// Mean of a histogram produced by [`fault_histogram`].
pub fn histogram_mean(h: &BTreeMap<u64, u64>) -> f64 {
    let n: u64 = h.values().sum();
    if n == 0 {
        return 0.0;
    }
    h.iter().map(|(k, v)| k * v).sum::<u64>() as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStats {
    pub route: Route,
    /// Mean lifetime rate of the route's transfers, GB/s.
    pub mean_rate: f64,
    /// The same, in B/s.
    pub mean_rate_bps: f64,
    pub transfers: u64,
    pub missing_metadata: u64,
    pub faults_mean: f64,
    pub faults_max: u64,
    /// Bytes moved on the route per the event log, retransmissions included.
    pub bytes_moved: u64,
}

/// Per-route statistics over succeeded rows, grouped by the route that
/// delivered them. Rows without metadata are counted but contribute neither
/// rate nor faults.
pub fn route_summary(table: &Table, log: &[EventLogEntry]) -> Vec<RouteStats> {
    struct Acc {
        transfers: u64,
        missing: u64,
        rate_sum: f64,
        faults: u64,
        faults_max: u64,
    }
    let mut acc: BTreeMap<Route, Acc> = BTreeMap::new();
    for r in table.rows().filter(|r| r.status == TransferStatus::Succeeded) {
        let a = acc.entry(r.route()).or_insert(Acc {
            transfers: 0,
            missing: 0,
            rate_sum: 0.0,
            faults: 0,
            faults_max: 0,
        });
        a.transfers += 1;
        if r.missing_metadata {
            a.missing += 1;
        } else {
            a.rate_sum += r.rate;
            a.faults += r.faults;
            a.faults_max = a.faults_max.max(r.faults);
        }
    }
    let mut moved: HashMap<Route, u64> = HashMap::new();
    for e in log.iter().filter(|e| e.kind == EventKind::BytesProgress) {
        *moved.entry(e.route).or_default() += e.payload.bytes.unwrap_or(0);
    }
    acc.into_iter()
        .map(|(route, a)| {
            let with_meta = a.transfers - a.missing;
            let per = |x: f64| if with_meta == 0 { 0.0 } else { x / with_meta as f64 };
            RouteStats {
                route,
                mean_rate: per(a.rate_sum) / GB,
                mean_rate_bps: per(a.rate_sum),
                transfers: a.transfers,
                missing_metadata: a.missing,
                faults_mean: per(a.faults as f64),
                faults_max: a.faults_max,
                bytes_moved: moved.get(&route).copied().unwrap_or(0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub path: String,
    /// Relative path of the first differing file.
    pub file: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub paths_checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn describe(diff: &EntryDiff<'_>, left: &str, right: &str) -> (String, String) {
    match diff {
        EntryDiff::Missing(e) => (e.rel_path.clone(), format!("missing at {right}")),
        EntryDiff::Unexpected(e) => (e.rel_path.clone(), format!("missing at {left}")),
        EntryDiff::Differs { expected, found } => (
            expected.rel_path.clone(),
            format!(
                "{left} has size {} checksum {:016x}, {right} has size {} checksum {:016x}",
                expected.size, expected.checksum, found.size, found.checksum
            ),
        ),
    }
}

/// Compares the two replicas of every catalog path with each other, then with
/// the catalog. At most one mismatch is reported per path.
pub fn verify_replicas(catalog: &Catalog, a: &Holdings, b: &Holdings) -> VerificationReport {
    let mut report = VerificationReport::default();
    for p in catalog.paths() {
        report.paths_checked += 1;
        let ma = a.manifest_for(p);
        let mb = b.manifest_for(p);
        let found = match ma.first_difference(&mb) {
            Some(d) => Some(describe(&d, "LCF_A", "LCF_B")),
            None => {
                let source = catalog.manifest(p).expect("catalog path has a manifest");
                source
                    .first_difference(&ma)
                    .map(|d| describe(&d, "source", "both replicas"))
            }
        };
        if let Some((file, detail)) = found {
            report.mismatches.push(Mismatch {
                path: p.to_string(),
                file,
                detail,
            });
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InFlight {
    pub dataset: String,
    pub route: Route,
    pub status: TransferStatus,
    pub requested: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completed {
    pub dataset: String,
    pub route: Route,
    pub completed: Option<SimTime>,
    pub bytes: u64,
    /// GB/s.
    pub rate: f64,
    pub faults: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationProgress {
    pub site: Site,
    pub completed_bytes: u64,
    pub completed_paths: u64,
    /// Completed bytes over the catalog total.
    pub fraction: f64,
    pub remaining_bytes: u64,
    /// Current rate into the site over the last window, GB/s.
    pub current_rate: f64,
    pub active: Vec<InFlight>,
    pub recent: Vec<Completed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultStats {
    pub transfers: u64,
    pub mean: f64,
    pub max: u64,
    pub with_any_fault: u64,
    pub histogram: BTreeMap<u64, u64>,
}

/// Everything the dashboard shows. The structured format is this struct as
/// JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub time: SimTime,
    pub total_paths: u64,
    pub total_bytes: u64,
    pub status_counts: BTreeMap<String, u64>,
    pub destinations: Vec<DestinationProgress>,
    pub routes: Vec<RouteStats>,
    pub faults: FaultStats,
    pub cumulative: Vec<TimeSeries>,
    pub rates: Vec<TimeSeries>,
}

/// How many recently completed transfers each destination lists.
const RECENT: usize = 10;

/// Snapshot of a run at `time`. Only log entries up to `time` are used.
pub fn build_report(
    catalog: &Catalog,
    table: &Table,
    log: &[EventLogEntry],
    time: SimTime,
    window: f64,
) -> Report {
    let log = &log[..log.partition_point(|e| e.time <= time)];
    let totals = catalog.totals();
    let mut status_counts = BTreeMap::new();
    for s in TransferStatus::ALL {
        status_counts.insert(s.as_str().to_string(), table.count_status(s) as u64);
    }
    let routes_all: Vec<Route> = Site::ALL
        .iter()
        .flat_map(|&s| Site::ALL.iter().filter_map(move |&d| Route::new(s, d).ok()))
        .filter(|r| !r.destination.is_hub())
        .collect();
    let all_rates: Vec<(Route, TimeSeries)> = routes_all
        .iter()
        .map(|&r| (r, instantaneous_rate(log, r, window)))
        .collect();
    let destinations = [Site::LcfA, Site::LcfB]
        .into_iter()
        .map(|site| {
            let done: Vec<_> = table
                .rows()
                .filter(|r| r.destination == site && r.status == TransferStatus::Succeeded)
                .collect();
            let completed_bytes: u64 = done.iter().map(|r| r.bytes_transferred).sum();
            let mut recent: Vec<Completed> = done
                .iter()
                .map(|r| Completed {
                    dataset: r.dataset.to_string(),
                    route: r.route(),
                    completed: r.completed,
                    bytes: r.bytes_transferred,
                    rate: r.rate / GB,
                    faults: r.faults,
                })
                .collect();
            recent.sort_by(|a, b| b.completed.cmp(&a.completed).then_with(|| a.dataset.cmp(&b.dataset)));
            recent.truncate(RECENT);
            let current_rate = all_rates
                .iter()
                .filter(|(r, _)| r.destination == site)
                .map(|(_, s)| s.last().unwrap_or(0.0))
                .sum::<f64>()
                / GB;
            DestinationProgress {
                site,
                completed_bytes,
                completed_paths: done.len() as u64,
                fraction: if totals.bytes == 0 {
                    0.0
                } else {
                    completed_bytes as f64 / totals.bytes as f64
                },
                remaining_bytes: totals.bytes.saturating_sub(completed_bytes),
                current_rate,
                active: table
                    .in_flight_rows()
                    .into_iter()
                    .filter(|r| r.destination == site)
                    .map(|r| InFlight {
                        dataset: r.dataset.to_string(),
                        route: r.route(),
                        status: r.status,
                        requested: r.requested,
                    })
                    .collect(),
                recent,
            }
        })
        .collect();
    let histogram = fault_histogram(table);
    let faults = FaultStats {
        transfers: histogram.values().sum(),
        mean: histogram_mean(&histogram),
        max: histogram.keys().next_back().copied().unwrap_or(0),
        with_any_fault: histogram.iter().filter(|(k, _)| **k > 0).map(|(_, v)| v).sum(),
        histogram,
    };
    Report {
        time,
        total_paths: catalog.len() as u64,
        total_bytes: totals.bytes,
        status_counts,
        destinations,
        routes: route_summary(table, log),
        faults,
        cumulative: [Site::LcfA, Site::LcfB]
            .into_iter()
            .map(|d| cumulative_bytes(log, d))
            .collect(),
        // idle routes are left out
        rates: all_rates
            .into_iter()
            .map(|(_, s)| s)
            .filter(|s| s.points.iter().any(|p| p.1 > 0.0))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Structured,
    Html,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" | "json" => Ok(Format::Structured),
            "html" => Ok(Format::Html),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub fn emit_report(report: &Report, format: Format) -> String {
    match format {
        Format::Structured => serde_json::to_string_pretty(report).expect("report serializes"),
        Format::Html => render_html(report),
    }
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// A table cell whose machine-readable value mirrors the structured report.
fn cell(out: &mut String, field: &str, value: impl std::fmt::Display, shown: &str) {
    let _ = write!(
        out,
        "<td data-field=\"{}\" data-value=\"{}\">{}</td>",
        esc(field),
        esc(&value.to_string()),
        esc(shown)
    );
}

fn days(t: SimTime) -> String {
    format!("{:.2} d", t.as_secs_f64() / 86_400.0)
}

fn svg_chart(out: &mut String, title: &str, series: &[TimeSeries], unit: f64) {
    let (w, h) = (640.0, 200.0);
    let t_max = series
        .iter()
        .filter_map(|s| s.points.last())
        .map(|p| p.0.as_secs_f64())
        .fold(0.0, f64::max)
        .max(1.0);
    let v_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1 / unit))
        .fold(0.0, f64::max)
        .max(1e-12);
    let _ = write!(
        out,
        "<figure><figcaption>{}</figcaption><svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        esc(title)
    );
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|p| {
                format!(
                    "{:.1},{:.1}",
                    p.0.as_secs_f64() / t_max * w,
                    h - p.1 / unit / v_max * (h - 10.0)
                )
            })
            .collect();
        let _ = write!(
            out,
            "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"><title>{}</title></polyline>",
            COLORS[i % COLORS.len()],
            pts.join(" "),
            esc(&s.label)
        );
    }
    let _ = write!(out, "</svg></figure>");
}

fn render_html(r: &Report) -> String {
    let mut o = String::new();
    o.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Replication dashboard</title>");
    o.push_str("<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin:1em 0}td,th{border:1px solid #bbb;padding:2px 8px;text-align:right}</style></head><body>\n");
    let _ = writeln!(o, "<h1>Replication dashboard at {}</h1>", esc(&days(r.time)));

    o.push_str("<table id=\"totals\"><tr><th>paths</th><th>bytes</th></tr><tr>");
    cell(&mut o, "total_paths", r.total_paths, &r.total_paths.to_string());
    cell(&mut o, "total_bytes", r.total_bytes, &format!("{:.3} TB", r.total_bytes as f64 / 1e12));
    o.push_str("</tr></table>\n");

    o.push_str("<table id=\"destinations\"><tr><th>site</th><th>completed</th><th>paths</th><th>fraction</th><th>remaining</th><th>rate GB/s</th><th>active</th></tr>\n");
    for (i, d) in r.destinations.iter().enumerate() {
        let f = |k: &str| format!("destinations.{i}.{k}");
        let _ = write!(o, "<tr><th>{}</th>", d.site);
        cell(&mut o, &f("completed_bytes"), d.completed_bytes, &format!("{:.3} TB", d.completed_bytes as f64 / 1e12));
        cell(&mut o, &f("completed_paths"), d.completed_paths, &d.completed_paths.to_string());
        cell(&mut o, &f("fraction"), d.fraction, &format!("{:.1}%", d.fraction * 100.0));
        cell(&mut o, &f("remaining_bytes"), d.remaining_bytes, &format!("{:.3} TB", d.remaining_bytes as f64 / 1e12));
        cell(&mut o, &f("current_rate"), d.current_rate, &format!("{:.3}", d.current_rate));
        cell(&mut o, &f("active"), d.active.len(), &d.active.len().to_string());
        o.push_str("</tr>\n");
    }
    o.push_str("</table>\n");

    o.push_str("<table id=\"routes\"><tr><th>route</th><th>GB/s</th><th>transfers</th><th>missing</th><th>faults mean</th><th>faults max</th></tr>\n");
    for (i, s) in r.routes.iter().enumerate() {
        let f = |k: &str| format!("routes.{i}.{k}");
        let _ = write!(o, "<tr><th>{}</th>", esc(&s.route.to_string()));
        cell(&mut o, &f("mean_rate"), s.mean_rate, &format!("{:.3}", s.mean_rate));
        cell(&mut o, &f("transfers"), s.transfers, &s.transfers.to_string());
        cell(&mut o, &f("missing_metadata"), s.missing_metadata, &s.missing_metadata.to_string());
        cell(&mut o, &f("faults_mean"), s.faults_mean, &format!("{:.2}", s.faults_mean));
        cell(&mut o, &f("faults_max"), s.faults_max, &s.faults_max.to_string());
        o.push_str("</tr>\n");
    }
    o.push_str("</table>\n");

    o.push_str("<table id=\"faults\"><tr><th>transfers</th><th>mean</th><th>max</th><th>any fault</th></tr><tr>");
    cell(&mut o, "faults.transfers", r.faults.transfers, &r.faults.transfers.to_string());
    cell(&mut o, "faults.mean", r.faults.mean, &format!("{:.3}", r.faults.mean));
    cell(&mut o, "faults.max", r.faults.max, &r.faults.max.to_string());
    cell(&mut o, "faults.with_any_fault", r.faults.with_any_fault, &r.faults.with_any_fault.to_string());
    o.push_str("</tr></table>\n<table id=\"histogram\"><tr><th>faults</th><th>transfers</th></tr>\n");
    for (k, v) in &r.faults.histogram {
        let _ = write!(o, "<tr><th>{k}</th>");
        cell(&mut o, &format!("faults.histogram.{k}"), v, &v.to_string());
        o.push_str("</tr>\n");
    }
    o.push_str("</table>\n");

    svg_chart(&mut o, "Cumulative bytes received (TB)", &r.cumulative, 1e12);
    svg_chart(&mut o, "Instantaneous transfer rates (GB/s)", &r.rates, GB);

    for d in &r.destinations {
        let _ = write!(o, "<h2>{}: in flight</h2><ul>", d.site);
        for a in &d.active {
            let _ = write!(o, "<li>{} {} {}</li>", esc(&a.dataset), esc(&a.route.to_string()), a.status);
        }
        let _ = write!(o, "</ul><h2>{}: recently completed</h2><ul>", d.site);
        for c in &d.recent {
            let _ = write!(
                o,
                "<li>{} via {} at {} ({:.3} GB/s, {} faults)</li>",
                esc(&c.dataset),
                esc(&c.route.to_string()),
                c.completed.map(days).unwrap_or_default(),
                c.rate,
                c.faults
            );
        }
        o.push_str("</ul>\n");
    }
    o.push_str("</body></html>\n");
    o
}
