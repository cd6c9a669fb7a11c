//! The control loop driving the simulated fabric end to end.

use std::collections::HashMap;
use std::sync::Arc;

use cascade_core::catalog::{generate_catalog, Catalog, CatalogSpec, CountDist, DatasetPath, SizeDist};
use cascade_core::model::{build_plan, Route, SimTime, Site, TransferId, TransferStatus};
use cascade_core::scheduler::{ingest_new_paths, run, Action, RunSummary, SchedulerPolicy};
use cascade_core::simnet::{
    BackendError, Clock, EventKind, Fabric, FabricConfig, FaultModel, TransferBackend,
    TransferStatusReport, Window, GIB,
};
use cascade_core::store::Table;
use proptest::prelude::*;

fn catalog(n: usize, seed: u64) -> Arc<Catalog> {
    let mut spec = CatalogSpec::new(n, seed);
    spec.files_per_path = CountDist::Uniform { min: 2, max: 8 };
    spec.file_size = SizeDist::Fixed { bytes: 64 << 20 };
    Arc::new(generate_catalog(&spec).unwrap())
}

fn config(seed: u64) -> FabricConfig {
    let mut c = FabricConfig::uniform(GIB);
    c.seed = seed;
    for s in Site::ALL {
        c.site_mut(s).scan_cost = 50.0;
    }
    c
}

struct Run {
    table: Table,
    fabric: Fabric,
    actions: Vec<(SimTime, Action)>,
    summary: RunSummary,
}

fn drive(cat: Arc<Catalog>, cfg: FabricConfig, policy: &SchedulerPolicy) -> Run {
    let mut table = Table::in_memory();
    table
        .insert_all(build_plan(&cat, &policy.destinations).unwrap())
        .unwrap();
    let mut fabric = Fabric::new(cfg, cat.clone()).unwrap();
    let mut actions = Vec::new();
    let summary = run(
        &mut table,
        &mut fabric,
        &cat,
        policy,
        Some(SimTime::from_secs(30 * 86_400)),
        &mut |t, a| {
            actions.push((t, a.clone()));
            Ok(())
        },
    )
    .unwrap();
    Run {
        table,
        fabric,
        actions,
        summary,
    }
}

fn assert_replicated(r: &Run, cat: &Catalog) {
    assert!(r.summary.terminated);
    for p in cat.paths() {
        let want = cat.manifest(p).unwrap();
        for d in [Site::LcfA, Site::LcfB] {
            let got = r.fabric.holdings(d).manifest_for(p);
            assert_eq!(got, want, "{p} at {d}");
        }
    }
}

/// Hub-sourced SUCCEED events per dataset, read from the event log.
fn hub_successes(r: &Run) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for e in r.fabric.log() {
        if e.kind == EventKind::Succeed && e.route.source == Site::SourceHub {
            *m.entry(e.payload.path.clone().unwrap()).or_default() += 1;
        }
    }
    m
}

#[test]
fn replicates_everything_once_from_the_hub() {
    let cat = catalog(20, 1);
    let mut cfg = config(1);
    cfg.site_mut(Site::LcfA).maintenance = vec![Window::new(5.0, 40.0)];
    let r = drive(cat.clone(), cfg, &SchedulerPolicy::default());
    assert_replicated(&r, &cat);
    assert_eq!(r.table.count_status(TransferStatus::Succeeded), 40);
    let hub = hub_successes(&r);
    assert_eq!(hub.len(), 20);
    assert!(hub.values().all(|&n| n == 1), "{hub:?}");
    // the maintenance window forces some hub copies to B
    let to_b = r
        .summary
        .routes
        .iter()
        .find(|t| t.route.source == Site::SourceHub && t.route.destination == Site::LcfB);
    assert!(to_b.is_some_and(|t| t.transfers > 0));
    let total: usize = r.summary.routes.iter().map(|t| t.transfers).sum();
    assert_eq!(total, r.summary.succeeded);
}

#[test]
fn secondary_hub_submissions_only_while_primary_paused() {
    let cat = catalog(30, 2);
    let mut cfg = config(2);
    cfg.site_mut(Site::LcfA).maintenance = vec![Window::new(10.0, 30.0), Window::new(60.0, 90.0)];
    cfg.site_mut(Site::LcfB).maintenance = vec![Window::new(20.0, 25.0)];
    let r = drive(cat.clone(), cfg, &SchedulerPolicy::default());
    assert_replicated(&r, &cat);
    let mut seen = 0;
    for (t, a) in &r.actions {
        if let Action::Submit { route, .. } = a {
            assert!(!r.fabric.endpoint_paused_at(route.source, *t), "{route} at {t}");
            assert!(!r.fabric.endpoint_paused_at(route.destination, *t), "{route} at {t}");
            if route.source == Site::SourceHub && route.destination == Site::LcfB {
                seen += 1;
                assert!(r.fabric.endpoint_paused_at(Site::LcfA, *t), "hub to B at {t}");
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn scan_oom_splits_and_children_complete() {
    let mut spec = CatalogSpec::new(1, 5);
    spec.files_per_path = CountDist::Fixed { value: 20 };
    spec.members_per_path = CountDist::Fixed { value: 2 };
    spec.file_size = SizeDist::Fixed { bytes: 1 << 20 };
    let cat = Arc::new(generate_catalog(&spec).unwrap());
    let parent = cat.paths().next().unwrap().clone();
    let entries = cat.manifest(&parent).unwrap().scan_entries();
    let mut cfg = config(5);
    cfg.site_mut(Site::SourceHub).scan_entry_cap = entries / 2 + 1;
    let r = drive(cat.clone(), cfg, &SchedulerPolicy::default());
    assert_replicated(&r, &cat);
    let splits: Vec<&Vec<DatasetPath>> = r
        .actions
        .iter()
        .filter_map(|(_, a)| match a {
            Action::Split { path, children } if *path == parent => Some(children),
            _ => None,
        })
        .collect();
    assert_eq!(splits.len(), 1);
    assert_eq!(splits[0].len(), 2);
    // children may split again; the delivered rows tile the parent
    let cap = entries / 2 + 1;
    let want = cat.manifest(&parent).unwrap();
    for d in [Site::LcfA, Site::LcfB] {
        let mut union: Vec<_> = Vec::new();
        for row in r.table.rows().filter(|x| x.destination == d && x.status == TransferStatus::Succeeded) {
            let m = cat.manifest(&row.dataset).unwrap();
            assert!(m.scan_entries() <= cap);
            let rel = parent.relative_of(&row.dataset).unwrap();
            union.extend(m.entries.into_iter().map(|mut e| {
                e.rel_path = format!("{rel}/{}", e.rel_path);
                e
            }));
        }
        union.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
        assert_eq!(union, want.entries, "at {d}");
    }
    assert_eq!(r.table.get(&parent, Site::LcfA).unwrap().status, TransferStatus::Split);
    assert_eq!(r.summary.permanent_failed, 0);
}

#[test]
fn zero_retry_budget_gives_up_with_alert() {
    let cat = catalog(3, 6);
    let mut cfg = config(6);
    cfg.faults = FaultModel {
        persistent_fail_prob: 1.0,
        persistent_autofix_after: 1e9,
        ..FaultModel::none()
    };
    let policy = SchedulerPolicy {
        retry_limit: 0,
        ..SchedulerPolicy::default()
    };
    let r = drive(cat, cfg, &policy);
    assert!(r.summary.terminated);
    assert_eq!(r.summary.permanent_failed, 6);
    let alerts = r.actions.iter().filter(|(_, a)| matches!(a, Action::Alert { .. })).count();
    assert_eq!(alerts, 6);
}

#[test]
fn ingest_then_run_replicates_new_paths() {
    let cat = catalog(4, 8);
    let policy = SchedulerPolicy::default();
    let mut r = drive(cat.clone(), config(8), &policy);
    assert_replicated(&r, &cat);

    let bigger = catalog(9, 8);
    let mut merged = (*cat).clone();
    let added_paths = merged.extend((*bigger).clone()).unwrap();
    assert!(added_paths > 0);
    let merged = Arc::new(merged);
    let new: Vec<DatasetPath> = merged.paths().filter(|p| !cat.contains(p)).cloned().collect();
    assert_eq!(ingest_new_paths(&mut r.table, &new, &policy.destinations).unwrap(), 2 * new.len());

    let mut fabric = Fabric::new(config(8), merged.clone()).unwrap();
    for s in [Site::LcfA, Site::LcfB] {
        fabric.restore_holdings(s, r.fabric.holdings(s).clone());
    }
    let summary = run(&mut r.table, &mut fabric, &merged, &policy, None, &mut |_, _| Ok(())).unwrap();
    assert!(summary.terminated);
    for p in merged.paths() {
        for d in [Site::LcfA, Site::LcfB] {
            assert_eq!(fabric.holdings(d).manifest_for(p), merged.manifest(p).unwrap());
        }
    }
}

/// Refuses every third call.
struct Flaky {
    inner: Fabric,
    calls: u64,
    refused: u64,
}

impl Flaky {
    fn gate(&mut self) -> Result<(), BackendError> {
        self.calls += 1;
        if self.calls % 3 == 0 {
            self.refused += 1;
            return Err(BackendError::Unavailable("maintenance of the api".into()));
        }
        Ok(())
    }
}

impl TransferBackend for Flaky {
    fn now(&self) -> SimTime {
        TransferBackend::now(&self.inner)
    }
    fn submit(&mut self, route: Route, path: &DatasetPath) -> Result<TransferId, BackendError> {
        self.gate()?;
        self.inner.submit(route, path)
    }
    fn poll(&mut self, id: &TransferId) -> Result<TransferStatusReport, BackendError> {
        self.gate()?;
        self.inner.poll(id)
    }
    fn endpoint_paused(&self, site: Site) -> bool {
        self.inner.endpoint_paused(site)
    }
}

impl Clock for Flaky {
    fn now(&self) -> SimTime {
        Clock::now(&self.inner)
    }
    fn sleep_until(&mut self, t: SimTime) -> Result<(), BackendError> {
        self.inner.sleep_until(t)
    }
}

#[test]
fn unavailable_backend_skips_steps_without_damage() {
    let cat = catalog(10, 9);
    let dir = tempfile::tempdir().unwrap();
    let journal = dir.path().join("journal");
    let mut table = Table::open(&journal).unwrap();
    table
        .insert_all(build_plan(&cat, &[Site::LcfA, Site::LcfB]).unwrap())
        .unwrap();
    let mut flaky = Flaky {
        inner: Fabric::new(config(9), cat.clone()).unwrap(),
        calls: 0,
        refused: 0,
    };
    let policy = SchedulerPolicy::default();
    let summary = run(&mut table, &mut flaky, &cat, &policy, None, &mut |_, _| Ok(())).unwrap();
    assert!(summary.terminated);
    assert!(flaky.refused > 0);
    assert_eq!(table.count_status(TransferStatus::Succeeded), 20);
    let reopened = Table::open(&journal).unwrap();
    assert_eq!(
        reopened.rows().cloned().collect::<Vec<_>>(),
        table.rows().cloned().collect::<Vec<_>>()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loop_invariants_hold(
        seed in 0u64..1000,
        n in 3usize..12,
        limit in 1usize..4,
        win in prop::collection::vec((0.0f64..200.0, 1.0f64..60.0, 0usize..3), 0..4),
    ) {
        let cat = catalog(n, seed);
        let mut cfg = config(seed);
        cfg.faults = FaultModel { file_corruption_prob: 0.05, ..FaultModel::default() };
        cfg.faults.transient_delay = 5.0;
        for (i, site) in Site::ALL.iter().enumerate() {
            let mut ws: Vec<Window> = Vec::new();
            let mut at = 0.0;
            for &(gap, len, s) in &win {
                if s == i {
                    ws.push(Window::new(at + gap, at + gap + len));
                    at += gap + len;
                }
            }
            cfg.site_mut(*site).maintenance = ws;
        }
        let policy = SchedulerPolicy { per_route_active_limit: limit, ..SchedulerPolicy::default() };
        let r = drive(cat.clone(), cfg, &policy);
        // liveness and bireplication
        assert_replicated(&r, &cat);
        // single hub egress per dataset
        prop_assert!(hub_successes(&r).values().all(|&c| c == 1));
        // capacity: in-flight per route never exceeds the limit, replayed from the log
        let mut flying: HashMap<Route, usize> = HashMap::new();
        let mut route_of: HashMap<TransferId, Route> = HashMap::new();
        for e in r.fabric.log() {
            match e.kind {
                EventKind::Submit => {
                    route_of.insert(e.uuid.clone(), e.route);
                    let c = flying.entry(e.route).or_default();
                    *c += 1;
                    prop_assert!(*c <= limit, "{} over limit at {}", e.route, e.time);
                }
                EventKind::Succeed | EventKind::Fail => {
                    *flying.get_mut(&route_of[&e.uuid]).unwrap() -= 1;
                }
                _ => {}
            }
        }
        // no submission into a paused endpoint
        for (t, a) in &r.actions {
            if let Action::Submit { route, .. } = a {
                prop_assert!(!r.fabric.endpoint_paused_at(route.source, *t));
                prop_assert!(!r.fabric.endpoint_paused_at(route.destination, *t));
            }
        }
        // summary agrees with the table
        let bytes: u64 = r.summary.routes.iter().map(|t| t.bytes).sum();
        let table_bytes: u64 = r.table.rows()
            .filter(|x| x.status == TransferStatus::Succeeded)
            .map(|x| x.bytes_transferred)
            .sum();
        prop_assert_eq!(bytes, table_bytes);
        prop_assert_eq!(table_bytes, 2 * cat.totals().bytes);
    }
}
