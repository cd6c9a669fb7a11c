use std::collections::HashMap;
use std::sync::Arc;

use cascade_core::catalog::{generate_catalog, Catalog, CatalogSpec, CountDist, SizeDist};
use cascade_core::model::{Route, SimTime, Site, TransferId, TransferStatus};
use cascade_core::simnet::{
    BackendError, EventKind, EventLogEntry, Fabric, FabricConfig, FaultModel, RouteCap, Window, GIB,
};
use proptest::prelude::*;

const CMIP6_TOTAL: u64 = 8_182_644_448_359_330;

fn small_catalog(n: usize, seed: u64) -> Arc<Catalog> {
    let mut spec = CatalogSpec::new(n, seed);
    spec.files_per_path = CountDist::Uniform { min: 2, max: 12 };
    spec.file_size = SizeDist::Uniform {
        min: 1 << 20,
        max: 64 << 20,
    };
    Arc::new(generate_catalog(&spec).unwrap())
}

fn route(a: Site, b: Site) -> Route {
    Route::new(a, b).unwrap()
}

#[test]
fn maintenance_on_destination_delays_by_window_length() {
    let c = small_catalog(1, 4);
    let path = c.paths().next().unwrap().clone();
    let bytes = c.manifest(&path).unwrap().bytes;
    // pick a rate so the transfer needs 15 s alone
    let rate = bytes as f64 / 15.0;
    let run = |window: bool| {
        let mut f = Fabric::new(FabricConfig::uniform(rate), c.clone()).unwrap();
        if window {
            f.set_maintenance(Site::LcfA, &[Window::new(10.0, 20.0)]).unwrap();
        }
        let id = f.submit(route(Site::SourceHub, Site::LcfA), &path).unwrap();
        let log = f.advance(SimTime::from_secs(100));
        (f.poll(&id).unwrap().completed.unwrap(), log)
    };
    let (plain, _) = run(false);
    let (delayed, log) = run(true);
    assert_eq!(plain, SimTime(15_000));
    assert_eq!(delayed, SimTime(25_000));
    let paused: Vec<&EventLogEntry> = log.iter().filter(|e| e.kind == EventKind::Pause).collect();
    assert_eq!(paused.len(), 1);
    assert_eq!(paused[0].time, SimTime(10_000));
    for e in log.iter().filter(|e| e.kind == EventKind::BytesProgress) {
        let since = e.payload.since.unwrap();
        assert!(e.time <= SimTime(10_000) || since >= SimTime(20_000), "{e:?}");
    }
}

#[test]
fn endpoint_paused_outside_windows_is_false() {
    let mut f = Fabric::new(FabricConfig::uniform(GIB), small_catalog(1, 1)).unwrap();
    f.set_maintenance(Site::LcfB, &[Window::new(5.0, 6.0)]).unwrap();
    assert!(!f.endpoint_paused_at(Site::LcfB, SimTime(4_999)));
    assert!(f.endpoint_paused_at(Site::LcfB, SimTime(5_000)));
    assert!(!f.endpoint_paused_at(Site::LcfB, SimTime(6_000)));
    assert!(!f.endpoint_paused_at(Site::LcfA, SimTime(5_500)));
    assert!(f.set_maintenance(Site::LcfA, &[Window::new(3.0, 2.0)]).is_err());
}

#[test]
fn cmip6_total_through_hub_egress_respects_lower_bound() {
    let mut spec = CatalogSpec::new(2291, 2022);
    spec.total_bytes = Some(CMIP6_TOTAL);
    let c = Arc::new(generate_catalog(&spec).unwrap());
    assert_eq!(c.totals().bytes, CMIP6_TOTAL);
    let mut config = FabricConfig::uniform(1e18);
    config.site_mut(Site::SourceHub).egress_cap = 1.5 * GIB;
    let mut f = Fabric::new(config, c.clone()).unwrap();
    let ids: Vec<TransferId> = c
        .paths()
        .map(|p| f.submit(route(Site::SourceHub, Site::LcfA), p).unwrap())
        .collect();
    f.advance(SimTime::from_secs(6_000_000));
    let done = ids
        .iter()
        .map(|id| f.poll(id).unwrap().completed.unwrap())
        .max()
        .unwrap();
    let bound = CMIP6_TOTAL as f64 / (1.5 * GIB);
    assert!(done.as_secs_f64() >= 5.08e6, "{done}");
    assert!(done.as_secs_f64() >= bound - 1e-3);
    // all transfers share the hub equally, so the fluid optimum is met to rounding
    assert!(done.as_secs_f64() <= bound + 2291.0 * 0.002);
}

#[test]
fn lifetime_rate_matches_event_log() {
    let c = small_catalog(6, 9);
    let mut config = FabricConfig::uniform(200e6);
    config.site_mut(Site::SourceHub).scan_cost = 50.0;
    config.faults = FaultModel {
        transient_delay: 3.0,
        ..FaultModel::default()
    };
    config.seed = 5;
    let mut f = Fabric::new(config, c.clone()).unwrap();
    let ids: Vec<TransferId> = c
        .paths()
        .map(|p| f.submit(route(Site::SourceHub, Site::LcfB), p).unwrap())
        .collect();
    f.advance(SimTime::from_secs(10_000));
    let log = f.log();
    for id in &ids {
        let r = f.poll(id).unwrap();
        assert_eq!(r.status, TransferStatus::Succeeded);
        let start = log
            .iter()
            .find(|e| &e.uuid == id && e.kind == EventKind::ScanStart)
            .unwrap()
            .time;
        let end = log
            .iter()
            .find(|e| &e.uuid == id && e.kind == EventKind::Succeed)
            .unwrap()
            .time;
        let moved: u64 = log
            .iter()
            .filter(|e| &e.uuid == id && e.kind == EventKind::BytesProgress)
            .map(|e| e.payload.bytes.unwrap())
            .sum();
        assert_eq!(moved, r.bytes_transferred);
        let want = r.bytes_transferred as f64 / end.saturating_sub(start).as_secs_f64();
        assert!((r.rate - want).abs() <= 1e-9 * want, "{} vs {want}", r.rate);
    }
}

#[test]
fn duplicate_submission_leaves_one_copy() {
    let c = small_catalog(2, 3);
    let path = c.paths().next().unwrap().clone();
    let mut f = Fabric::new(FabricConfig::uniform(GIB), c.clone()).unwrap();
    let a = f.submit(route(Site::SourceHub, Site::LcfA), &path).unwrap();
    let b = f.submit(route(Site::SourceHub, Site::LcfA), &path).unwrap();
    assert_ne!(a, b);
    f.advance(SimTime::from_secs(3600));
    for id in [&a, &b] {
        assert_eq!(f.poll(id).unwrap().status, TransferStatus::Succeeded);
    }
    let want = c.manifest(&path).unwrap();
    assert_eq!(f.manifest_at(Site::LcfA, &path).unwrap(), want);
    assert_eq!(f.holdings(Site::LcfA).file_count() as u64, want.files);
}

#[test]
fn poll_errors_and_initial_state() {
    let c = small_catalog(1, 2);
    let path = c.paths().next().unwrap().clone();
    let mut f = Fabric::new(FabricConfig::uniform(GIB), c).unwrap();
    assert!(matches!(
        f.poll(&TransferId("nope".into())),
        Err(BackendError::UnknownTransfer(_))
    ));
    let id = f.submit(route(Site::SourceHub, Site::LcfB), &path).unwrap();
    let r = f.poll(&id).unwrap();
    assert!(matches!(r.status, TransferStatus::Queued | TransferStatus::Active));
    assert_eq!(r.bytes_transferred, 0);
}

#[test]
fn scan_over_entry_cap_fails_with_oom() {
    let c = small_catalog(1, 8);
    let path = c.paths().next().unwrap().clone();
    let entries = c.manifest(&path).unwrap().scan_entries();
    let mut config = FabricConfig::uniform(GIB);
    let hub = config.site_mut(Site::SourceHub);
    hub.scan_cost = 1000.0;
    hub.scan_entry_cap = entries - 1;
    let mut f = Fabric::new(config, c).unwrap();
    let id = f.submit(route(Site::SourceHub, Site::LcfA), &path).unwrap();
    f.advance(SimTime::from_secs(100_000));
    let r = f.poll(&id).unwrap();
    assert_eq!(r.status, TransferStatus::Failed);
    assert_eq!(r.failure, Some(cascade_core::model::FailureKind::ScanOom));
    // fails once `cap` entries have been scanned
    assert_eq!(r.completed, Some(SimTime::from_secs(entries - 1)));
    assert!(f.log().iter().any(|e| e.kind == EventKind::ScanOom));
}

#[test]
fn persistent_failure_clears_after_autofix() {
    let c = small_catalog(1, 8);
    let path = c.paths().next().unwrap().clone();
    let mut config = FabricConfig::uniform(GIB);
    config.faults = FaultModel {
        persistent_fail_prob: 1.0,
        persistent_autofix_after: 100.0,
        ..FaultModel::none()
    };
    let mut f = Fabric::new(config, c).unwrap();
    let hub_a = route(Site::SourceHub, Site::LcfA);
    let first = f.submit(hub_a, &path).unwrap();
    f.advance(SimTime::from_secs(50));
    assert_eq!(f.poll(&first).unwrap().status, TransferStatus::Failed);
    let second = f.submit(hub_a, &path).unwrap();
    f.advance(SimTime::from_secs(99));
    assert_eq!(f.poll(&second).unwrap().status, TransferStatus::Failed);
    f.advance(SimTime::from_secs(101));
    let third = f.submit(hub_a, &path).unwrap();
    f.advance(SimTime::from_secs(1000));
    assert_eq!(f.poll(&third).unwrap().status, TransferStatus::Succeeded);
}

#[test]
fn unverified_corruption_is_stored() {
    let c = small_catalog(1, 8);
    let path = c.paths().next().unwrap().clone();
    let mut config = FabricConfig::uniform(GIB);
    config.faults = FaultModel {
        file_corruption_prob: 1.0,
        ..FaultModel::none()
    };
    config.integrity_check = false;
    let mut f = Fabric::new(config.clone(), c.clone()).unwrap();
    f.submit(route(Site::SourceHub, Site::LcfA), &path).unwrap();
    f.advance(SimTime::from_secs(1000));
    assert_ne!(f.manifest_at(Site::LcfA, &path).unwrap(), c.manifest(&path).unwrap());

    config.integrity_check = true;
    let mut f = Fabric::new(config, c.clone()).unwrap();
    let id = f.submit(route(Site::SourceHub, Site::LcfA), &path).unwrap();
    f.advance(SimTime::from_secs(1000));
    let m = c.manifest(&path).unwrap();
    assert_eq!(f.manifest_at(Site::LcfA, &path).unwrap(), m);
    let r = f.poll(&id).unwrap();
    assert_eq!(r.faults, m.files);
    assert_eq!(r.bytes_transferred, 2 * m.bytes);
}

/// A random workload: hub submissions, then cascades of whatever arrived.
#[derive(Debug, Clone)]
struct Workload {
    seed: u64,
    n_paths: usize,
    per_transfer: Option<f64>,
    windows: Vec<(usize, f64, f64)>,
    corruption: f64,
}

fn workload() -> impl Strategy<Value = Workload> {
    (
        any::<u64>(),
        2usize..10,
        prop::option::of(20e6f64..200e6),
        prop::collection::vec((1usize..3, 0.0f64..40.0, 1.0f64..20.0), 0..3),
        prop_oneof![Just(0.0), Just(0.01), Just(0.2)],
    )
        .prop_map(|(seed, n_paths, per_transfer, raw, corruption)| {
            let mut windows: Vec<(usize, f64, f64)> = Vec::new();
            for (s, start, len) in raw {
                if windows.iter().all(|w| w.0 != s) {
                    windows.push((s, start, start + len));
                }
            }
            Workload {
                seed,
                n_paths,
                per_transfer,
                windows,
                corruption,
            }
        })
}

fn simulate(w: &Workload) -> (Fabric, Vec<TransferId>) {
    let c = small_catalog(w.n_paths, w.seed);
    let mut config = FabricConfig::uniform(400e6);
    config.seed = w.seed;
    config.site_mut(Site::SourceHub).egress_cap = 150e6;
    config.site_mut(Site::SourceHub).scan_cost = 20.0;
    config.faults = FaultModel {
        transient_delay: 2.0,
        file_corruption_prob: w.corruption,
        ..FaultModel::default()
    };
    if let Some(p) = w.per_transfer {
        config.set_route_cap(RouteCap {
            source: Site::LcfA,
            destination: Site::LcfB,
            cap: 300e6,
            per_transfer_cap: Some(p),
        });
    }
    for &(s, a, b) in &w.windows {
        let site = [Site::SourceHub, Site::LcfA, Site::LcfB][s];
        config.site_mut(site).maintenance = vec![Window::new(a, b)];
    }
    let mut f = Fabric::new(config, c.clone()).unwrap();
    let mut ids = Vec::new();
    let paths: Vec<_> = c.paths().cloned().collect();
    for (i, p) in paths.iter().enumerate() {
        let dest = if i % 2 == 0 { Site::LcfA } else { Site::LcfB };
        ids.push(f.submit(route(Site::SourceHub, dest), p).unwrap());
        f.advance(f.now() + SimTime(700));
    }
    let mut pending: Vec<usize> = (0..paths.len()).collect();
    let mut t = f.now();
    while !pending.is_empty() && t < SimTime::from_secs(100_000) {
        t = t + SimTime::from_secs(1);
        f.advance(t);
        pending.retain(|&i| {
            let r = f.poll(&ids[i]).unwrap();
            if r.status != TransferStatus::Succeeded {
                return true;
            }
            let (src, dst) = if i % 2 == 0 {
                (Site::LcfA, Site::LcfB)
            } else {
                (Site::LcfB, Site::LcfA)
            };
            ids.push(f.submit(route(src, dst), &paths[i]).unwrap());
            false
        });
    }
    f.advance(SimTime::from_secs(200_000));
    (f, ids)
}

fn caps(f: &Fabric, r: Route) -> (f64, f64, f64, f64) {
    let c = f.config();
    let rc = c.route_cap(r);
    (
        c.site(r.source).egress_cap,
        c.site(r.destination).ingress_cap,
        rc.map_or(f64::INFINITY, |x| x.cap),
        rc.and_then(|x| x.per_transfer_cap).unwrap_or(f64::INFINITY),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn fabric_invariants(w in workload()) {
        let (f, ids) = simulate(&w);
        let log = f.log();

        // times are non-decreasing
        prop_assert!(log.windows(2).all(|p| p[0].time <= p[1].time));

        // capacity: at every segment boundary the concurrent rates fit the caps
        let segs: Vec<(SimTime, SimTime, Route, f64)> = log
            .iter()
            .filter(|e| e.kind == EventKind::BytesProgress)
            .map(|e| (e.payload.since.unwrap(), e.time, e.route, e.payload.rate.unwrap()))
            .collect();
        for &(t, _, _, _) in &segs {
            let live: Vec<&(SimTime, SimTime, Route, f64)> =
                segs.iter().filter(|s| s.0 <= t && t < s.1).collect();
            for site in [Site::SourceHub, Site::LcfA, Site::LcfB] {
                let out: f64 = live.iter().filter(|s| s.2.source == site).map(|s| s.3).sum();
                let inn: f64 = live.iter().filter(|s| s.2.destination == site).map(|s| s.3).sum();
                let cfg = f.config().site(site);
                prop_assert!(out <= cfg.egress_cap * (1.0 + 1e-9));
                prop_assert!(inn <= cfg.ingress_cap * (1.0 + 1e-9));
            }
            for s in &live {
                let (_, _, rcap, per) = caps(&f, s.2);
                let on_route: f64 = live.iter().filter(|o| o.2 == s.2).map(|o| o.3).sum();
                prop_assert!(on_route <= rcap * (1.0 + 1e-9));
                prop_assert!(s.3 <= per * (1.0 + 1e-9));
            }
        }

        // pause correctness: no segment overlaps a window on either endpoint
        for &(since, end, r, _) in &segs {
            for site in [r.source, r.destination] {
                for &(ws, we) in f.windows(site) {
                    prop_assert!(end <= ws || since >= we, "segment {since}..{end} overlaps {ws}..{we}");
                }
            }
        }

        // conservation: every delivered path matches the catalog despite corruption
        for id in &ids {
            let r = f.poll(id).unwrap();
            prop_assert_eq!(r.status, TransferStatus::Succeeded);
        }
        for p in f.catalog().paths() {
            let want = f.catalog().manifest(p).unwrap();
            prop_assert_eq!(f.manifest_at(Site::LcfA, p).unwrap(), want.clone());
            prop_assert_eq!(f.manifest_at(Site::LcfB, p).unwrap(), want);
        }

        // determinism
        let (again, _) = simulate(&w);
        prop_assert_eq!(again.log(), log);
    }

    #[test]
    fn poll_counters_are_monotone(w in workload()) {
        let c = small_catalog(w.n_paths, w.seed);
        let mut config = FabricConfig::uniform(100e6);
        config.seed = w.seed;
        config.site_mut(Site::SourceHub).scan_cost = 30.0;
        config.faults = FaultModel { transient_delay: 1.5, file_corruption_prob: w.corruption, ..FaultModel::default() };
        let mut f = Fabric::new(config, c.clone()).unwrap();
        let ids: Vec<TransferId> = c
            .paths()
            .map(|p| f.submit(route(Site::SourceHub, Site::LcfA), p).unwrap())
            .collect();
        let mut last: HashMap<TransferId, (u64, u64, u64, u64)> = HashMap::new();
        let mut t = SimTime::ZERO;
        for _ in 0..400 {
            t = t + SimTime(250);
            f.advance(t);
            for id in &ids {
                let r = f.poll(id).unwrap();
                let now = (r.bytes_transferred, r.files, r.directories, r.faults);
                if let Some(prev) = last.get(id) {
                    prop_assert!(now.0 >= prev.0 && now.1 >= prev.1 && now.2 >= prev.2 && now.3 >= prev.3);
                }
                last.insert(id.clone(), now);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn advance_chunking_does_not_change_the_log(w in workload(), cuts in prop::collection::vec(1u64..5_000_000, 1..40)) {
        let c = small_catalog(w.n_paths, w.seed);
        let mut config = FabricConfig::uniform(77e6);
        config.seed = w.seed;
        config.site_mut(Site::SourceHub).scan_cost = 13.0;
        config.faults = FaultModel { transient_delay: 1.7, file_corruption_prob: w.corruption, ..FaultModel::default() };
        for &(s, a, b) in &w.windows {
            config.site_mut([Site::SourceHub, Site::LcfA, Site::LcfB][s]).maintenance = vec![Window::new(a, b)];
        }
        let fresh = || {
            let mut f = Fabric::new(config.clone(), c.clone()).unwrap();
            for (i, p) in c.paths().enumerate() {
                let d = if i % 3 == 0 { Site::LcfB } else { Site::LcfA };
                f.submit(route(Site::SourceHub, d), p).unwrap();
            }
            f
        };
        let end = SimTime::from_secs(50_000);
        let mut whole = fresh();
        whole.advance(end);
        let mut pieces = fresh();
        let mut ts: Vec<u64> = cuts.clone();
        ts.sort();
        for t in ts {
            pieces.advance(SimTime(t));
        }
        pieces.advance(end);
        prop_assert_eq!(whole.log(), pieces.log());
    }
}
