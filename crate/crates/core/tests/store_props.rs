//! Journal replay and queries checked against a plain map model, including
//! truncated journals.

use std::collections::HashMap;
use std::fs;

use cascade_core::catalog::{parse_drs_path, DatasetPath, Flavor};
use cascade_core::model::{SimTime, Site, TransferId, TransferRecord, TransferStatus};
use cascade_core::store::{Durability, Filter, Table};
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SITES: [Site; 3] = [Site::SourceHub, Site::LcfA, Site::LcfB];

fn paths(n: usize) -> Vec<DatasetPath> {
    (0..n)
        .map(|i| parse_drs_path(&format!("/root/g{}/d{i}", i % 7), Flavor::Generic).unwrap())
        .collect()
}

type Model = HashMap<(DatasetPath, Site), TransferRecord>;

/// A random legal upsert sequence, together with the model after each step.
fn script(seed: u64, n: usize, n_paths: usize) -> Vec<(SimTime, TransferRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = paths(n_paths);
    let mut model: Model = HashMap::new();
    let mut out = Vec::with_capacity(n);
    let mut t = 0u64;
    let mut misses = 0;
    while out.len() < n && misses < 10_000 {
        let p = ps[rng.random_range(0..ps.len())].clone();
        let dest = [Site::LcfA, Site::LcfB][rng.random_range(0..2)];
        let key = (p.clone(), dest);
        let next = match model.get(&key) {
            None => TransferRecord::pending(p, dest),
            Some(cur) => {
                let succ: Vec<TransferStatus> = TransferStatus::ALL
                    .into_iter()
                    .filter(|&s| s != cur.status && TransferStatus::can_transition(Some(cur.status), s))
                    .collect();
                if succ.is_empty() {
                    misses += 1;
                    continue;
                }
                let mut r = cur.clone();
                r.status = succ[rng.random_range(0..succ.len())];
                r.source = SITES[rng.random_range(0..3)];
                if r.source == r.destination {
                    r.source = Site::SourceHub;
                }
                r.uuid = Some(TransferId(format!("u{}", rng.random::<u32>())));
                r.requested = Some(SimTime(t));
                r.faults = rng.random_range(0..5);
                r.rate = rng.random::<f64>() * 1e9;
                r.bytes_transferred = rng.random();
                r.attempts += u32::from(r.status == TransferStatus::Failed);
                r.missing_metadata = rng.random_bool(0.1);
                r
            }
        };
        t += rng.random_range(0..60_000);
        model.insert(key, next.clone());
        out.push((SimTime(t), next));
    }
    out
}

fn model_after(ops: &[(SimTime, TransferRecord)]) -> Model {
    let mut m = HashMap::new();
    for (_, r) in ops {
        m.insert((r.dataset.clone(), r.destination), r.clone());
    }
    m
}

fn table_as_model(t: &Table) -> Model {
    t.rows()
        .map(|r| ((r.dataset.clone(), r.destination), r.clone()))
        .collect()
}

#[test]
fn replay_of_ten_thousand_upserts_matches_model() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("journal");
    let ops = script(11, 10_000, 400);
    let mut t = Table::open_with(&j, Durability::Flush).unwrap();
    for (time, r) in &ops {
        t.set_now(*time);
        t.upsert(r.clone()).unwrap();
    }
    let live = table_as_model(&t);
    drop(t);
    let reopened = Table::open(&j).unwrap();
    let expected = model_after(&ops);
    assert_eq!(live, expected);
    assert_eq!(table_as_model(&reopened), expected);
    for s in TransferStatus::ALL {
        let n = expected.values().filter(|r| r.status == s).count();
        assert_eq!(reopened.count_status(s), n, "{s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncated_journal_reopens_to_a_prefix(seed in any::<u64>(), n in 1usize..120, cut in 0.0f64..1.0) {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("journal");
        let ops = script(seed, n, 12);
        let mut t = Table::open_with(&j, Durability::Flush).unwrap();
        for (time, r) in &ops {
            t.set_now(*time);
            t.upsert(r.clone()).unwrap();
        }
        drop(t);
        let bytes = fs::read(&j).unwrap();
        let at = (bytes.len() as f64 * cut) as usize;
        fs::write(&j, &bytes[..at]).unwrap();
        let t = Table::open(&j).unwrap();
        let k = t.last_seq() as usize;
        prop_assert!(k <= ops.len());
        // every complete line before the cut survives
        let complete = bytes[..at].iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
        prop_assert_eq!(k, complete);
        prop_assert_eq!(table_as_model(&t), model_after(&ops[..k]));
        // the file now holds exactly the valid prefix
        let kept = fs::read(&j).unwrap();
        prop_assert!(bytes.starts_with(&kept));
    }

    #[test]
    fn indexed_queries_agree_with_linear_scan(seed in any::<u64>()) {
        let ops = script(seed, 600, 40);
        let mut t = Table::in_memory();
        for (time, r) in &ops {
            t.set_now(*time);
            t.upsert(r.clone()).unwrap();
        }
        let all: Vec<TransferRecord> = t.rows().cloned().collect();
        let ps = paths(40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..500 {
            let mut f = Filter::default();
            if rng.random_bool(0.5) { f.status = Some(TransferStatus::ALL[rng.random_range(0..8)]); }
            if rng.random_bool(0.3) { f.source = Some(SITES[rng.random_range(0..3)]); }
            if rng.random_bool(0.5) { f.destination = Some(SITES[rng.random_range(0..3)]); }
            if rng.random_bool(0.2) { f.dataset = Some(ps[rng.random_range(0..ps.len())].clone()); }
            let want: Vec<&TransferRecord> = all
                .iter()
                .filter(|r| f.status.is_none_or(|s| s == r.status)
                    && f.source.is_none_or(|s| s == r.source)
                    && f.destination.is_none_or(|s| s == r.destination)
                    && f.dataset.as_ref().is_none_or(|d| *d == r.dataset))
                .collect();
            prop_assert_eq!(t.query(&f), want);
        }
        for dest in [Site::LcfA, Site::LcfB] {
            let want: Vec<&TransferRecord> = all
                .iter()
                .filter(|r| r.destination == dest && r.status.is_pending())
                .collect();
            prop_assert_eq!(t.pending_for(dest).collect::<Vec<_>>(), want);
        }
        let held = |d: &DatasetPath, site: Site| {
            all.iter().any(|r| r.destination == site && r.status == TransferStatus::Succeeded && r.dataset == *d)
        };
        for dest in [Site::LcfA, Site::LcfB] {
            let other = if dest == Site::LcfA { Site::LcfB } else { Site::LcfA };
            let want: Vec<&TransferRecord> = all
                .iter()
                .filter(|r| r.destination == dest && r.status.is_pending() && held(&r.dataset, other))
                .collect();
            prop_assert_eq!(t.cascade_candidates(dest).collect::<Vec<_>>(), want);
            let want: Vec<&TransferRecord> = all
                .iter()
                .filter(|r| r.destination == dest && r.status.is_pending() && !held(&r.dataset, other))
                .collect();
            prop_assert_eq!(t.hub_candidates(dest).collect::<Vec<_>>(), want);
        }
        let flying: Vec<&TransferRecord> = all.iter().filter(|r| r.status.is_in_flight()).collect();
        prop_assert_eq!(t.in_flight_rows(), flying);
        for src in SITES {
            for dst in SITES {
                if let Ok(route) = cascade_core::model::Route::new(src, dst) {
                    let n = all.iter().filter(|r| r.route() == route && r.status.is_in_flight()).count();
                    prop_assert_eq!(t.in_flight_on(route), n);
                }
            }
        }
    }
}
