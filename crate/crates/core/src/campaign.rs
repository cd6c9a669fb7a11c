//! A replication campaign on disk: configuration, fresh starts, resumption
//! after a crash, and the files a run leaves behind.
//!
//! Everything lives in one output directory:
//!
//! | file | content |
//! |---|---|
//! | `journal` | the tracking table (unless configured elsewhere) |
//! | `catalog.json` | the catalog being replicated, including ingested paths |
//! | `actions.jsonl` | scheduler actions, one per line |
//! | `events.jsonl` | fabric events, rewritten at the end of each invocation |
//! | `holdings.json` | files held at each destination |
//! | `report.json` or `report.html` | the dashboard snapshot |
//!
//! Resuming rolls the journal back to its last step marker, rebuilds the
//! fabric by resubmitting every journaled submission at its recorded time,
//! and continues with the step after the marker. The fabric is deterministic,
//! so the resumed run ends exactly where an uninterrupted one would.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    generate_catalog, generate_for_paths, load_path_list, Catalog, CatalogError, CatalogSpec,
    DatasetPath,
};
use crate::metrics::{build_report, emit_report, verify_replicas, Format, Report, VerificationReport, DEFAULT_RATE_WINDOW};
use crate::model::{build_plan, PlanError, SimTime, Site};
use crate::scheduler::{
    ingest_new_paths, read_action_log, run, write_action_line, Action, RunSummary, SchedulerError,
    SchedulerPolicy,
};
use crate::simnet::{
    read_event_log, write_event_log, BackendError, Clock, ConfigError, EventLogEntry, Fabric,
    FabricConfig, Holdings,
};
use crate::store::{journal_submissions, rollback_uncommitted, Durability, StoreError, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Fabric(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("malformed JSON in {}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("journal {0} already holds a run; resume it instead")]
    AlreadyStarted(PathBuf),
    #[error("cannot rebuild the fabric: {0}")]
    Replay(String),
    #[error("run interrupted after {0} actions")]
    Interrupted(u64),
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| RunError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::File {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FabricPreset {
    /// Observed capacities, no faults, no maintenance.
    #[default]
    Baseline,
    /// Observed capacities with maintenance windows and faults.
    Campaign,
}

/// A run described by a TOML file. Relative paths are resolved against the
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds the fabric. The catalog has its own seed.
    pub seed: u64,
    /// Synthetic catalog; with `path_list` it shapes the files of the listed
    /// paths instead.
    #[serde(default)]
    pub catalog: Option<CatalogSpec>,
    /// One dataset path per line.
    #[serde(default)]
    pub path_list: Option<PathBuf>,
    /// A catalog written by `gen-catalog`; takes precedence.
    #[serde(default)]
    pub catalog_file: Option<PathBuf>,
    /// Used when `fabric` is absent.
    #[serde(default)]
    pub fabric_preset: FabricPreset,
    #[serde(default)]
    pub fabric: Option<FabricConfig>,
    #[serde(default)]
    pub policy: SchedulerPolicy,
    pub out_dir: PathBuf,
    /// Defaults to `journal` inside `out_dir`.
    #[serde(default)]
    pub journal: Option<PathBuf>,
    /// Defaults to `report.json` or `report.html` inside `out_dir`.
    #[serde(default)]
    pub report_out: Option<PathBuf>,
    #[serde(default = "structured")]
    pub report_format: Format,
    /// Rate averaging window of the report, seconds.
    #[serde(default = "rate_window")]
    pub rate_window: f64,
    /// Sync the journal to disk after every write.
    #[serde(default = "yes")]
    pub sync: bool,
}

fn structured() -> Format {
    Format::Structured
}
fn rate_window() -> f64 {
    DEFAULT_RATE_WINDOW
}
fn yes() -> bool {
    true
}

impl RunConfig {
    /// A config with defaults everywhere but the catalog and output directory.
    pub fn new(catalog: CatalogSpec, out_dir: impl Into<PathBuf>) -> RunConfig {
        RunConfig {
            seed: 0,
            catalog: Some(catalog),
            path_list: None,
            catalog_file: None,
            fabric_preset: FabricPreset::Baseline,
            fabric: None,
            policy: SchedulerPolicy::default(),
            out_dir: out_dir.into(),
            journal: None,
            report_out: None,
            report_format: Format::Structured,
            rate_window: DEFAULT_RATE_WINDOW,
            sync: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, RunError> {
        let path = path.as_ref();
        let mut cfg = RunConfig::from_toml(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out_dir);
        for p in [&mut cfg.path_list, &mut cfg.catalog_file, &mut cfg.journal, &mut cfg.report_out]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.catalog.is_none() && self.catalog_file.is_none() {
            return Err(RunError::Config(
                "one of catalog or catalog_file is required".into(),
            ));
        }
        if let Some(spec) = &self.catalog {
            spec.validate()?;
        }
        if let Some(f) = &self.fabric {
            f.validate()?;
        }
        if !(self.rate_window > 0.0) {
            return Err(RunError::Config("rate_window must be positive".into()));
        }
        self.policy.validate()?;
        Ok(())
    }

    pub fn journal_path(&self) -> PathBuf {
        self.journal.clone().unwrap_or_else(|| self.out_dir.join("journal"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.report_out.clone().unwrap_or_else(|| {
            self.out_dir.join(match self.report_format {
                Format::Structured => "report.json",
                Format::Html => "report.html",
            })
        })
    }

    pub fn layout(&self) -> Layout {
        Layout {
            dir: self.out_dir.clone(),
        }
    }

    /// The fabric configuration with the run's seed applied.
    pub fn fabric_config(&self) -> FabricConfig {
        let mut f = self.fabric.clone().unwrap_or_else(|| match self.fabric_preset {
            FabricPreset::Baseline => FabricConfig::baseline(),
            FabricPreset::Campaign => FabricConfig::campaign(),
        });
        f.seed = self.seed;
        f
    }

    /// Builds the catalog this config describes.
    pub fn build_catalog(&self) -> Result<Catalog, RunError> {
        if let Some(file) = &self.catalog_file {
            return Ok(Catalog::from_json(&read(file)?)?);
        }
        let spec = self
            .catalog
            .as_ref()
            .ok_or_else(|| RunError::Config("no catalog".into()))?;
        match &self.path_list {
            Some(list) => {
                let scheme = spec.scheme();
                let paths = load_path_list(&read(list)?, &scheme)?;
                Ok(generate_for_paths(spec, scheme, &paths)?)
            }
            None => Ok(generate_catalog(spec)?),
        }
    }

    fn durability(&self) -> Durability {
        if self.sync {
            Durability::Sync
        } else {
            Durability::Flush
        }
    }
}

/// File names inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dir: PathBuf,
}

impl Layout {
    pub fn catalog(&self) -> PathBuf {
        self.dir.join("catalog.json")
    }
    pub fn actions(&self) -> PathBuf {
        self.dir.join("actions.jsonl")
    }
    pub fn events(&self) -> PathBuf {
        self.dir.join("events.jsonl")
    }
    pub fn holdings(&self) -> PathBuf {
        self.dir.join("holdings.json")
    }

    pub fn load_catalog(&self) -> Result<Catalog, RunError> {
        Ok(Catalog::from_json(&read(&self.catalog())?)?)
    }

    pub fn load_events(&self) -> Result<Vec<EventLogEntry>, RunError> {
        let path = self.events();
        read_event_log(&read(&path)?).map_err(|source| RunError::Json { path, source })
    }

    pub fn load_holdings(&self) -> Result<BTreeMap<Site, Holdings>, RunError> {
        let path = self.holdings();
        serde_json::from_str(&read(&path)?).map_err(|source| RunError::Json { path, source })
    }
}

/// When an invocation stops early.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Limits {
    /// No step later than this.
    pub until: Option<SimTime>,
    /// Abort as if killed once the action log holds this many lines, leaving
    /// the current step's journal writes uncommitted.
    pub crash_at_action: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: RunSummary,
    /// Present when the run terminated.
    pub verification: Option<VerificationReport>,
    pub report: Report,
}

impl Outcome {
    /// 0 on a clean finish or partial run, 2 when any row was given up on.
    pub fn exit_code(&self) -> i32 {
        if self.summary.permanent_failed > 0 {
            2
        } else {
            0
        }
    }
}

/// Starts a new run. Fails if the journal already holds a committed step.
pub fn start(cfg: &RunConfig, limits: Limits) -> Result<Outcome, RunError> {
    let layout = cfg.layout();
    fs::create_dir_all(&layout.dir)?;
    let journal = cfg.journal_path();
    if rollback_uncommitted(&journal)?.is_some() {
        return Err(RunError::AlreadyStarted(journal));
    }
    if journal.exists() {
        fs::remove_file(&journal)?;
    }
    let catalog = Arc::new(cfg.build_catalog()?);
    write(&layout.catalog(), &catalog.to_json())?;
    let mut table = Table::open_with(&journal, cfg.durability())?;
    // committed together with the first step
    table.insert_all(build_plan(&catalog, &cfg.policy.destinations)?)?;
    let fabric = Fabric::new(cfg.fabric_config(), catalog.clone())?;
    let actions = File::create(layout.actions())?;
    info!("starting run with {} paths", catalog.len());
    drive(cfg, catalog, table, fabric, actions, 0, limits)
}

/// Continues a run from its last committed step, or starts it if no step was
/// ever committed.
pub fn resume(cfg: &RunConfig, limits: Limits) -> Result<Outcome, RunError> {
    let layout = cfg.layout();
    let journal = cfg.journal_path();
    let Some(committed) = rollback_uncommitted(&journal)? else {
        return start(cfg, limits);
    };
    let catalog = Arc::new(if layout.catalog().exists() {
        layout.load_catalog()?
    } else {
        cfg.build_catalog()?
    });
    let mut fabric = Fabric::new(cfg.fabric_config(), catalog.clone())?;
    let subs = journal_submissions(&journal)?;
    for r in &subs {
        let at = r.requested.ok_or_else(|| RunError::Replay(format!("{} has no request time", r.dataset)))?;
        if at > committed {
            return Err(RunError::Replay(format!("{} submitted after the last commit", r.dataset)));
        }
        // same-time submissions were made back to back, with no event processing between them
        if at > fabric.now() {
            fabric.advance(at);
        }
        let id = fabric.submit(r.route(), &r.dataset)?;
        if Some(&id) != r.uuid.as_ref() {
            return Err(RunError::Replay(format!(
                "{} was {:?} in the journal but {id} on replay",
                r.dataset, r.uuid
            )));
        }
    }
    let table = Table::open_with(&journal, cfg.durability())?;
    // the TERMINATE line is written before its step commits, and ingest may
    // have added rows since
    let settled = table.rows().all(|r| r.status.is_terminal());
    if let Some(done) = terminated_at(&layout)?.filter(|&t| t <= committed && settled) {
        // nothing left to do; rebuild the outputs as they were
        fabric.advance(done);
        let summary = RunSummary::from_table(&table, SimTime::ZERO, done, 0, true);
        return finish(cfg, &catalog, &table, &fabric, summary);
    }
    fabric.advance(committed);
    fabric.sleep_until(committed + cfg.policy.poll())?;

    // drop actions of the steps that are about to be redone
    let kept: Vec<String> = match fs::read_to_string(layout.actions()) {
        Ok(text) => text
            .lines()
            .filter(|l| {
                read_action_log(l).is_ok_and(|v| v.iter().all(|a| a.time <= committed))
            })
            .map(|l| format!("{l}\n"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut actions = File::create(layout.actions())?;
    actions.write_all(kept.concat().as_bytes())?;
    actions.sync_data()?;
    info!(
        "resuming at {committed} after replaying {} submissions",
        subs.len()
    );
    drive(cfg, catalog, table, fabric, actions, kept.len() as u64, limits)
}

/// Time of the run's TERMINATE action, if it got that far.
fn terminated_at(layout: &Layout) -> Result<Option<SimTime>, RunError> {
    let text = match fs::read_to_string(layout.actions()) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    Ok(text
        .lines()
        .last()
        .and_then(|l| read_action_log(l).ok())
        .and_then(|v| v.into_iter().last())
        .filter(|a| a.action == Action::Terminate)
        .map(|a| a.time))
}

fn drive(
    cfg: &RunConfig,
    catalog: Arc<Catalog>,
    mut table: Table,
    mut fabric: Fabric,
    mut actions: File,
    logged: u64,
    limits: Limits,
) -> Result<Outcome, RunError> {
    let mut count = logged;
    let mut crashed = false;
    let result = run(
        &mut table,
        &mut fabric,
        &catalog,
        &cfg.policy,
        limits.until,
        &mut |t, a| {
            if limits.crash_at_action.is_some_and(|c| count >= c) {
                crashed = true;
                return Err(std::io::Error::other("simulated crash"));
            }
            actions.write_all(write_action_line(t, a).as_bytes())?;
            count += 1;
            Ok(())
        },
    );
    if crashed {
        return Err(RunError::Interrupted(count));
    }
    let summary = result?;
    actions.sync_data()?;
    finish(cfg, &catalog, &table, &fabric, summary)
}

fn finish(
    cfg: &RunConfig,
    catalog: &Catalog,
    table: &Table,
    fabric: &Fabric,
    summary: RunSummary,
) -> Result<Outcome, RunError> {
    let layout = cfg.layout();
    let events = fabric.log_snapshot();
    write(&layout.events(), &write_event_log(&events))?;
    let holdings: BTreeMap<Site, Holdings> = [Site::LcfA, Site::LcfB]
        .into_iter()
        .map(|s| (s, fabric.holdings(s).clone()))
        .collect();
    write(
        &layout.holdings(),
        &serde_json::to_string(&holdings).expect("holdings serialize"),
    )?;
    let report = build_report(catalog, table, &events, fabric.now(), cfg.rate_window);
    write(&cfg.report_path(), &emit_report(&report, cfg.report_format))?;
    let verification = summary.terminated.then(|| {
        verify_replicas(catalog, &holdings[&Site::LcfA], &holdings[&Site::LcfB])
    });
    Ok(Outcome {
        summary,
        verification,
        report,
    })
}

/// Adds the listed paths to a run's catalog and table. Returns the number of
/// rows added; a following resume replicates them.
pub fn ingest(cfg: &RunConfig, path_list: &str) -> Result<usize, RunError> {
    let layout = cfg.layout();
    let mut catalog = layout.load_catalog()?;
    let scheme = catalog.scheme().clone();
    let paths: Vec<DatasetPath> = load_path_list(path_list, &scheme)?;
    let fresh: Vec<DatasetPath> = paths.iter().filter(|p| !catalog.contains(p)).cloned().collect();
    if !fresh.is_empty() {
        let spec = cfg.catalog.clone().unwrap_or_else(|| CatalogSpec::new(fresh.len(), cfg.seed));
        catalog.extend(generate_for_paths(&spec, scheme, &fresh)?)?;
        write(&layout.catalog(), &catalog.to_json())?;
    }
    let journal = cfg.journal_path();
    rollback_uncommitted(&journal)?;
    let mut table = Table::open_with(&journal, cfg.durability())?;
    let added = ingest_new_paths(&mut table, &paths, &cfg.policy.destinations)?;
    table.commit()?;
    Ok(added)
}

/// Rebuilds the report from a run's files.
pub fn report_from_files(cfg: &RunConfig, format: Format) -> Result<String, RunError> {
    let layout = cfg.layout();
    let catalog = layout.load_catalog()?;
    let events = layout.load_events()?;
    let table = Table::open(cfg.journal_path())?;
    let time = events.last().map_or(table.now(), |e| e.time.max(table.now()));
    let report = build_report(&catalog, &table, &events, time, cfg.rate_window);
    Ok(emit_report(&report, format))
}

/// Compares the two destinations' holdings recorded in a run's files.
pub fn verify_files(layout: &Layout) -> Result<VerificationReport, RunError> {
    let catalog = layout.load_catalog()?;
    let h = layout.load_holdings()?;
    let empty = Holdings::default();
    Ok(verify_replicas(
        &catalog,
        h.get(&Site::LcfA).unwrap_or(&empty),
        h.get(&Site::LcfB).unwrap_or(&empty),
    ))
}
