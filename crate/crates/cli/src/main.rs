//! `cascade`: command-line driver for replication campaigns on the simulated
//! fabric.
//!
//! Configuration and I/O errors exit with 1. A run that gave up on some
//! transfer exits with 2, as does `verify` when it finds a mismatch.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cascade_core::campaign::{self, Limits, Outcome, RunConfig, RunError};
use cascade_core::catalog::{generate_catalog, CatalogSpec};
use cascade_core::metrics::Format;
use cascade_core::model::SimTime;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascading replication of DRS datasets across three sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic catalog from a TOML catalog spec.
    GenCatalog {
        /// Catalog spec in TOML.
        spec: PathBuf,
        /// Where to write the catalog JSON.
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Start a run, or continue it if its journal already has progress.
    Run(RunArgs),
    /// Continue an interrupted run from its journal.
    Resume(RunArgs),
    /// Rebuild the report of a run from its journal and logs.
    Report {
        #[command(flatten)]
        common: Common,
        /// Write here instead of standard output.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Defaults to the config's report_format.
        #[arg(long)]
        format: Option<Format>,
    },
    /// Compare the replicas held at the two destinations.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Add datasets listed one per line to a run; `resume` replicates them.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// File with one dataset path per line.
        path_list: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Run config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the journal location (default: <out_dir>/journal).
    #[arg(long)]
    journal: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the config's fabric seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the report location (default: <out_dir>/report.json or .html).
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Report format: structured or html.
    #[arg(long)]
    format: Option<Format>,
    /// Stop after the last step at or before this simulated time, in seconds.
    #[arg(long)]
    until: Option<f64>,
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(j) = &common.journal {
        cfg.journal = Some(j.clone());
    }
    Ok(cfg)
}

fn load_run(args: &RunArgs) -> Result<(RunConfig, Limits)> {
    let mut cfg = load(&args.common)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(p) = &args.report_out {
        cfg.report_out = Some(p.clone());
    }
    if let Some(f) = args.format {
        cfg.report_format = f;
    }
    let until = match args.until {
        Some(t) if !(t >= 0.0 && t.is_finite()) => anyhow::bail!("--until must be a non-negative number of seconds"),
        t => t.map(SimTime::from_secs_f64),
    };
    Ok((
        cfg,
        Limits {
            until,
            ..Limits::default()
        },
    ))
}

fn print_outcome(cfg: &RunConfig, o: &Outcome) {
    let s = &o.summary;
    println!("terminated={}", s.terminated);
    println!("sim_time={:.0}", s.finished.as_secs_f64());
    println!("elapsed_days={:.3}", s.elapsed().as_secs_f64() / 86_400.0);
    println!("steps={}", s.steps);
    println!("succeeded={}", s.succeeded);
    println!("permanent_failed={}", s.permanent_failed);
    println!("faults={} max={} transfers_with_faults={}", s.faults_total, s.faults_max, s.transfers_with_faults);
    for r in &s.routes {
        println!("route {} transfers={} bytes={}", r.route, r.transfers, r.bytes);
    }
    if let Some(v) = &o.verification {
        println!("verified paths={} mismatches={}", v.paths_checked, v.mismatches.len());
    }
    println!("report={}", cfg.report_path().display());
}

/// Writes to standard output, treating a closed pipe as success.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn gen_catalog(spec: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let mut spec = CatalogSpec::from_toml(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let catalog = generate_catalog(&spec)?;
    fs::write(out, catalog.to_json()).with_context(|| format!("writing {}", out.display()))?;
    let t = catalog.totals();
    println!("paths={}", catalog.len());
    println!("dirs={}", t.directories);
    println!("files={}", t.files);
    println!("bytes={}", t.bytes);
    Ok(())
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::GenCatalog { spec, out, seed } => {
            gen_catalog(&spec, &out, seed)?;
            Ok(0)
        }
        Command::Run(args) => {
            let (cfg, limits) = load_run(&args)?;
            let outcome = match campaign::start(&cfg, limits) {
                Err(RunError::AlreadyStarted(_)) => {
                    eprintln!("journal has progress; resuming");
                    campaign::resume(&cfg, limits)?
                }
                r => r?,
            };
            print_outcome(&cfg, &outcome);
            Ok(outcome.exit_code() as u8)
        }
        Command::Resume(args) => {
            let (cfg, limits) = load_run(&args)?;
            let outcome = campaign::resume(&cfg, limits)?;
            print_outcome(&cfg, &outcome);
            Ok(outcome.exit_code() as u8)
        }
        Command::Report {
            common,
            report_out,
            format,
        } => {
            let cfg = load(&common)?;
            let doc = campaign::report_from_files(&cfg, format.unwrap_or(cfg.report_format))?;
            match report_out {
                Some(p) => fs::write(&p, doc).with_context(|| format!("writing {}", p.display()))?,
                None => print_stdout(&doc)?,
            }
            Ok(0)
        }
        Command::Verify { common } => {
            let cfg = load(&common)?;
            let v = campaign::verify_files(&cfg.layout())?;
            for m in &v.mismatches {
                println!("mismatch {} {}: {}", m.path, m.file, m.detail);
            }
            println!("paths={}", v.paths_checked);
            println!("mismatches={}", v.mismatches.len());
            Ok(if v.is_clean() { 0 } else { 2 })
        }
        Command::Ingest { common, path_list } => {
            let cfg = load(&common)?;
            let text = fs::read_to_string(&path_list)
                .with_context(|| format!("reading {}", path_list.display()))?;
            println!("added={}", campaign::ingest(&cfg, &text)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
