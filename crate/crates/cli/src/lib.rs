//! Scenario runner for the `geophase` command-line tool.
//!
//! A TOML scenario names a model, its parameters and an optional sweep.
//! [`execute`] validates it, evaluates every point (in parallel, results in
//! sweep order) and writes the requested tables.

pub mod config;
pub mod evaluate;
pub mod report;

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use config::{ConfigError, Output, Scenario};
use evaluate::{evaluate, PointResult};
use report::{CommandKind, RunReport};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug)]
pub struct Options {
    pub out: PathBuf,
    pub format: Format,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
    pub seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Numerical { point: String, source: geophase::Error },
    Io(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical { .. } => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Numerical { point, source } => write!(f, "numerical failure at {point}: {source}"),
            CliError::Io(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

/// Outcome of a successful run.
pub struct Completed {
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

/// Evaluates every point; on failure reports the first failing point in
/// sweep order, independent of thread scheduling.
pub fn evaluate_all(scenario: &Scenario, threads: Option<usize>, seed: u64) -> Result<Vec<PointResult>, CliError> {
    let work = || -> Vec<geophase::Result<PointResult>> {
        scenario
            .points
            .par_iter()
            .map(|p| evaluate(scenario, p, seed))
            .collect()
    };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("cannot start worker threads")
            .map_err(CliError::Io)?
            .install(work),
        None => work(),
    };
    results
        .into_iter()
        .zip(&scenario.points)
        .map(|(r, p)| {
            r.map_err(|source| CliError::Numerical {
                point: p.label(),
                source,
            })
        })
        .collect()
}

fn write_file(
    dir: &Path,
    name: &str,
    files: &mut Vec<PathBuf>,
    f: impl FnOnce(BufWriter<File>) -> anyhow::Result<()>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map_err(anyhow::Error::from)
        .and_then(|file| f(BufWriter::new(file)))
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Io)?;
    files.push(path);
    Ok(())
}

pub fn write_outputs(scenario: &Scenario, report: &RunReport, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(&opts.out)
        .with_context(|| format!("cannot create {}", opts.out.display()))
        .map_err(CliError::Io)?;
    let mut files = Vec::new();
    let dir = opts.out.as_path();
    if opts.format == Format::Json {
        write_file(dir, "report.json", &mut files, |mut w| {
            serde_json::to_writer_pretty(&mut w, report)?;
            std::io::Write::write_all(&mut w, b"\n")?;
            Ok(())
        })?;
        return Ok(files);
    }
    let compare = report.command == CommandKind::Compare || scenario.wants(Output::Comparison);
    if report.command == CommandKind::Run && (scenario.wants(Output::SweepTable) || scenario.wants(Output::Spread)) {
        write_file(dir, "points.csv", &mut files, |w| Ok(report::write_points(report, w)?))?;
    }
    if report.command == CommandKind::Run && scenario.wants(Output::Atoms) {
        write_file(dir, "atoms.csv", &mut files, |w| Ok(report::write_atoms(report, w)?))?;
    }
    if report.command == CommandKind::Run && scenario.wants(Output::Moments) {
        write_file(dir, "moments.csv", &mut files, |w| {
            Ok(report::write_moments(report, w)?)
        })?;
    }
    if compare {
        write_file(dir, "comparison.csv", &mut files, |w| {
            Ok(report::write_comparison(report, w)?)
        })?;
    }
    if report.command == CommandKind::Run && scenario.redecomposition.is_some() {
        write_file(dir, "redecompositions.csv", &mut files, |w| {
            Ok(report::write_redecompositions(report, w)?)
        })?;
    }
    Ok(files)
}

pub fn execute(config_path: &Path, command: CommandKind, opts: &Options) -> Result<Completed, CliError> {
    let scenario = config::load(config_path)?;
    if command == CommandKind::Compare && !scenario.model.supports_comparison() {
        return Err(CliError::Config(ConfigError {
            path: scenario.path.clone(),
            location: scenario.model_location,
            message: format!(
                "model {} has no exact evaluation; compare needs spontaneous_emission, phase_damping or custom_joint",
                scenario.model.name()
            ),
        }));
    }
    log::info!(
        "{}: {} point(s) of model {}",
        scenario.path,
        scenario.points.len(),
        scenario.model.name()
    );
    let results = evaluate_all(&scenario, opts.threads, opts.seed)?;
    let report = report::build(&scenario, &results, command, opts.seed);
    let files = write_outputs(&scenario, &report, opts)?;
    Ok(Completed { report, files })
}
