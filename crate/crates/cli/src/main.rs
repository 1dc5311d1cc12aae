use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use geophase_cli::config::SCHEMA_VERSION;
use geophase_cli::report::{CommandKind, RunReport};
use geophase_cli::{execute, Format, Options};

#[derive(Parser)]
#[command(name = "geophase", about = "Geometric-phase distributions for open quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file (TOML, schema 1)
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = "geophase-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Worker threads for sweep points
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Base seed for random redecompositions
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a scenario and write its tables
    Run(Common),
    /// Exact versus second-order mean phases for every point
    Compare(Common),
}

fn version() -> String {
    format!(
        "{}\nconfig schema {SCHEMA_VERSION}\ncore geophase {}\nbuild {} {}-{}",
        env!("CARGO_PKG_VERSION"),
        geophase::VERSION,
        if cfg!(debug_assertions) { "debug" } else { "release" },
        std::env::consts::ARCH,
        std::env::consts::OS,
    )
}

fn summarize(report: &RunReport) {
    for p in &report.points {
        let mut line = format!("{}: beta0 = {:.10}", p.label, p.beta0_zh.unwrapped);
        if let Some(e) = &p.exact {
            line += &format!(
                ", <beta>_Z = {:.10}, <beta>_H = {:.10}, W = {:.6e}",
                e.mean_gp_z.unwrapped, e.mean_gp_h.unwrapped, e.spread_w
            );
        }
        if let Some(q) = &p.perturbative {
            line += &format!(", second order = {:.10}", q.mean_gp_zh.unwrapped);
        }
        if let Some(c) = &p.comparison {
            line += &format!(
                ", |Z - pert| = {:.3e}, |H - pert| = {:.3e}, expected {:.3e}{}",
                c.abs_diff_z_perturbative,
                c.abs_diff_h_perturbative,
                c.expected_order,
                if c.order_violation { " [order violation]" } else { "" }
            );
        }
        println!("{line}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command().version(version()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let (kind, common) = match cli.command {
        Command::Run(c) => (CommandKind::Run, c),
        Command::Compare(c) => (CommandKind::Compare, c),
    };
    let opts = Options {
        out: common.out,
        format: common.format,
        threads: common.threads.map(|n| n as usize),
        seed: common.seed,
    };
    match execute(&common.config, kind, &opts) {
        Ok(done) => {
            summarize(&done.report);
            for f in &done.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
