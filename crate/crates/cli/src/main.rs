use std::path::PathBuf;
use std::process::ExitCode;

use btauthlab::config::{profiles_to_toml, ScenarioConfig};
use btauthlab::profiles::builtin_profiles;
use btauthlab::runner::{self, ExitStatus, RunOptions};
use clap::{Parser, Subcommand};

/// Bluetooth authentication failure simulator and compliance lab.
#[derive(Debug, Parser)]
#[command(name = "btauthlab", version, arg_required_else_help = true)]
struct Cli {
    /// Print the built-in stack profiles as `[[profiles]]` tables and exit.
    #[arg(long)]
    list_profiles: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario. Exit status: 0 no violation, 1 violation, 2 bad config.
    Run {
        /// Scenario file (TOML).
        config: PathBuf,
        /// Directory for the per-device btsnoop files.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// JSON Lines verdict report.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Replace the seed given in the scenario file(s).
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run every scenario in a directory against every profile.
    Matrix {
        /// Directory of scenario files; each is one matrix row.
        dir: PathBuf,
        /// Comma-separated profile names (default: all built-in profiles).
        #[arg(long, value_delimiter = ',')]
        profiles: Option<Vec<String>>,
        /// JSON Lines report for all cells.
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Replace the seed given in the scenario file(s).
        #[arg(long)]
        seed_override: Option<u64>,
    },
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn list_profiles() {
    print!("{}", profiles_to_toml(builtin_profiles().iter()));
}

fn run(config: PathBuf, opts: RunOptions) -> ExitCode {
    let cfg = match ScenarioConfig::load(&config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return exit(ExitStatus::ConfigError);
        }
    };
    let report = match runner::run_scenario(cfg, &opts) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit(ExitStatus::ConfigError);
        }
    };
    let run = &report.run;
    println!("scenario {} (profile {})", run.scenario_id, run.profile);
    match &run.verdict {
        Ok(v) => {
            for c in &v.checks {
                println!("  {} {:<21} {:<9} {}", c.id, c.id.name(), c.result, c.detail);
            }
            println!("  summary: {}", v.summary_symbol);
        }
        Err(e) => println!("  not graded: {e}"),
    }
    for f in &report.trace_files {
        println!("  trace: {}", f.display());
    }
    if let Some(f) = &report.report_file {
        println!("  report: {}", f.display());
    }
    exit(report.exit)
}

fn matrix(dir: PathBuf, profiles: Option<Vec<String>>, report_out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let m = match runner::run_matrix(&dir, profiles.as_deref(), seed) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return exit(ExitStatus::ConfigError);
        }
    };
    print!("{}", m.render_text());
    if let Some(path) = report_out {
        if let Err(e) = std::fs::write(&path, m.report_jsonl()) {
            eprintln!("error: {}: {e}", path.display());
            return exit(ExitStatus::ConfigError);
        }
    }
    exit(ExitStatus::Clean)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_profiles {
        list_profiles();
        return ExitCode::SUCCESS;
    }
    match cli.command {
        Some(Command::Run {
            config,
            trace_out,
            report_out,
            seed_override,
        }) => run(
            config,
            RunOptions {
                trace_out,
                report_out,
                seed_override,
            },
        ),
        Some(Command::Matrix {
            dir,
            profiles,
            report_out,
            seed_override,
        }) => matrix(dir, profiles, report_out, seed_override),
        None => ExitCode::SUCCESS,
    }
}
