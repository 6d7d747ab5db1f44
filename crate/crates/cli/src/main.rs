use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::{Days, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use metapin::history::ScanOptions;
use metapin::pipeline::{self, PipelineError, RegistryMode, RunConfig, StageOutcome};
use metapin::registry::live::{default_cache_dir, TOKEN_ENV};

/// Find version-pinned packages in Dockerfiles across git history and
/// recommend coordinated updates.
#[derive(Parser, Debug)]
#[command(name = "metapin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Extract URLs and build per-Dockerfile timelines
    Scan,
    /// Classify Dockerfiles and repositories
    Classify,
    /// Group repositories by shared package sets
    Groups,
    /// Write patches and messages for lagging group members
    Recommend,
    /// Print the tables from existing artifacts
    Report,
    /// Run every stage in order
    Run,
}

#[derive(Args, Debug)]
struct Opts {
    /// Directory of git checkouts, or a history export JSON file
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Registry snapshot JSON to use instead of the GitHub API
    #[arg(long, global = true, conflicts_with = "live")]
    registry_fixture: Option<PathBuf>,
    /// Query the GitHub API for tags and releases
    #[arg(long, global = true)]
    live: bool,
    /// API token for --live
    #[arg(long, global = true, env = TOKEN_ENV, hide_env_values = true)]
    token: Option<String>,
    /// Cache directory for --live responses
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Repositories with no commit on or after this date are dormant
    /// [default: one year ago]
    #[arg(long, global = true, value_name = "YYYY-MM-DD")]
    cutoff: Option<NaiveDate>,
    /// Artifact directory
    #[arg(long, global = true, default_value = "metapin-out")]
    out: PathBuf,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Allow ARG instructions before the first FROM
    #[arg(long, global = true)]
    lenient_from: bool,
    /// Also match URLs containing unbound variables
    #[arg(long, global = true)]
    keep_unresolved: bool,
    /// JSON map of package to flagged tags
    #[arg(long, global = true)]
    advisories: Option<PathBuf>,
}

impl Opts {
    fn config(&self) -> RunConfig {
        let registry = if self.live {
            Some(RegistryMode::Live {
                token: self.token.clone(),
                cache_dir: self.cache_dir.clone().or_else(default_cache_dir),
            })
        } else {
            self.registry_fixture.clone().map(RegistryMode::Fixture)
        };
        let cutoff = self
            .cutoff
            .unwrap_or_else(|| Utc::now().date_naive() - Days::new(365));
        RunConfig {
            corpus: self.corpus.clone(),
            registry,
            cutoff: cutoff.and_hms_opt(0, 0, 0).expect("midnight").and_utc(),
            out: self.out.clone(),
            jobs: self.jobs,
            scan: ScanOptions {
                lenient_from: self.lenient_from,
                keep_unresolved: self.keep_unresolved,
            },
            advisories: self.advisories.clone(),
        }
    }
}

fn run_stage(command: Command, config: &RunConfig) -> Result<StageOutcome, PipelineError> {
    match command {
        Command::Scan => pipeline::scan(config),
        Command::Classify => pipeline::classify(config),
        Command::Groups => pipeline::groups(config),
        Command::Recommend => pipeline::recommend(config),
        Command::Report => {
            print!("{}", pipeline::report(config)?);
            Ok(StageOutcome::default())
        }
        Command::Run => {
            let mut total = StageOutcome::default();
            for stage in [
                Command::Scan,
                Command::Classify,
                Command::Groups,
                Command::Recommend,
                Command::Report,
            ] {
                let o = run_stage(stage, config)?;
                total.errors.extend(o.errors);
                total.warnings.extend(o.warnings);
            }
            Ok(total)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = cli.opts.config();
    match run_stage(cli.command, &config).with_context(|| format!("{:?} failed", cli.command)) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            if outcome.is_partial() {
                eprintln!("{} repositories failed:", outcome.errors.len());
                for e in &outcome.errors {
                    eprintln!("  {e}");
                }
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<PipelineError>()
                .is_some_and(|p| matches!(p, PipelineError::Usage(_)));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
