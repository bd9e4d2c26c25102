//! `mbpre` command-line entry point.
//!
//! Exit status: 0 when every verdict passes, 1 when a verdict fails, 2 on
//! configuration, regime or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mbpre_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "mbpre", version, about = "Verification suites for multitype branching processes in random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the suite named in a config and write its artifacts.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, env = "MBPRE_THREADS", default_value_t = 0)]
        threads: usize,
        /// Master seed (overrides the config's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a config without running it.
    ValidateConfig {
        /// Experiment config (JSON).
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = mbpre_cli::resolve_out_dir(out, &cfg)?;
            let manifest = mbpre_cli::run(&cfg, &dir, threads)?;
            for v in &manifest.verdicts {
                println!(
                    "{} {}: value {:.4e} (tolerance {:.4e}) {}",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.name,
                    v.value,
                    v.tolerance,
                    v.detail
                );
            }
            println!(
                "suite {}: {} ({})",
                manifest.suite,
                if manifest.all_pass { "all verdicts pass" } else { "some verdicts fail" },
                dir.display()
            );
            Ok(manifest.all_pass)
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("{}: valid {} config (hash {})", config.display(), cfg.suite.name(), cfg.config_hash());
            Ok(true)
        }
    }
}
