use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ircr_cli::{
    emit_plots, parse_seeds, run_matrix, verify_oracles, CliError, ExperimentConfig, Fault,
    Overrides, RunOptions,
};
use ircr_core::envs::ENV_KINDS;

/// Guidance-reward experiments.
///
/// Exit codes: 0 success, 1 configuration or usage error, 2 run failure,
/// 3 oracle verification failure.
#[derive(Parser)]
#[command(name = "ircr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (variant, seed) cell of an experiment config.
    Run {
        config: PathBuf,
        /// Seeds to run instead of the config's, e.g. `0..5` or `1,4,7`.
        #[arg(long)]
        seeds: Option<String>,
        /// Environment steps (episodes for tabular runs) per cell.
        #[arg(long)]
        budget: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cells run concurrently.
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip rendering SVG plots after the run.
        #[arg(long)]
        no_plots: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Render SVG plots for a finished run directory.
    Plot {
        run_dir: PathBuf,
        #[arg(long, default_value = "learning curves")]
        title: String,
    },
    /// Check the guidance estimators against exact oracles.
    Verify {
        /// Corrupt the estimator on purpose; the command should then fail.
        #[arg(long)]
        inject_fault: Option<FaultArg>,
    },
    /// List the environments an experiment config can name.
    ListEnvs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Normalization,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seeds,
            budget,
            out,
            jobs,
            no_plots,
            quiet,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            let usage = |message: String| CliError::Config {
                path: "<command line>".into(),
                line: 0,
                column: 0,
                key: Some("--seeds".into()),
                message,
            };
            let overrides = Overrides {
                seeds: seeds
                    .as_deref()
                    .map(parse_seeds)
                    .transpose()
                    .map_err(usage)?,
                budget,
                out,
                jobs,
            };
            overrides.apply(&mut cfg)?;
            let result = run_matrix(&cfg, RunOptions { quiet })?;
            if !no_plots {
                emit_plots(&result.out_dir, &cfg.name)?;
            }
            print!(
                "{}",
                ircr_cli::matrix::final_csv(&cfg.variants, &result.cells)
            );
            println!("results in {}", result.out_dir.display());
            Ok(())
        }
        Command::Plot { run_dir, title } => {
            for path in emit_plots(&run_dir, &title)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Verify { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::Normalization| Fault::Normalization);
            let report = verify_oracles(fault)?;
            print!("{}", report.table());
            report.into_result().map(|_| ())
        }
        Command::ListEnvs => {
            for (name, description) in ENV_KINDS {
                println!("{name:<10} {description}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
