//! Experiment harness for `ircr-core`: TOML experiment configs, a
//! variants x seeds run matrix with CSV output, SVG plots and oracle
//! verification.

pub mod config;
pub mod error;
pub mod matrix;
pub mod plot;
pub mod verify;

pub use config::{EnvKind, ExperimentConfig, Variant};
pub use error::CliError;
pub use matrix::{run_matrix, CellResult, MatrixResult, RunOptions, SummaryRow};
pub use plot::{curves_svg, emit_plots, quiver_arrows, quiver_svg};
pub use verify::{verify_oracles, Fault, VerifyReport};

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    /// Environment steps, or episodes for tabular runs.
    pub budget: Option<usize>,
    pub out: Option<std::path::PathBuf>,
    pub jobs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(budget) = self.budget {
            if cfg.env.kind.is_tabular() {
                cfg.tabular.episodes = budget;
            } else {
                cfg.train.budget = budget;
                cfg.train.warmup = cfg.train.warmup.min(budget);
                cfg.train.eval_every = cfg.train.eval_every.min(budget);
            }
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        cfg.validate().map_err(|message| CliError::Config {
            path: "<command line>".into(),
            line: 0,
            column: 0,
            key: None,
            message,
        })
    }
}

/// Parses `0,1,2`, `0..5` or a mix such as `0..3,10`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad seed range {part:?}"))?;
            let b: u64 = b.parse().map_err(|_| format!("bad seed range {part:?}"))?;
            if a >= b {
                return Err(format!("empty seed range {part:?}"));
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed {part:?}"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..3,10").unwrap(), vec![0, 1, 2, 10]);
        assert_eq!(parse_seeds("4").unwrap(), vec![4]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }
}
