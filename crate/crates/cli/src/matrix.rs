//! Runs every (variant, seed) cell of an experiment and writes its CSVs.
//!
//! Layout under the output directory:
//!
//! - `cells/<variant>/seed-<seed>.csv`: the full per-cell record;
//! - `cells/<variant>/quiver-seed-<seed>.csv`: guidance quiver (grid-world
//!   guidance variants only);
//! - `summary.csv`: `variant,x,mean,std,n` learning curves across seeds;
//! - `final.csv`: `variant,mean,std,n,per_seed` final metric per variant.
//!
//! The metric is always environmental: the trailing-mean episode return for
//! tabular runs and the deterministic evaluation metric for the others. The
//! listed seed is the cell's master seed; every random stream of the cell is
//! derived from it with `ircr_core::seed::derive`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ircr_core::agents::train::{train_agent, TrainResult};
use ircr_core::envs::gridworld::N_ACTIONS;
use ircr_core::envs::{GridWorld, PointMassEnv, RoverDomain};
use ircr_core::mdp::{wrap_delay, wrap_episodic};
use ircr_core::tabular::{export_quiver, run_ircr_q, trailing_mean, write_quiver_csv, TabularRun};
use ircr_core::{Environment, RewardSource};

use crate::config::{EnvKind, ExperimentConfig, Variant};
use crate::error::CliError;

type TabularEnv = Box<dyn Environment<State = usize, Action = usize>>;

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub variant: String,
    pub seed: u64,
    /// `(x, metric)` with `x` the episode count (tabular) or environment
    /// step (otherwise).
    pub series: Vec<(f64, f64)>,
    pub final_metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug)]
pub struct MatrixResult {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub quiet: bool,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, contents).map_err(io(path))
}

fn grid_env(cfg: &ExperimentConfig) -> Result<TabularEnv, CliError> {
    let base: TabularEnv = Box::new(GridWorld::new(cfg.env.grid.clone())?);
    Ok(match (cfg.env.episodic, cfg.env.delay) {
        (true, _) => Box::new(wrap_episodic(base)),
        (false, Some(k)) => Box::new(wrap_delay(base, k)?),
        (false, None) => base,
    })
}

fn tabular_cell(
    cfg: &ExperimentConfig,
    variant: &Variant,
    seed: u64,
    dir: &Path,
) -> Result<CellResult, CliError> {
    let mut env = grid_env(cfg)?;
    let tab = cfg.tabular_config(variant);
    let run = run_ircr_q(&mut env, &tab, seed)?;
    let returns: Vec<f64> = run.curve.iter().map(|r| r.env_return).collect();
    let smooth = trailing_mean(&returns, tab.window);

    let mut csv = String::from("seed,episode,env_return,window_mean,steps,final_state\n");
    let mut series = Vec::new();
    for (r, m) in run.curve.iter().zip(&smooth) {
        writeln!(
            csv,
            "{seed},{},{},{},{},{}",
            r.episode, r.env_return, m, r.steps, r.final_state
        )
        .unwrap();
        let done = r.episode + 1;
        if done % cfg.metric_every == 0 || done == run.curve.len() {
            series.push((done as f64, *m));
        }
    }
    write_file(&dir.join(format!("seed-{seed}.csv")), csv.as_bytes())?;

    if cfg.env.kind == EnvKind::Gridworld && variant.reward == RewardSource::Guidance {
        write_quiver(&run, cfg, &dir.join(format!("quiver-seed-{seed}.csv")))?;
    }
    Ok(CellResult {
        variant: variant.name.clone(),
        seed,
        series,
        final_metric: run.final_mean_return(tab.window),
    })
}

fn write_quiver(run: &TabularRun, cfg: &ExperimentConfig, path: &Path) -> Result<(), CliError> {
    let grid = &cfg.env.grid;
    let cells = export_quiver(&run.table, &run.stats, grid.width, grid.height, N_ACTIONS);
    let mut buf = Vec::new();
    write_quiver_csv(&cells, &mut buf)?;
    write_file(path, &buf)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn deep_csv(result: &TrainResult, seed: u64) -> String {
    let mut csv = String::from(
        "seed,step,episode,eval_metric,train_metric,gradient_steps,critic_loss,actor_loss,alpha,mean_reward,mean_q,return_min,return_max\n",
    );
    for p in &result.curve {
        let u = p.last_update.as_ref();
        writeln!(
            csv,
            "{seed},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.step,
            p.episode,
            p.eval_metric,
            p.train_metric,
            p.gradient_steps,
            opt(u.map(|u| u.critic_loss)),
            opt(u.map(|u| u.actor_loss)),
            opt(u.map(|u| u.alpha)),
            opt(u.map(|u| u.mean_reward)),
            opt(u.map(|u| u.mean_q)),
            opt(p.return_min),
            opt(p.return_max),
        )
        .unwrap();
    }
    csv
}

fn deep_cell(
    cfg: &ExperimentConfig,
    variant: &Variant,
    seed: u64,
    dir: &Path,
) -> Result<CellResult, CliError> {
    let train = cfg.train_config(variant);
    let result = match cfg.env.kind {
        EnvKind::Pointmass => {
            train_agent(PointMassEnv::new(cfg.env.pointmass.clone())?, train, seed)?
        }
        EnvKind::Rover => train_agent(RoverDomain::new(cfg.env.rover.clone())?, train, seed)?,
        _ => unreachable!("tabular environment"),
    };
    write_file(
        &dir.join(format!("seed-{seed}.csv")),
        deep_csv(&result, seed).as_bytes(),
    )?;
    Ok(CellResult {
        variant: variant.name.clone(),
        seed,
        series: result
            .curve
            .iter()
            .map(|p| (p.step as f64, p.eval_metric))
            .collect(),
        final_metric: result.final_metric,
    })
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    variant: &Variant,
    seed: u64,
    out_dir: &Path,
) -> Result<CellResult, CliError> {
    let dir = out_dir.join("cells").join(&variant.name);
    if cfg.env.kind.is_tabular() {
        tabular_cell(cfg, variant, seed, &dir)
    } else {
        deep_cell(cfg, variant, seed, &dir)
    }
}

/// Runs all cells (up to `cfg.jobs` at a time) and writes the summaries.
/// Output files do not depend on `jobs`.
pub fn run_matrix(cfg: &ExperimentConfig, opts: RunOptions) -> Result<MatrixResult, CliError> {
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir).map_err(io(&out_dir))?;
    let plan: Vec<(&Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult, CliError>>>> =
        Mutex::new((0..plan.len()).map(|_| None).collect());
    let started = Instant::now();

    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.min(plan.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = plan.get(i) else {
                    break;
                };
                let t = Instant::now();
                let res = run_cell(cfg, variant, seed, &out_dir);
                if !opts.quiet {
                    match &res {
                        Ok(c) => eprintln!(
                            "[{}/{}] {} seed {}: final {:.4} ({:.1?}, total {:.1?})",
                            i + 1,
                            plan.len(),
                            variant.name,
                            seed,
                            c.final_metric,
                            t.elapsed(),
                            started.elapsed()
                        ),
                        Err(e) => eprintln!(
                            "[{}/{}] {} seed {}: {e}",
                            i + 1,
                            plan.len(),
                            variant.name,
                            seed
                        ),
                    }
                }
                slots.lock().unwrap()[i] = Some(res);
            });
        }
    });

    let cells = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&cfg.variants, &cells);
    write_file(
        &out_dir.join("summary.csv"),
        summary_csv(&summary).as_bytes(),
    )?;
    write_file(
        &out_dir.join("final.csv"),
        final_csv(&cfg.variants, &cells).as_bytes(),
    )?;
    Ok(MatrixResult {
        out_dir,
        cells,
        summary,
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Aligns each variant's seed curves by index (truncating to the shortest)
/// and reports mean and sample standard deviation per point.
pub fn summarize(variants: &[Variant], cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for v in variants {
        let mine: Vec<&CellResult> = cells.iter().filter(|c| c.variant == v.name).collect();
        let len = mine.iter().map(|c| c.series.len()).min().unwrap_or(0);
        for i in 0..len {
            let ys: Vec<f64> = mine.iter().map(|c| c.series[i].1).collect();
            let (mean, std) = mean_std(&ys);
            rows.push(SummaryRow {
                variant: v.name.clone(),
                x: mine[0].series[i].0,
                mean,
                std,
                n: ys.len(),
            });
        }
    }
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut csv = String::from("variant,x,mean,std,n\n");
    for r in rows {
        writeln!(csv, "{},{},{},{},{}", r.variant, r.x, r.mean, r.std, r.n).unwrap();
    }
    csv
}

pub fn final_csv(variants: &[Variant], cells: &[CellResult]) -> String {
    let mut csv = String::from("variant,mean,std,n,per_seed\n");
    for v in variants {
        let finals: Vec<f64> = cells
            .iter()
            .filter(|c| c.variant == v.name)
            .map(|c| c.final_metric)
            .collect();
        let (mean, std) = mean_std(&finals);
        let per_seed: Vec<String> = finals.iter().map(f64::to_string).collect();
        writeln!(
            csv,
            "{},{mean},{std},{},{}",
            v.name,
            finals.len(),
            per_seed.join(";")
        )
        .unwrap();
    }
    csv
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>, CliError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || CliError::Run(format!("summary line {}: {line:?}", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad());
        }
        rows.push(SummaryRow {
            variant: cols[0].to_string(),
            x: cols[1].parse().map_err(|_| bad())?,
            mean: cols[2].parse().map_err(|_| bad())?,
            std: cols[3].parse().map_err(|_| bad())?,
            n: cols[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variant(name: &str) -> Variant {
        Variant {
            name: name.into(),
            reward: RewardSource::Guidance,
            agent: None,
        }
    }

    #[test]
    fn sample_std_and_single_seed() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }

    #[test]
    fn summary_truncates_to_shortest_curve() {
        let cells = vec![
            CellResult {
                variant: "a".into(),
                seed: 0,
                series: vec![(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)],
                final_metric: 3.0,
            },
            CellResult {
                variant: "a".into(),
                seed: 1,
                series: vec![(1.0, 3.0), (2.0, 4.0)],
                final_metric: 4.0,
            },
        ];
        let rows = summarize(&[variant("a"), variant("b")], &cells);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].mean, 3.0);
        let parsed = parse_summary_csv(&summary_csv(&rows)).unwrap();
        assert_eq!(parsed, rows);
    }
}
