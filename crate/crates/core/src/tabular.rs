//! Tabular Q-learning driven by environmental or guidance rewards.

use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use crate::credit::RewardSource;
use crate::credit::{BufferMode, CreditTable, ReturnStats};
use crate::error::{Error, Result};
use crate::mdp::{run_episode, Environment, Space, Trajectory};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty Q-table".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "discount {gamma} outside [0, 1]"
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            values: vec![0.0; n_states * n_actions],
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action; ties go to the lowest index.
    pub fn greedy(&self, state: usize) -> usize {
        argmax(self.row(state))
    }

    pub fn max(&self, state: usize) -> f64 {
        self.row(state)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `Q(s,a) += alpha (r + gamma max_a' Q(s',a') - Q(s,a))`, bootstrapping 0
/// when `next` is `None` (end of episode).
pub fn q_update(
    q: &mut QTable,
    state: usize,
    action: usize,
    reward: f64,
    next: Option<usize>,
    alpha: f64,
) -> Result<()> {
    if !reward.is_finite() {
        return Err(Error::NonFinite("reward".into()));
    }
    if state >= q.n_states || action >= q.n_actions || next.is_some_and(|s| s >= q.n_states) {
        return Err(Error::InvalidArgument(format!(
            "({state}, {action}) outside a {}x{} Q-table",
            q.n_states, q.n_actions
        )));
    }
    let bootstrap = next.map_or(0.0, |s| q.max(s));
    let idx = state * q.n_actions + action;
    q.values[idx] += alpha * (reward + q.gamma * bootstrap - q.values[idx]);
    Ok(())
}

/// Value annealed linearly from `start` to 0 at the final episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub episodes: usize,
}

impl LinearSchedule {
    pub fn new(start: f64, episodes: usize) -> Self {
        Self { start, episodes }
    }

    pub fn value(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return if episode == 0 && self.episodes == 1 {
                self.start
            } else {
                0.0
            };
        }
        let frac = episode.min(self.episodes - 1) as f64 / (self.episodes - 1) as f64;
        self.start * (1.0 - frac)
    }
}

/// Linearly annealed exploration rate and learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExplorationSchedule {
    pub epsilon: LinearSchedule,
    pub alpha: LinearSchedule,
}

impl ExplorationSchedule {
    pub fn new(epsilon: f64, alpha: f64, episodes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(
                "epsilon and alpha must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            epsilon: LinearSchedule::new(epsilon, episodes),
            alpha: LinearSchedule::new(alpha, episodes),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    pub episodes: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub reward: RewardSource,
    /// Trailing window for the smoothed learning curve.
    pub window: usize,
    pub bounded_buffers: bool,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            episodes: 15_000,
            alpha: 0.3,
            epsilon: 0.5,
            gamma: 0.9,
            reward: RewardSource::Guidance,
            window: 100,
            bounded_buffers: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub env_return: f64,
    pub steps: usize,
    pub final_state: usize,
}

#[derive(Clone, Debug)]
pub struct TabularRun {
    pub curve: Vec<EpisodeRecord>,
    pub q: QTable,
    pub table: CreditTable,
    pub stats: ReturnStats,
}

impl TabularRun {
    /// Mean environmental return of the last `n` episodes.
    pub fn final_mean_return(&self, n: usize) -> f64 {
        let tail = &self.curve[self.curve.len().saturating_sub(n)..];
        tail.iter().map(|r| r.env_return).sum::<f64>() / tail.len().max(1) as f64
    }
}

fn discrete_sizes(env: &impl Environment) -> Result<(usize, usize)> {
    match (&env.spec().state, &env.spec().action) {
        (Space::Discrete { n: s }, Space::Discrete { n: a }) => Ok((*s, *a)),
        _ => Err(Error::InvalidArgument(
            "tabular Q-learning needs discrete state and action spaces".into(),
        )),
    }
}

/// Runs tabular Q-learning. In guidance mode each step's reward is the
/// guidance reward of the pair under the credit table built from previous
/// episodes; the finished episode is ingested afterwards. The learning curve
/// always records the environmental return.
pub fn run_ircr_q<E>(env: &mut E, cfg: &TabularConfig, seed: u64) -> Result<TabularRun>
where
    E: Environment<State = usize, Action = usize>,
{
    let (n_states, n_actions) = discrete_sizes(env)?;
    let horizon = env.spec().horizon;
    let schedule = ExplorationSchedule::new(cfg.epsilon, cfg.alpha, cfg.episodes)?;
    let mut q = QTable::new(n_states, n_actions, cfg.gamma)?;
    let mut table = CreditTable::with_mode(if cfg.bounded_buffers {
        BufferMode::RunningMean
    } else {
        BufferMode::Unbounded
    });
    let mut stats = ReturnStats::new();
    let mut rng = seed::rng(seed, "tabular-exploration");
    let q_cap = if cfg.gamma < 1.0 {
        1.0 / (1.0 - cfg.gamma) + 1e-9
    } else {
        f64::INFINITY
    };
    let mut curve = Vec::with_capacity(cfg.episodes);
    let mut pairs = Vec::with_capacity(horizon);

    for episode in 0..cfg.episodes {
        let eps = schedule.epsilon.value(episode);
        let alpha = schedule.alpha.value(episode);
        let mut state = env.reset(seed::derive_indexed(seed, "episode", episode as u64));
        let mut env_return = 0.0;
        pairs.clear();
        for _ in 0..horizon {
            let action = if eps > 0.0 && rng.random_bool(eps) {
                rng.random_range(0..n_actions)
            } else {
                q.greedy(state)
            };
            let step = env.step(&action)?;
            env_return += step.reward;
            let reward = match cfg.reward {
                RewardSource::Environmental => step.reward,
                RewardSource::Guidance => table.guidance_reward(&stats, state, action),
            };
            let next = (!step.done()).then_some(step.next_state);
            q_update(&mut q, state, action, reward, next, alpha)?;
            if cfg.reward == RewardSource::Guidance {
                let v = q.get(state, action);
                if !(-1e-12..=q_cap).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "Q({state}, {action}) = {v} escaped [0, {q_cap}]"
                    )));
                }
            }
            pairs.push((state, action));
            state = step.next_state;
            if step.done() {
                break;
            }
        }
        if cfg.reward == RewardSource::Guidance {
            table.ingest_pairs(&mut stats, pairs.iter().copied(), env_return)?;
        }
        curve.push(EpisodeRecord {
            episode,
            env_return,
            steps: pairs.len(),
            final_state: state,
        });
    }
    Ok(TabularRun {
        curve,
        q,
        table,
        stats,
    })
}

/// Greedy (epsilon = 0) rollout of a Q-table.
pub fn greedy_rollout<E>(env: &mut E, q: &QTable, seed: u64) -> Result<Trajectory<usize, usize>>
where
    E: Environment<State = usize, Action = usize>,
{
    let horizon = env.spec().horizon;
    run_episode(env, |s: &usize, _| q.greedy(*s), horizon, seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuiverCell {
    pub x: usize,
    pub y: usize,
    /// `None` when every action's guidance reward is zero.
    pub action: Option<usize>,
    pub magnitude: f64,
}

/// Per-cell argmax of the guidance reward over a `width x height` grid whose
/// state index is `y * width + x`.
pub fn export_quiver(
    table: &CreditTable,
    stats: &ReturnStats,
    width: usize,
    height: usize,
    n_actions: usize,
) -> Vec<QuiverCell> {
    let mut cells = Vec::with_capacity(width * height);
    let mut g = vec![0.0; n_actions];
    for y in 0..height {
        for x in 0..width {
            let s = y * width + x;
            for (a, slot) in g.iter_mut().enumerate() {
                *slot = table.guidance_reward(stats, s, a);
            }
            let cell = if g.iter().all(|&v| v == 0.0) {
                QuiverCell {
                    x,
                    y,
                    action: None,
                    magnitude: 0.0,
                }
            } else {
                let a = argmax(&g);
                QuiverCell {
                    x,
                    y,
                    action: Some(a),
                    magnitude: g[a],
                }
            };
            cells.push(cell);
        }
    }
    cells
}

/// `x,y,action,magnitude`; empty cells leave `action` blank.
pub fn write_quiver_csv<W: Write>(cells: &[QuiverCell], mut out: W) -> Result<()> {
    writeln!(out, "x,y,action,magnitude")?;
    for c in cells {
        let action = c.action.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", c.x, c.y, action, c.magnitude)?;
    }
    Ok(())
}

pub fn read_quiver_csv(text: &str) -> Result<Vec<QuiverCell>> {
    let mut cells = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("quiver line {}: {line:?}", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        cells.push(QuiverCell {
            x: cols[0].parse().map_err(|_| bad())?,
            y: cols[1].parse().map_err(|_| bad())?,
            action: if cols[2].is_empty() {
                None
            } else {
                Some(cols[2].parse().map_err(|_| bad())?)
            },
            magnitude: cols[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(cells)
}

/// Trailing mean over at most `window` values ending at each index.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// `episode,env_return,window_mean`.
pub fn write_curve_csv<W: Write>(curve: &[EpisodeRecord], window: usize, mut out: W) -> Result<()> {
    let returns: Vec<f64> = curve.iter().map(|r| r.env_return).collect();
    writeln!(out, "episode,env_return,window_mean")?;
    for (r, m) in curve.iter().zip(trailing_mean(&returns, window)) {
        writeln!(out, "{},{},{}", r.episode, r.env_return, m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::gridworld::{GridConfig, GridWorld, RewardMode, DOWN, LEFT, RIGHT, UP};
    use crate::envs::PointMassEnv;

    #[test]
    fn q_update_examples() {
        let mut q = QTable::new(3, 2, 0.9).unwrap();
        q_update(&mut q, 0, 1, 1.0, Some(1), 0.3).unwrap();
        assert!((q.get(0, 1) - 0.3).abs() < 1e-15);
        let mut q = QTable::new(3, 2, 0.9).unwrap();
        q_update(&mut q, 0, 1, 0.0, Some(1), 0.3).unwrap();
        assert_eq!(q.get(0, 1), 0.0);
        let before = q.clone();
        q_update(&mut q, 2, 0, 123.0, Some(0), 0.0).unwrap();
        assert_eq!(q, before);
        assert!(q_update(&mut q, 0, 0, f64::NAN, None, 0.3).is_err());
        assert!(q_update(&mut q, 3, 0, 0.0, None, 0.3).is_err());
    }

    #[test]
    fn terminal_update_bootstraps_zero() {
        let mut q = QTable::new(2, 1, 0.9).unwrap();
        q.values[1] = 5.0;
        q_update(&mut q, 0, 0, 1.0, None, 1.0).unwrap();
        assert_eq!(q.get(0, 0), 1.0);
        q_update(&mut q, 0, 0, 1.0, Some(1), 1.0).unwrap();
        assert!((q.get(0, 0) - 5.5).abs() < 1e-12);
    }

    #[test]
    fn greedy_ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
        assert_eq!(QTable::new(1, 4, 0.9).unwrap().greedy(0), 0);
    }

    #[test]
    fn schedule_is_linear_to_zero() {
        let s = LinearSchedule::new(0.5, 11);
        assert_eq!(s.value(0), 0.5);
        assert!((s.value(5) - 0.25).abs() < 1e-15);
        assert_eq!(s.value(10), 0.0);
        assert_eq!(s.value(50), 0.0);
        let mut last = f64::INFINITY;
        for ep in 0..20 {
            let v = s.value(ep);
            assert!(v <= last && (0.0..=0.5).contains(&v));
            last = v;
        }
        assert!(ExplorationSchedule::new(1.5, 0.3, 10).is_err());
    }

    fn small_grid(mode: RewardMode) -> GridWorld {
        small_grid_with_horizon(mode, 12)
    }

    fn small_grid_with_horizon(mode: RewardMode, horizon: usize) -> GridWorld {
        GridWorld::new(GridConfig {
            width: 5,
            height: 5,
            goal: (4, 4),
            horizon,
            reward_mode: mode,
            ..GridConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn both_variants_solve_a_small_dense_grid() {
        for reward in [RewardSource::Environmental, RewardSource::Guidance] {
            for seed in 0..4 {
                let cfg = TabularConfig {
                    episodes: 2000,
                    reward,
                    ..TabularConfig::default()
                };
                let mut env = small_grid_with_horizon(RewardMode::Dense, 20);
                let run = run_ircr_q(&mut env, &cfg, seed).unwrap();
                let traj = greedy_rollout(&mut env, &run.q, 0).unwrap();
                let goal = env.config().index((4, 4));
                assert!(
                    traj.transitions().iter().any(|t| t.next_state == goal),
                    "{reward:?} seed {seed}"
                );
            }
        }
    }

    #[test]
    fn fixed_seed_runs_are_identical() {
        let cfg = TabularConfig {
            episodes: 200,
            ..TabularConfig::default()
        };
        let a = run_ircr_q(&mut small_grid(RewardMode::Episodic), &cfg, 9).unwrap();
        let b = run_ircr_q(&mut small_grid(RewardMode::Episodic), &cfg, 9).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.q, b.q);
        let c = run_ircr_q(&mut small_grid(RewardMode::Episodic), &cfg, 10).unwrap();
        assert_ne!(a.curve, c.curve);
    }

    #[test]
    fn guidance_q_values_stay_within_geometric_bound() {
        let cfg = TabularConfig {
            episodes: 300,
            ..TabularConfig::default()
        };
        let run = run_ircr_q(&mut small_grid(RewardMode::Episodic), &cfg, 1).unwrap();
        assert!(run.q.values().iter().all(|&v| (0.0..=10.0).contains(&v)));
        assert_eq!(run.stats.count(), 300);
    }

    #[test]
    fn greedy_rollout_is_repeatable() {
        let cfg = TabularConfig {
            episodes: 200,
            ..TabularConfig::default()
        };
        let mut env = small_grid(RewardMode::Episodic);
        let run = run_ircr_q(&mut env, &cfg, 2).unwrap();
        let a = greedy_rollout(&mut env, &run.q, 0).unwrap();
        let b = greedy_rollout(&mut env, &run.q, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn continuous_env_is_rejected() {
        let env = PointMassEnv::new(Default::default()).unwrap();
        assert!(discrete_sizes(&env).is_err());
    }

    #[test]
    fn empty_table_gives_empty_quiver() {
        let cells = export_quiver(&CreditTable::new(), &ReturnStats::new(), 4, 3, 4);
        assert_eq!(cells.len(), 12);
        assert!(cells
            .iter()
            .all(|c| c.action.is_none() && c.magnitude == 0.0));
    }

    #[test]
    fn single_trajectory_along_top_row_points_right() {
        let cfg = GridConfig {
            width: 6,
            height: 4,
            ..GridConfig::default()
        };
        let mut table = CreditTable::new();
        let mut stats = ReturnStats::new();
        let row: Vec<_> = (0..5).map(|x| (cfg.index((x, 3)), RIGHT)).collect();
        table
            .ingest_pairs(&mut stats, [(cfg.index((0, 0)), UP)], -1.0)
            .unwrap();
        table.ingest_pairs(&mut stats, row, 2.0).unwrap();
        let cells = export_quiver(&table, &stats, 6, 4, 4);
        for x in 0..5 {
            let c = cells[cfg.index((x, 3))];
            assert_eq!((c.action, c.magnitude), (Some(RIGHT), 1.0));
        }
        assert_eq!(cells[cfg.index((5, 3))].action, None);
        assert_eq!(cells[0].action, None);
        assert_eq!(cells[0].magnitude, 0.0);
    }

    #[test]
    fn quiver_csv_round_trip() {
        let cells = vec![
            QuiverCell {
                x: 0,
                y: 0,
                action: None,
                magnitude: 0.0,
            },
            QuiverCell {
                x: 1,
                y: 0,
                action: Some(LEFT),
                magnitude: 0.25,
            },
            QuiverCell {
                x: 0,
                y: 1,
                action: Some(DOWN),
                magnitude: 1.0 / 3.0,
            },
        ];
        let mut buf = Vec::new();
        write_quiver_csv(&cells, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,action,magnitude\n0,0,,0\n"));
        assert_eq!(read_quiver_csv(&text).unwrap(), cells);
    }

    #[test]
    fn curve_csv_has_trailing_mean() {
        assert_eq!(trailing_mean(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        let curve: Vec<_> = [1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &r)| EpisodeRecord {
                episode: i,
                env_return: r,
                steps: 1,
                final_state: 0,
            })
            .collect();
        let mut buf = Vec::new();
        write_curve_csv(&curve, 100, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "episode,env_return,window_mean\n0,1,1\n1,3,2\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quiver_directions_survive_affine_maps(
                episodes in prop::collection::vec(
                    (prop::collection::vec((0usize..9, 0usize..4), 1..10), -20.0f64..20.0),
                    1..20,
                ),
                scale in 0.05f64..50.0,
                shift in -50.0f64..50.0,
            ) {
                let (mut t1, mut t2) = (CreditTable::new(), CreditTable::new());
                let (mut s1, mut s2) = (ReturnStats::new(), ReturnStats::new());
                for (pairs, r) in &episodes {
                    t1.ingest_pairs(&mut s1, pairs.iter().copied(), *r).unwrap();
                    t2.ingest_pairs(&mut s2, pairs.iter().copied(), scale * r + shift).unwrap();
                }
                let a = export_quiver(&t1, &s1, 3, 3, 4);
                let b = export_quiver(&t2, &s2, 3, 3, 4);
                for (ca, cb) in a.iter().zip(&b) {
                    // near-ties can flip under rounding; compare decisive cells
                    let margin = (0..4)
                        .filter(|&k| Some(k) != ca.action)
                        .map(|k| ca.magnitude - t1.guidance_reward(&s1, ca.y * 3 + ca.x, k))
                        .fold(f64::INFINITY, f64::min);
                    if ca.action.is_none() {
                        prop_assert!(cb.magnitude < 1e-9);
                    } else if margin > 1e-9 {
                        prop_assert_eq!(ca.action, cb.action);
                    }
                }
            }
        }
    }
}
