//! Guidance rewards from trajectory returns.
//!
//! The guidance reward of a state-action pair is the expected return of the
//! behavioral trajectories that contain it:
//!
//! ```text
//! r_g(s, a) = sum_tau p(tau) 1[(s,a) in tau] R(tau) / sum_tau p(tau) 1[(s,a) in tau]
//! ```
//!
//! In practice the returns are min-max normalized to `[0, 1]` with the
//! running extremes of all episode returns seen so far, and the expectation
//! is estimated from the episodes collected by the learner itself
//! ([`CreditTable`]). [`ExactGuidance`] evaluates the definition by
//! enumeration on small MDPs, and [`mc_guidance`] is the plain Monte-Carlo
//! estimate over a fixed set of trajectories.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::envs::finite::{enumerate_trajectories, EnumerableMdp};
use crate::error::{Error, Result};
use crate::mdp::Trajectory;

/// Which reward drives a learner's value updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    /// The stored per-step environmental reward.
    Environmental,
    /// The normalized return of the source episode (or the credit-table
    /// guidance reward in the tabular case).
    Guidance,
}

/// Value returned by [`ReturnStats::normalize`] when every return seen so far
/// is identical.
pub const DEGENERATE_SPREAD_VALUE: f64 = 0.5;

/// Running extremes of episode returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnStats {
    r_max: f64,
    r_min: f64,
    count: u64,
}

impl Default for ReturnStats {
    fn default() -> Self {
        Self::new()
    }
}

impl ReturnStats {
    pub fn new() -> Self {
        Self {
            r_max: f64::NEG_INFINITY,
            r_min: f64::INFINITY,
            count: 0,
        }
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    /// Number of episodes ingested.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, episode_return: f64) -> Result<()> {
        if !episode_return.is_finite() {
            return Err(Error::NonFinite("episode return".into()));
        }
        self.r_max = self.r_max.max(episode_return);
        self.r_min = self.r_min.min(episode_return);
        self.count += 1;
        Ok(())
    }

    /// `(R - r_min) / (r_max - r_min)` clipped to `[0, 1]`, or
    /// [`DEGENERATE_SPREAD_VALUE`] when `r_max == r_min`.
    pub fn normalize(&self, r: f64) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::EmptyStats);
        }
        Ok(self.normalize_unchecked(r))
    }

    #[inline]
    fn normalize_unchecked(&self, r: f64) -> f64 {
        let spread = self.r_max - self.r_min;
        if spread > 0.0 {
            ((r - self.r_min) / spread).clamp(0.0, 1.0)
        } else {
            DEGENERATE_SPREAD_VALUE
        }
    }

    /// Rebuilds statistics from exported values.
    pub fn from_parts(r_min: f64, r_max: f64, count: u64) -> Result<Self> {
        if count > 0 && !(r_min <= r_max && r_min.is_finite() && r_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inconsistent return bounds [{r_min}, {r_max}]"
            )));
        }
        if count == 0 {
            return Ok(Self::new());
        }
        Ok(Self {
            r_max,
            r_min,
            count,
        })
    }
}

/// Storage policy of a [`CreditTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BufferMode {
    /// Every ingested return is kept.
    #[default]
    Unbounded,
    /// Only count, sum and extremes are kept. Exact unless the global
    /// statistics ever fall inside a buffer's range (which never happens
    /// when statistics are updated with every ingested episode); otherwise
    /// the clipped normalized mean is used.
    RunningMean,
}

#[derive(Clone, Debug, PartialEq)]
struct ReturnBuffer {
    returns: Vec<f64>,
    count: u64,
    sum: f64,
    lo: f64,
    hi: f64,
}

impl ReturnBuffer {
    fn new() -> Self {
        Self {
            returns: Vec::new(),
            count: 0,
            sum: 0.0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, r: f64, keep: bool) {
        if keep {
            self.returns.push(r);
        }
        self.count += 1;
        self.sum += r;
        self.lo = self.lo.min(r);
        self.hi = self.hi.max(r);
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Per-pair return buffers `B(s, a)`.
///
/// A pair visited several times in one episode receives that episode's
/// return once per visit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CreditTable {
    mode: BufferMode,
    buffers: HashMap<(usize, usize), ReturnBuffer>,
}

impl CreditTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mode(mode: BufferMode) -> Self {
        Self {
            mode,
            buffers: HashMap::new(),
        }
    }

    pub fn mode(&self) -> BufferMode {
        self.mode
    }

    /// Appends `episode_return` to the buffer of every listed pair and
    /// updates `stats` once.
    pub fn ingest_pairs<I>(
        &mut self,
        stats: &mut ReturnStats,
        pairs: I,
        episode_return: f64,
    ) -> Result<()>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        stats.update(episode_return)?;
        let keep = self.mode == BufferMode::Unbounded;
        for key in pairs {
            self.buffers
                .entry(key)
                .or_insert_with(ReturnBuffer::new)
                .push(episode_return, keep);
        }
        Ok(())
    }

    pub fn ingest(
        &mut self,
        stats: &mut ReturnStats,
        traj: &Trajectory<usize, usize>,
    ) -> Result<()> {
        self.ingest_pairs(stats, traj.pairs(), traj.undiscounted_return())
    }

    /// Stored returns, when the table keeps them.
    pub fn returns(&self, state: usize, action: usize) -> Option<&[f64]> {
        match self.mode {
            BufferMode::Unbounded => self
                .buffers
                .get(&(state, action))
                .map(|b| b.returns.as_slice()),
            BufferMode::RunningMean => None,
        }
    }

    pub fn count(&self, state: usize, action: usize) -> u64 {
        self.buffers.get(&(state, action)).map_or(0, |b| b.count)
    }

    pub fn mean_return(&self, state: usize, action: usize) -> Option<f64> {
        self.buffers.get(&(state, action)).map(ReturnBuffer::mean)
    }

    /// Number of pairs with a nonempty buffer.
    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    /// Pairs with a nonempty buffer, sorted.
    pub fn keys(&self) -> Vec<(usize, usize)> {
        let mut keys: Vec<_> = self.buffers.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Mean normalized return of `B(s, a)`; exactly 0 for an empty buffer
    /// (or when no episode has been ingested into `stats`).
    pub fn guidance_reward(&self, stats: &ReturnStats, state: usize, action: usize) -> f64 {
        let Some(buf) = self.buffers.get(&(state, action)) else {
            return 0.0;
        };
        if stats.count == 0 {
            return 0.0;
        }
        let spread = stats.r_max - stats.r_min;
        if !(spread > 0.0) {
            return DEGENERATE_SPREAD_VALUE;
        }
        if buf.lo >= stats.r_min && buf.hi <= stats.r_max {
            // no clipping: the mean of normalized returns is the normalized mean
            return ((buf.mean() - stats.r_min) / spread).clamp(0.0, 1.0);
        }
        match self.mode {
            BufferMode::Unbounded => {
                let total: f64 = buf
                    .returns
                    .iter()
                    .map(|&r| stats.normalize_unchecked(r))
                    .sum();
                total / buf.returns.len() as f64
            }
            BufferMode::RunningMean => stats.normalize_unchecked(buf.mean()),
        }
    }

    /// Whether normalizing any stored return under `stats` would clip.
    pub fn would_clip(&self, stats: &ReturnStats) -> bool {
        self.buffers
            .values()
            .any(|b| b.lo < stats.r_min || b.hi > stats.r_max)
    }

    /// Writes a tab-separated snapshot: a `stats` line, then one row per pair
    /// `state action count mean min max raw`, where `raw` is the
    /// space-separated list of stored returns (empty in running-mean mode).
    pub fn export_snapshot<W: Write>(&self, stats: &ReturnStats, mut out: W) -> Result<()> {
        writeln!(out, "# credit-table v1")?;
        writeln!(
            out,
            "stats\t{}\t{}\t{}",
            stats.r_min, stats.r_max, stats.count
        )?;
        writeln!(out, "state\taction\tcount\tmean\tmin\tmax\traw")?;
        for (s, a) in self.keys() {
            let b = &self.buffers[&(s, a)];
            let raw: Vec<String> = b.returns.iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{s}\t{a}\t{}\t{}\t{}\t{}\t{}",
                b.count,
                b.mean(),
                b.lo,
                b.hi,
                raw.join(" ")
            )?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`CreditTable::export_snapshot`]. Rows with
    /// raw lists restore an unbounded table; otherwise a running-mean table.
    pub fn import_snapshot<R: BufRead>(input: R) -> Result<(Self, ReturnStats)> {
        let mut stats = None;
        let mut rows = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            if line.starts_with('#') || line.trim().is_empty() || line.starts_with("state\t") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let num = |i: usize| -> Result<f64> {
                cols.get(i)
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| bad(&format!("column {} is not a number", i + 1)))
            };
            let int = |i: usize| -> Result<u64> {
                cols.get(i)
                    .and_then(|c| c.parse::<u64>().ok())
                    .ok_or_else(|| bad(&format!("column {} is not an integer", i + 1)))
            };
            if cols[0] == "stats" {
                stats = Some(ReturnStats::from_parts(num(1)?, num(2)?, int(3)?)?);
                continue;
            }
            if cols.len() != 7 {
                return Err(bad("expected 7 tab-separated columns"));
            }
            let raw = cols[6]
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad raw return")))
                .collect::<Result<Vec<f64>>>()?;
            let count = int(2)?;
            if !raw.is_empty() && raw.len() as u64 != count {
                return Err(bad("raw list length disagrees with count"));
            }
            rows.push((
                int(0)? as usize,
                int(1)? as usize,
                count,
                num(3)?,
                num(4)?,
                num(5)?,
                raw,
            ));
        }
        let stats = stats.ok_or_else(|| Error::Parse("missing stats line".into()))?;
        let unbounded = rows.iter().all(|r| !r.6.is_empty());
        let mut table = Self::with_mode(if unbounded {
            BufferMode::Unbounded
        } else {
            BufferMode::RunningMean
        });
        for (s, a, count, mean, lo, hi, raw) in rows {
            let buf = if unbounded {
                let mut b = ReturnBuffer::new();
                raw.into_iter().for_each(|r| b.push(r, true));
                b
            } else {
                ReturnBuffer {
                    returns: Vec::new(),
                    count,
                    sum: mean * count as f64,
                    lo,
                    hi,
                }
            };
            table.buffers.insert((s, a), buf);
        }
        Ok((table, stats))
    }
}

/// Trajectory distribution `p_beta` over an enumerated trajectory set.
#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryWeighting {
    Uniform,
    /// `p(tau) ∝ exp(R(tau))`.
    Exponential,
    /// Probabilities indexed like the enumerated trajectory list.
    Explicit(Vec<f64>),
}

impl TrajectoryWeighting {
    /// Unnormalized weights for `trajs`. Uniform weights are exactly 1 and
    /// exponential weights share a max-subtraction.
    pub fn weights(&self, trajs: &[Trajectory<usize, usize>]) -> Result<Vec<f64>> {
        match self {
            Self::Uniform => Ok(vec![1.0; trajs.len()]),
            Self::Exponential => {
                let top = trajs
                    .iter()
                    .map(Trajectory::undiscounted_return)
                    .fold(f64::NEG_INFINITY, f64::max);
                Ok(trajs
                    .iter()
                    .map(|t| (t.undiscounted_return() - top).exp())
                    .collect())
            }
            Self::Explicit(p) => {
                if p.len() != trajs.len() {
                    return Err(Error::Shape(format!(
                        "{} explicit probabilities for {} trajectories",
                        p.len(),
                        trajs.len()
                    )));
                }
                if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "explicit probabilities must be nonnegative".into(),
                    ));
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "explicit probabilities sum to {total}, not 1"
                    )));
                }
                Ok(p.clone())
            }
        }
    }
}

/// Exact guidance rewards over a fully enumerated trajectory set.
#[derive(Clone, Debug)]
pub struct ExactGuidance {
    trajectories: Vec<Trajectory<usize, usize>>,
    weights: Vec<f64>,
}

impl ExactGuidance {
    pub fn new(
        trajectories: Vec<Trajectory<usize, usize>>,
        weighting: &TrajectoryWeighting,
    ) -> Result<Self> {
        let weights = weighting.weights(&trajectories)?;
        Ok(Self {
            trajectories,
            weights,
        })
    }

    pub fn from_mdp<M: EnumerableMdp + ?Sized>(
        mdp: &M,
        weighting: &TrajectoryWeighting,
        cap: usize,
    ) -> Result<Self> {
        Self::new(enumerate_trajectories(mdp, cap)?, weighting)
    }

    pub fn trajectories(&self) -> &[Trajectory<usize, usize>] {
        &self.trajectories
    }

    /// `r_g(s, a)`; errors when no positively weighted trajectory contains
    /// the pair.
    pub fn guidance(&self, state: usize, action: usize) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (t, &w) in self.trajectories.iter().zip(&self.weights) {
            if t.contains_pair(state, action) {
                num += w * t.undiscounted_return();
                den += w;
            }
        }
        if den > 0.0 {
            Ok(num / den)
        } else {
            Err(Error::UncoveredPair { state, action })
        }
    }
}

/// One-shot exact guidance reward for `(state, action)`.
pub fn exact_guidance<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    weighting: &TrajectoryWeighting,
    state: usize,
    action: usize,
) -> Result<f64> {
    ExactGuidance::from_mdp(mdp, weighting, crate::envs::finite::DEFAULT_TRAJECTORY_CAP)?
        .guidance(state, action)
}

/// Monte-Carlo estimate: mean return of the trajectories containing the
/// pair, 0 when none does.
pub fn mc_guidance(trajs: &[Trajectory<usize, usize>], state: usize, action: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in trajs.iter().filter(|t| t.contains_pair(state, action)) {
        sum += t.undiscounted_return();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// A stochastic policy over a finite MDP: `probs[state][action]`, zero on
/// unavailable actions.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new<M: EnumerableMdp + ?Sized>(mdp: &M, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.len() != mdp.n_states() || probs.iter().any(|row| row.len() != mdp.n_actions()) {
            return Err(Error::Shape("policy table does not match the MDP".into()));
        }
        for (s, row) in probs.iter().enumerate() {
            let avail = mdp.actions(s);
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "negative probability in state {s}"
                )));
            }
            if row
                .iter()
                .enumerate()
                .any(|(a, &p)| p > 0.0 && !avail.contains(&a))
            {
                return Err(Error::InvalidArgument(format!(
                    "probability on an unavailable action in state {s}"
                )));
            }
            let total: f64 = row.iter().sum();
            if !avail.is_empty() && (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "probabilities in state {s} sum to {total}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform<M: EnumerableMdp + ?Sized>(mdp: &M) -> Self {
        let probs = (0..mdp.n_states())
            .map(|s| {
                let avail = mdp.actions(s);
                let mut row = vec![0.0; mdp.n_actions()];
                for &a in &avail {
                    row[a] = 1.0 / avail.len() as f64;
                }
                row
            })
            .collect();
        Self { probs }
    }

    /// Picks `choice[s]` in every state.
    pub fn deterministic<M: EnumerableMdp + ?Sized>(mdp: &M, choice: &[usize]) -> Result<Self> {
        let probs = (0..mdp.n_states())
            .map(|s| {
                let mut row = vec![0.0; mdp.n_actions()];
                if !mdp.actions(s).is_empty() {
                    row[choice[s]] = 1.0;
                }
                row
            })
            .collect();
        Self::new(mdp, probs)
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state][action]
    }

    fn trajectory_prob(&self, traj: &Trajectory<usize, usize>) -> f64 {
        traj.pairs().map(|(s, a)| self.prob(s, a)).product()
    }
}

/// `E_{tau_hat ~ pi}[sum_t gamma^t r_g(s_t, a_t)]` by enumerating the
/// policy's trajectories. Guidance rewards are only evaluated for pairs
/// the policy reaches with positive probability.
pub fn smoothed_objective<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    policy: &TabularPolicy,
    weighting: &TrajectoryWeighting,
    gamma: f64,
) -> Result<f64> {
    let oracle =
        ExactGuidance::from_mdp(mdp, weighting, crate::envs::finite::DEFAULT_TRAJECTORY_CAP)?;
    smoothed_objective_with(&oracle, policy, gamma, false)
}

/// Like [`smoothed_objective`], but every reference trajectory's discounted
/// sum is divided by its total mixture weight `sum_t gamma^t`, so the
/// smoothing distribution is a proper mixture. With a delta weighting on a
/// deterministic policy's own trajectory this recovers that trajectory's
/// return.
pub fn mixture_objective<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    policy: &TabularPolicy,
    weighting: &TrajectoryWeighting,
    gamma: f64,
) -> Result<f64> {
    let oracle =
        ExactGuidance::from_mdp(mdp, weighting, crate::envs::finite::DEFAULT_TRAJECTORY_CAP)?;
    smoothed_objective_with(&oracle, policy, gamma, true)
}

fn smoothed_objective_with(
    oracle: &ExactGuidance,
    policy: &TabularPolicy,
    gamma: f64,
    normalize_mixture: bool,
) -> Result<f64> {
    check_gamma(gamma)?;
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut total = 0.0;
    for traj in oracle.trajectories() {
        let p = policy.trajectory_prob(traj);
        if p == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        let mut mass = 0.0;
        let mut w = 1.0;
        for (s, a) in traj.pairs() {
            let rg = match cache.get(&(s, a)) {
                Some(&v) => v,
                None => {
                    let v = oracle.guidance(s, a)?;
                    cache.insert((s, a), v);
                    v
                }
            };
            inner += w * rg;
            mass += w;
            w *= gamma;
        }
        if normalize_mixture {
            inner /= mass;
        }
        total += p * inner;
    }
    Ok(total)
}

/// Discounted state-action visitation `rho_pi(s, a) = sum_t gamma^t P(s_t = s, a_t = a)`,
/// computed by forward propagation of the state distribution.
pub fn visitation<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    policy: &TabularPolicy,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_gamma(gamma)?;
    let mut rho = vec![vec![0.0; mdp.n_actions()]; mdp.n_states()];
    let mut dist = vec![0.0; mdp.n_states()];
    dist[mdp.start_state()] = 1.0;
    let mut w = 1.0;
    for t in 0..mdp.horizon() {
        let mut next = vec![0.0; mdp.n_states()];
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for a in mdp.actions(s) {
                let p = mass * policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                rho[s][a] += w * p;
                let (succ, terminal) = mdp.successor(s, a);
                if !terminal && t + 1 < mdp.horizon() {
                    next[succ] += p;
                }
            }
        }
        dist = next;
        w *= gamma;
    }
    Ok(rho)
}

/// `E_{(s,a) ~ rho_pi}[r_g(s, a)]`, the visitation-weighted form of
/// [`smoothed_objective`].
pub fn smoothed_objective_visitation<M: EnumerableMdp + ?Sized>(
    mdp: &M,
    policy: &TabularPolicy,
    weighting: &TrajectoryWeighting,
    gamma: f64,
) -> Result<f64> {
    let oracle =
        ExactGuidance::from_mdp(mdp, weighting, crate::envs::finite::DEFAULT_TRAJECTORY_CAP)?;
    let rho = visitation(mdp, policy, gamma)?;
    let mut total = 0.0;
    for (s, row) in rho.iter().enumerate() {
        for (a, &mass) in row.iter().enumerate() {
            if mass > 0.0 {
                total += mass * oracle.guidance(s, a)?;
            }
        }
    }
    Ok(total)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "discount must lie in [0, 1], got {gamma}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::diamond::{DiamondMdp, A1, A2, A3, A4, S1, S2};
    use crate::envs::finite::{FiniteMdp, DEFAULT_TRAJECTORY_CAP};
    use crate::mdp::Transition;

    fn stats_with(values: &[f64]) -> ReturnStats {
        let mut s = ReturnStats::new();
        values.iter().for_each(|&v| s.update(v).unwrap());
        s
    }

    fn traj(pairs: &[(usize, usize)], ret: f64) -> Trajectory<usize, usize> {
        let n = pairs.len();
        let transitions = pairs
            .iter()
            .enumerate()
            .map(|(i, &(s, a))| Transition {
                state: s,
                action: a,
                reward: if i + 1 == n { ret } else { 0.0 },
                next_state: s,
                terminal: i + 1 == n,
                truncated: false,
            })
            .collect();
        Trajectory::from_transitions(n.max(1), transitions).unwrap()
    }

    fn diamond() -> Vec<Trajectory<usize, usize>> {
        enumerate_trajectories(&DiamondMdp, DEFAULT_TRAJECTORY_CAP).unwrap()
    }

    #[test]
    fn update_stats_examples() {
        let s = stats_with(&[5.0]);
        assert_eq!((s.r_min(), s.r_max(), s.count()), (5.0, 5.0, 1));
        let mut s = stats_with(&[1.0, 3.0]);
        s.update(2.0).unwrap();
        assert_eq!((s.r_min(), s.r_max()), (1.0, 3.0));
        s.update(7.0).unwrap();
        assert_eq!((s.r_min(), s.r_max(), s.count()), (1.0, 7.0, 4));
        assert!(s.update(f64::NAN).is_err());
        assert_eq!(s.count(), 4);
    }

    #[test]
    fn normalize_examples() {
        let s = stats_with(&[1.0, 3.0]);
        assert_eq!(s.normalize(3.0).unwrap(), 1.0);
        assert_eq!(s.normalize(2.0).unwrap(), 0.5);
        assert_eq!(s.normalize(1.0).unwrap(), 0.0);
        assert_eq!(s.normalize(9.0).unwrap(), 1.0);
        assert_eq!(s.normalize(-9.0).unwrap(), 0.0);
        assert_eq!(stats_with(&[2.0, 2.0]).normalize(2.0).unwrap(), 0.5);
        assert!(matches!(
            ReturnStats::new().normalize(1.0),
            Err(Error::EmptyStats)
        ));
    }

    #[test]
    fn ingest_diamond_tau1() {
        let mut table = CreditTable::new();
        let mut stats = ReturnStats::new();
        table.ingest(&mut stats, &diamond()[0]).unwrap();
        assert_eq!(table.returns(S1, A1).unwrap(), &[1.0]);
        assert_eq!(table.returns(S2, A3).unwrap(), &[1.0]);
        assert!(table.returns(S1, A2).is_none());
        assert_eq!(stats.count(), 1);
    }

    #[test]
    fn ingest_is_a_multiset() {
        let mut table = CreditTable::new();
        let mut stats = ReturnStats::new();
        let t = diamond()[1].clone();
        table.ingest(&mut stats, &t).unwrap();
        table.ingest(&mut stats, &t).unwrap();
        assert_eq!(table.returns(S1, A1).unwrap(), &[3.0, 3.0]);
        assert_eq!(stats.count(), 2);
        // a pair visited twice in one episode is credited twice
        let mut table = CreditTable::new();
        table
            .ingest(&mut stats, &traj(&[(4, 1), (5, 0), (4, 1)], 2.5))
            .unwrap();
        assert_eq!(table.returns(4, 1).unwrap(), &[2.5, 2.5]);
        assert_eq!(table.count(5, 0), 1);
    }

    #[test]
    fn guidance_reward_examples() {
        let mut table = CreditTable::new();
        let mut stats = ReturnStats::new();
        assert_eq!(table.guidance_reward(&stats, 0, 0), 0.0);
        table.ingest_pairs(&mut stats, [(0, 0)], 1.0).unwrap();
        table
            .ingest_pairs(&mut stats, [(0, 0), (1, 1)], 3.0)
            .unwrap();
        table.ingest_pairs(&mut stats, [(1, 1)], 3.0).unwrap();
        assert_eq!(table.guidance_reward(&stats, 0, 0), 0.5);
        assert_eq!(table.guidance_reward(&stats, 1, 1), 1.0);
        assert_eq!(table.guidance_reward(&stats, 2, 2), 0.0);
        assert!(!table.would_clip(&stats));
    }

    #[test]
    fn guidance_reward_with_degenerate_spread() {
        let mut table = CreditTable::new();
        let mut stats = ReturnStats::new();
        table.ingest_pairs(&mut stats, [(0, 0)], 4.0).unwrap();
        assert_eq!(table.guidance_reward(&stats, 0, 0), 0.5);
    }

    #[test]
    fn lagging_stats_clip_per_entry() {
        let mut table = CreditTable::new();
        let mut stats = ReturnStats::new();
        table.ingest_pairs(&mut stats, [(0, 0)], 0.0).unwrap();
        table.ingest_pairs(&mut stats, [(0, 0)], 10.0).unwrap();
        // statistics that lag behind the stored returns
        let lagging = ReturnStats::from_parts(2.0, 4.0, 1).unwrap();
        assert!(table.would_clip(&lagging));
        assert_eq!(table.guidance_reward(&lagging, 0, 0), 0.5);
        let mut running = CreditTable::with_mode(BufferMode::RunningMean);
        let mut s2 = ReturnStats::new();
        running.ingest_pairs(&mut s2, [(0, 0)], 0.0).unwrap();
        running.ingest_pairs(&mut s2, [(0, 0)], 10.0).unwrap();
        assert_eq!(running.guidance_reward(&s2, 0, 0), 0.5);
        assert_eq!(running.guidance_reward(&lagging, 0, 0), 1.0);
    }

    #[test]
    fn running_mean_mode_matches_unbounded_in_normal_use() {
        let mut full = CreditTable::new();
        let mut lean = CreditTable::with_mode(BufferMode::RunningMean);
        let (mut s1, mut s2) = (ReturnStats::new(), ReturnStats::new());
        for (i, r) in [3.0, -1.0, 4.0, 1.5, 9.0, 2.0].into_iter().enumerate() {
            let pairs = [(i % 3, 0), (i % 2, 1)];
            full.ingest_pairs(&mut s1, pairs, r).unwrap();
            lean.ingest_pairs(&mut s2, pairs, r).unwrap();
        }
        for key in full.keys() {
            let a = full.guidance_reward(&s1, key.0, key.1);
            let b = lean.guidance_reward(&s2, key.0, key.1);
            assert!((a - b).abs() < 1e-15);
        }
        assert!(lean.returns(0, 0).is_none());
    }

    #[test]
    fn snapshot_round_trip() {
        for mode in [BufferMode::Unbounded, BufferMode::RunningMean] {
            let mut table = CreditTable::with_mode(mode);
            let mut stats = ReturnStats::new();
            table
                .ingest_pairs(&mut stats, [(0, 1), (2, 3)], -0.1)
                .unwrap();
            table.ingest_pairs(&mut stats, [(0, 1)], 1.0 / 3.0).unwrap();
            let mut buf = Vec::new();
            table.export_snapshot(&stats, &mut buf).unwrap();
            let (back, stats2) = CreditTable::import_snapshot(buf.as_slice()).unwrap();
            assert_eq!(stats2, stats);
            assert_eq!(back.mode(), mode);
            for (s, a) in table.keys() {
                assert_eq!(back.count(s, a), table.count(s, a));
                assert_eq!(
                    back.guidance_reward(&stats2, s, a),
                    table.guidance_reward(&stats, s, a)
                );
            }
        }
        assert!(CreditTable::import_snapshot("0\t0\t1\t1\t1\t1\t1\n".as_bytes()).is_err());
        assert!(
            CreditTable::import_snapshot("stats\t0\t1\t2\n0\tx\t1\t1\t1\t1\t1\n".as_bytes())
                .is_err()
        );
    }

    #[test]
    fn exact_guidance_diamond_uniform() {
        let w = TrajectoryWeighting::Uniform;
        assert_eq!(exact_guidance(&DiamondMdp, &w, S1, A1).unwrap(), 2.0);
        assert_eq!(exact_guidance(&DiamondMdp, &w, S1, A2).unwrap(), 1.0);
        assert_eq!(exact_guidance(&DiamondMdp, &w, S2, A3).unwrap(), 1.0);
        assert_eq!(exact_guidance(&DiamondMdp, &w, S2, A4).unwrap(), 2.0);
    }

    #[test]
    fn exact_guidance_diamond_rounded_exponential() {
        let w = TrajectoryWeighting::Explicit(vec![0.1, 0.7, 0.1, 0.1]);
        let g = |s, a| exact_guidance(&DiamondMdp, &w, s, a).unwrap();
        assert!((g(S1, A1) - 2.75).abs() < 1e-12);
        assert!((g(S1, A2) - 1.0).abs() < 1e-12);
        assert!((g(S2, A3) - 1.0).abs() < 1e-12);
        assert!((g(S2, A4) - 2.75).abs() < 1e-12);
    }

    #[test]
    fn exact_guidance_diamond_exponential() {
        let e2 = std::f64::consts::E.powi(2);
        let expected = (1.0 + 3.0 * e2) / (1.0 + e2);
        let g = exact_guidance(&DiamondMdp, &TrajectoryWeighting::Exponential, S1, A1).unwrap();
        assert!((g - expected).abs() < 1e-12);
        assert!((g - 2.7616).abs() < 1e-4);
    }

    #[test]
    fn exact_guidance_uncovered_pair() {
        let w = TrajectoryWeighting::Explicit(vec![0.5, 0.5, 0.0, 0.0]);
        let err = exact_guidance(&DiamondMdp, &w, S1, A2).unwrap_err();
        assert!(matches!(
            err,
            Error::UncoveredPair {
                state: 0,
                action: 1
            }
        ));
        // never-taken action
        assert!(exact_guidance(&DiamondMdp, &TrajectoryWeighting::Uniform, S1, A3).is_err());
    }

    #[test]
    fn explicit_weights_are_validated() {
        let trajs = diamond();
        assert!(TrajectoryWeighting::Explicit(vec![0.5, 0.5, 0.5, -0.5])
            .weights(&trajs)
            .is_err());
        assert!(TrajectoryWeighting::Explicit(vec![0.3, 0.3, 0.3, 0.3])
            .weights(&trajs)
            .is_err());
        assert!(TrajectoryWeighting::Explicit(vec![1.0])
            .weights(&trajs)
            .is_err());
    }

    #[test]
    fn mc_guidance_examples() {
        let all = diamond();
        assert_eq!(mc_guidance(&all[..2], S1, A1), 2.0);
        assert_eq!(mc_guidance(&all[..1], S1, A2), 0.0);
    }

    #[test]
    fn mc_matches_exact_uniform_bit_for_bit() {
        let mut rng = crate::seed::rng(17, "mc-exact");
        for _ in 0..20 {
            let mdp = FiniteMdp::random(&mut rng, 10, 3, 5);
            let oracle = ExactGuidance::from_mdp(
                &mdp,
                &TrajectoryWeighting::Uniform,
                DEFAULT_TRAJECTORY_CAP,
            )
            .unwrap();
            for s in 0..10 {
                for a in 0..3 {
                    let mc = mc_guidance(oracle.trajectories(), s, a);
                    match oracle.guidance(s, a) {
                        Ok(exact) => assert_eq!(mc.to_bits(), exact.to_bits()),
                        Err(_) => assert_eq!(mc, 0.0),
                    }
                }
            }
        }
    }

    #[test]
    fn smoothed_objective_diamond_uniform() {
        let pi = TabularPolicy::uniform(&DiamondMdp);
        let w = TrajectoryWeighting::Uniform;
        let v = smoothed_objective(&DiamondMdp, &pi, &w, 1.0).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        let v2 = smoothed_objective_visitation(&DiamondMdp, &pi, &w, 1.0).unwrap();
        assert!((v - v2).abs() < 1e-10);
    }

    #[test]
    fn delta_weighting_recovers_return() {
        // deterministic policy a1 then a4 follows tau2 (return 3)
        let pi = TabularPolicy::deterministic(&DiamondMdp, &[A1, A4, 0, 0]).unwrap();
        let delta = TrajectoryWeighting::Explicit(vec![0.0, 1.0, 0.0, 0.0]);
        let v = mixture_objective(&DiamondMdp, &pi, &delta, 1.0).unwrap();
        assert_eq!(v, 3.0);
        for gamma in [0.0, 0.5, 0.9] {
            let v = mixture_objective(&DiamondMdp, &pi, &delta, gamma).unwrap();
            assert!((v - 3.0).abs() < 1e-12);
        }
        // the unnormalized sum counts the return once per visited step
        assert_eq!(
            smoothed_objective(&DiamondMdp, &pi, &delta, 1.0).unwrap(),
            6.0
        );
    }

    #[test]
    fn smoothed_objective_errors_only_for_reachable_uncovered_pairs() {
        let delta = TrajectoryWeighting::Explicit(vec![0.0, 1.0, 0.0, 0.0]);
        let uniform = TabularPolicy::uniform(&DiamondMdp);
        assert!(smoothed_objective(&DiamondMdp, &uniform, &delta, 1.0).is_err());
        assert!(smoothed_objective_visitation(&DiamondMdp, &uniform, &delta, 1.0).is_err());
    }

    #[test]
    fn smoothed_objective_two_routes_agree_on_random_mdps() {
        let mut rng = crate::seed::rng(23, "a1-identity");
        for i in 0..20 {
            let mdp = FiniteMdp::random(&mut rng, 10, 3, 5);
            let pi = TabularPolicy::uniform(&mdp);
            for (w, gamma) in [
                (TrajectoryWeighting::Uniform, 0.9),
                (TrajectoryWeighting::Exponential, 1.0),
                (TrajectoryWeighting::Uniform, 0.0),
            ] {
                let a = smoothed_objective(&mdp, &pi, &w, gamma).unwrap();
                let b = smoothed_objective_visitation(&mdp, &pi, &w, gamma).unwrap();
                assert!((a - b).abs() < 1e-10, "mdp {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn policy_validation() {
        assert!(TabularPolicy::new(&DiamondMdp, vec![vec![0.5, 0.5, 0.0, 0.0]; 4]).is_err());
        let mut rows = vec![vec![0.0; 4]; 4];
        rows[S1] = vec![0.5, 0.5, 0.0, 0.0];
        rows[S2] = vec![0.0, 0.0, 0.2, 0.8];
        assert!(TabularPolicy::new(&DiamondMdp, rows.clone()).is_ok());
        rows[S2] = vec![0.0, 0.0, 0.2, 0.7];
        assert!(TabularPolicy::new(&DiamondMdp, rows).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn episodes() -> impl Strategy<Value = Vec<(Vec<(usize, usize)>, f64)>> {
            prop::collection::vec(
                (
                    prop::collection::vec((0usize..6, 0usize..3), 1..8),
                    -50.0f64..50.0,
                ),
                1..25,
            )
        }

        proptest! {
            #[test]
            fn guidance_in_unit_interval(eps in episodes(), s in 0usize..6, a in 0usize..3) {
                let mut table = CreditTable::new();
                let mut stats = ReturnStats::new();
                for (pairs, r) in &eps {
                    table.ingest_pairs(&mut stats, pairs.iter().copied(), *r).unwrap();
                }
                let g = table.guidance_reward(&stats, s, a);
                prop_assert!((0.0..=1.0).contains(&g));
                if table.count(s, a) == 0 {
                    prop_assert_eq!(g, 0.0);
                }
                prop_assert!(!table.would_clip(&stats));
            }

            #[test]
            fn increasing_affine_maps_leave_guidance_unchanged(
                eps in episodes(),
                scale in 0.01f64..100.0,
                shift in -100.0f64..100.0,
            ) {
                let mut t1 = CreditTable::new();
                let mut t2 = CreditTable::new();
                let (mut s1, mut s2) = (ReturnStats::new(), ReturnStats::new());
                for (pairs, r) in &eps {
                    t1.ingest_pairs(&mut s1, pairs.iter().copied(), *r).unwrap();
                    t2.ingest_pairs(&mut s2, pairs.iter().copied(), scale * r + shift).unwrap();
                }
                for (s, a) in t1.keys() {
                    let g1 = t1.guidance_reward(&s1, s, a);
                    let g2 = t2.guidance_reward(&s2, s, a);
                    prop_assert!((g1 - g2).abs() < 1e-9, "{} vs {}", g1, g2);
                }
            }
        }
    }
}
