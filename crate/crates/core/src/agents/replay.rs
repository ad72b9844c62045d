//! Replay whose tuples carry the return of their source episode.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::credit::{ReturnStats, RewardSource};
use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::seed::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    /// FIFO capacity in transitions.
    pub capacity: usize,
    /// Number of highest-return episodes kept aside.
    pub elite_episodes: usize,
    /// Probability of drawing from the elite store. `None` samples
    /// uniformly over the union of both stores.
    pub elite_fraction: Option<f64>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 50_000,
            elite_episodes: 10,
            elite_fraction: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggedTransition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    /// Environmental per-step reward.
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    /// Undiscounted return of the source episode.
    pub episode_return: f64,
}

#[derive(Clone, Debug)]
struct EliteEpisode {
    ret: f64,
    seq: u64,
    transitions: Vec<TaggedTransition>,
}

impl PartialEq for EliteEpisode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for EliteEpisode {}

impl PartialOrd for EliteEpisode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EliteEpisode {
    // among equal returns the older episode ranks lower and leaves first
    fn cmp(&self, other: &Self) -> Ordering {
        self.ret
            .total_cmp(&other.ret)
            .then(self.seq.cmp(&other.seq))
    }
}

/// A sampled minibatch, one row per tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_obs: Array2<f64>,
    /// Guidance or environmental reward, depending on the sampling mode.
    pub rewards: Array1<f64>,
    /// 1 for true terminals, 0 otherwise (time-limit cuts bootstrap).
    pub terminal: Array1<f64>,
    pub returns: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(rows: &[&TaggedTransition], rewards: Vec<f64>) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyBuffer)?;
        let (od, ad) = (first.obs.len(), first.action.len());
        let matrix = |dim: usize, f: &dyn Fn(&TaggedTransition) -> &[f64]| -> Result<Array2<f64>> {
            let mut data = Vec::with_capacity(rows.len() * dim);
            for r in rows {
                let v = f(r);
                if v.len() != dim {
                    return Err(Error::Shape("ragged transitions in batch".into()));
                }
                data.extend_from_slice(v);
            }
            Array2::from_shape_vec((rows.len(), dim), data).map_err(|e| Error::Shape(e.to_string()))
        };
        Ok(Self {
            obs: matrix(od, &|t| &t.obs)?,
            actions: matrix(ad, &|t| &t.action)?,
            next_obs: matrix(od, &|t| &t.next_obs)?,
            rewards: Array1::from(rewards),
            terminal: rows
                .iter()
                .map(|t| if t.terminal { 1.0 } else { 0.0 })
                .collect(),
            returns: rows.iter().map(|t| t.episode_return).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReturnTaggedReplay {
    cfg: ReplayConfig,
    fifo: VecDeque<TaggedTransition>,
    elite: BinaryHeap<Reverse<EliteEpisode>>,
    elite_len: usize,
    seq: u64,
    stats: ReturnStats,
}

impl ReturnTaggedReplay {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        if cfg.capacity == 0 {
            return Err(Error::InvalidArgument(
                "replay capacity must be positive".into(),
            ));
        }
        if let Some(f) = cfg.elite_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "elite fraction {f} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            fifo: VecDeque::with_capacity(cfg.capacity.min(1 << 16)),
            elite: BinaryHeap::new(),
            elite_len: 0,
            seq: 0,
            stats: ReturnStats::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ReturnStats {
        &self.stats
    }

    pub fn fifo_len(&self) -> usize {
        self.fifo.len()
    }

    /// Transitions held by the elite store.
    pub fn elite_len(&self) -> usize {
        self.elite_len
    }

    pub fn len(&self) -> usize {
        self.fifo.len() + self.elite_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns of the elite episodes, highest first.
    pub fn elite_returns(&self) -> Vec<f64> {
        let mut r: Vec<f64> = self.elite.iter().map(|e| e.0.ret).collect();
        r.sort_by(|a, b| b.total_cmp(a));
        r
    }

    /// Appends a finished episode, tagging every transition with its return,
    /// offers it to the elite store and updates the return statistics.
    pub fn insert_episode(&mut self, episode: &Trajectory<Vec<f64>, Vec<f64>>) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot insert an empty episode".into(),
            ));
        }
        let ret = episode.undiscounted_return();
        self.stats.update(ret)?;
        let tagged: Vec<TaggedTransition> = episode
            .transitions()
            .iter()
            .map(|t| TaggedTransition {
                obs: t.state.clone(),
                action: t.action.clone(),
                reward: t.reward,
                next_obs: t.next_state.clone(),
                terminal: t.terminal,
                episode_return: ret,
            })
            .collect();
        self.seq += 1;
        if self.cfg.elite_episodes > 0 {
            let candidate = EliteEpisode {
                ret,
                seq: self.seq,
                transitions: tagged.clone(),
            };
            if self.elite.len() < self.cfg.elite_episodes {
                self.elite_len += candidate.transitions.len();
                self.elite.push(Reverse(candidate));
            } else if self.elite.peek().is_some_and(|min| candidate > min.0) {
                let evicted = self.elite.pop().expect("nonempty heap");
                self.elite_len -= evicted.0.transitions.len();
                self.elite_len += candidate.transitions.len();
                self.elite.push(Reverse(candidate));
            }
        }
        for t in tagged {
            if self.fifo.len() == self.cfg.capacity {
                self.fifo.pop_front();
            }
            self.fifo.push_back(t);
        }
        Ok(())
    }

    fn elite_at(&self, mut idx: usize) -> &TaggedTransition {
        for e in self.elite.iter() {
            if idx < e.0.transitions.len() {
                return &e.0.transitions[idx];
            }
            idx -= e.0.transitions.len();
        }
        unreachable!("elite index out of range")
    }

    fn draw<'a>(&'a self, rng: &mut Rng) -> &'a TaggedTransition {
        let from_elite = match self.cfg.elite_fraction {
            _ if self.elite_len == 0 => false,
            _ if self.fifo.is_empty() => true,
            Some(f) => rng.random_bool(f),
            None => rng.random_range(0..self.len()) >= self.fifo.len(),
        };
        if from_elite {
            self.elite_at(rng.random_range(0..self.elite_len))
        } else {
            &self.fifo[rng.random_range(0..self.fifo.len())]
        }
    }

    /// Samples `size` tuples with replacement. In guidance mode each reward
    /// is the source episode's return normalized with the current statistics.
    pub fn sample(&self, size: usize, source: RewardSource, rng: &mut Rng) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let rows: Vec<&TaggedTransition> = (0..size).map(|_| self.draw(rng)).collect();
        let rewards = rows
            .iter()
            .map(|t| match source {
                RewardSource::Guidance => self.stats.normalize(t.episode_return),
                RewardSource::Environmental => Ok(t.reward),
            })
            .collect::<Result<Vec<f64>>>()?;
        Batch::from_transitions(&rows, rewards)
    }
}
