//! Experiment configuration.
//!
//! A config file is TOML. The optional top-level `include` array names other
//! config files (relative to the including file) that are loaded first and
//! deep-merged underneath it: tables merge key by key, every other value is
//! replaced by the including file's value.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use ircr_core::agents::{AgentKind, TrainConfig};
use ircr_core::envs::{GridConfig, PointMassConfig, RoverConfig};
use ircr_core::tabular::TabularConfig;
use ircr_core::RewardSource;

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Gridworld,
    Pointmass,
    Rover,
}

impl EnvKind {
    pub fn is_tabular(self) -> bool {
        self == Self::Gridworld
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub pointmass: PointMassConfig,
    #[serde(default)]
    pub rover: RoverConfig,
    /// Reward delay `k` applied to tabular environments.
    #[serde(default)]
    pub delay: Option<usize>,
    /// Pay the whole return on the last step (tabular environments).
    #[serde(default)]
    pub episodic: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub reward: RewardSource,
    /// Learner for continuous environments; tabular environments always use
    /// Q-learning.
    #[serde(default)]
    pub agent: Option<AgentKind>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seeds: Vec<u64>,
    /// Output directory; defaults to `runs/<name>`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Number of cells run concurrently.
    #[serde(default = "one")]
    pub jobs: usize,
    /// Tabular runs: record the trailing-mean return every this many episodes.
    #[serde(default = "hundred")]
    pub metric_every: usize,
    pub env: EnvConfig,
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub tabular: TabularConfig,
}

fn one() -> usize {
    1
}

fn hundred() -> usize {
    100
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut stack = Vec::new();
        let mut sources = Vec::new();
        let table = load_merged(path, &mut stack, &mut sources)?;
        let cfg: Self = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let leaf = key.rsplit('.').next().unwrap_or("").to_string();
            let (file, line) =
                locate_key(&sources, &leaf).unwrap_or_else(|| (path.to_path_buf(), 0));
            CliError::Config {
                path: file,
                line,
                column: 0,
                key: Some(key),
                message: e.into_inner().message().to_string(),
            }
        })?;
        cfg.validate().map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            key: None,
            message,
        })?;
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(&self.name))
    }

    /// The training configuration of one variant.
    pub fn train_config(&self, variant: &Variant) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.reward = variant.reward;
        if let Some(agent) = variant.agent {
            cfg.agent = agent;
        }
        cfg
    }

    pub fn tabular_config(&self, variant: &Variant) -> TabularConfig {
        TabularConfig {
            reward: variant.reward,
            ..self.tabular.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version != CONFIG_VERSION {
            return Err(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.seeds.is_empty() {
            return Err("`seeds` is empty".into());
        }
        if self.variants.is_empty() {
            return Err("`variants` is empty".into());
        }
        if self.jobs == 0 || self.metric_every == 0 {
            return Err("`jobs` and `metric_every` must be positive".into());
        }
        let mut names = BTreeSet::new();
        for v in &self.variants {
            let ok = !v.name.is_empty()
                && v.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            if !ok {
                return Err(format!(
                    "variant name {:?} must be non-empty ASCII letters, digits, '-' or '_'",
                    v.name
                ));
            }
            if !names.insert(v.name.as_str()) {
                return Err(format!("duplicate variant name {:?}", v.name));
            }
            if self.env.kind.is_tabular() {
                if v.agent.is_some() {
                    return Err(format!(
                        "variant {:?}: tabular environments do not take an `agent`",
                        v.name
                    ));
                }
            } else {
                self.train_config(v)
                    .validate()
                    .map_err(|e| format!("variant {:?}: {e}", v.name))?;
                if self.env.kind == EnvKind::Pointmass
                    && matches!(
                        self.train_config(v).agent,
                        AgentKind::MaTd3 | AgentKind::MaC51
                    )
                {
                    return Err(format!(
                        "variant {:?}: multi-agent learners need the rover environment",
                        v.name
                    ));
                }
            }
        }
        if !self.env.kind.is_tabular() && (self.env.delay.is_some() || self.env.episodic) {
            return Err("`env.delay` and `env.episodic` apply to tabular environments only".into());
        }
        if self.env.delay == Some(0) {
            return Err("`env.delay` must be at least 1".into());
        }
        Ok(())
    }
}

/// Parses one TOML file, mapping syntax errors to line and column.
pub fn parse_table(path: &Path, text: &str) -> Result<Table, CliError> {
    text.parse::<Table>().map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        CliError::Config {
            path: path.to_path_buf(),
            line,
            column,
            key: None,
            message: e.message().to_string(),
        }
    })
}

/// 1-based line and column of byte `offset`.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn load_merged(
    path: &Path,
    stack: &mut Vec<PathBuf>,
    sources: &mut Vec<(PathBuf, String)>,
) -> Result<Table, CliError> {
    let io_err = |e: std::io::Error| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let canonical = fs::canonicalize(path).map_err(io_err)?;
    if stack.contains(&canonical) {
        return Err(CliError::Config {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            key: Some("include".into()),
            message: "include cycle".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(io_err)?;
    let mut table = parse_table(path, &text)?;
    sources.push((path.to_path_buf(), text));

    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(other),
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|v| CliError::Config {
                path: path.to_path_buf(),
                line: 0,
                column: 0,
                key: Some("include".into()),
                message: format!("expected a path string, found {v}"),
            })?,
        Some(_) => {
            return Err(CliError::Config {
                path: path.to_path_buf(),
                line: 0,
                column: 0,
                key: Some("include".into()),
                message: "`include` must be an array of paths".into(),
            })
        }
    };

    stack.push(canonical);
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = Table::new();
    for inc in includes {
        let inc_table = load_merged(&base_dir.join(inc), stack, sources)?;
        deep_merge(&mut merged, inc_table);
    }
    stack.pop();
    deep_merge(&mut merged, table);
    Ok(merged)
}

/// Merges `over` into `base`; nested tables merge, other values replace.
pub fn deep_merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Last line (across the loaded files, in load order) assigning `key`.
fn locate_key(sources: &[(PathBuf, String)], key: &str) -> Option<(PathBuf, usize)> {
    if key.is_empty() {
        return None;
    }
    let mut found = None;
    for (path, text) in sources {
        for (i, line) in text.lines().enumerate() {
            let t = line.trim_start();
            let hit = t
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || t.trim_start_matches('[')
                    .trim_end_matches(']')
                    .rsplit('.')
                    .next()
                    == Some(key);
            if hit {
                found = Some((path.clone(), i + 1));
            }
        }
    }
    found
}
