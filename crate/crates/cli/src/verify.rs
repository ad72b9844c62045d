//! Oracle checks: exact guidance values on the diamond MDP, Monte-Carlo
//! versus exact estimators, the two forms of the smoothed objective, and
//! convergence of sampled estimates.

use std::fmt::Write as _;

use rand::Rng as _;

use ircr_core::credit::{
    mc_guidance, smoothed_objective, smoothed_objective_visitation, ExactGuidance, TabularPolicy,
};
use ircr_core::envs::diamond::{DiamondMdp, A1, A2, A3, A4, S1, S2};
use ircr_core::envs::finite::DEFAULT_TRAJECTORY_CAP;
use ircr_core::envs::{EnumerableMdp, FiniteMdp};
use ircr_core::mdp::run_episode;
use ircr_core::seed;
use ircr_core::TrajectoryWeighting;

use crate::error::CliError;

/// Deliberate corruption used to check that the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the normalizing constant of the exact estimator by `1 + 1e-3`.
    Normalization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub expected: f64,
    pub computed: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        (self.expected - self.computed).abs() <= self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<CheckRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.passed()).count()
    }

    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "{:<width$}  {:>20}  {:>20}  {:>9}  result\n",
            "check", "expected", "computed", "tolerance"
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<width$}  {:>20.15}  {:>20.15}  {:>9.1e}  {}",
                r.name,
                r.expected,
                r.computed,
                r.tolerance,
                if r.passed() { "ok" } else { "FAIL" }
            )
            .unwrap();
        }
        s
    }

    pub fn into_result(self) -> Result<Self, CliError> {
        if self.passed() {
            Ok(self)
        } else {
            Err(CliError::Verify(format!(
                "{} of {} checks failed",
                self.failures(),
                self.rows.len()
            )))
        }
    }
}

struct Oracle {
    inner: ExactGuidance,
    scale: f64,
}

impl Oracle {
    fn new<M: EnumerableMdp + ?Sized>(
        mdp: &M,
        w: &TrajectoryWeighting,
        fault: Option<Fault>,
    ) -> Result<Self, CliError> {
        Ok(Self {
            inner: ExactGuidance::from_mdp(mdp, w, DEFAULT_TRAJECTORY_CAP)?,
            scale: match fault {
                Some(Fault::Normalization) => 1.0 / (1.0 + 1e-3),
                None => 1.0,
            },
        })
    }

    fn guidance(&self, s: usize, a: usize) -> Result<f64, CliError> {
        Ok(self.inner.guidance(s, a)? * self.scale)
    }
}

const DIAMOND_PAIRS: [(usize, usize, &str); 4] = [
    (S1, A1, "s1,a1"),
    (S1, A2, "s1,a2"),
    (S2, A3, "s2,a3"),
    (S2, A4, "s2,a4"),
];

fn random_mdps() -> Vec<FiniteMdp> {
    let mut rng = seed::rng(2024, "verify-mdps");
    (0..20)
        .map(|_| {
            let s = rng.random_range(2..=10);
            let a = rng.random_range(1..=3);
            let h = rng.random_range(1..=5);
            FiniteMdp::random(&mut rng, s, a, h)
        })
        .collect()
}

/// Pairs whose sampled estimate differs from the exact value.
fn estimator_mismatches<M: EnumerableMdp>(
    mdp: &M,
    fault: Option<Fault>,
) -> Result<(usize, usize), CliError> {
    let oracle = Oracle::new(mdp, &TrajectoryWeighting::Uniform, fault)?;
    let (mut checked, mut bad) = (0, 0);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mc = mc_guidance(oracle.inner.trajectories(), s, a);
            let ok = match oracle.guidance(s, a) {
                Ok(exact) => mc.to_bits() == exact.to_bits(),
                Err(_) => mc == 0.0,
            };
            checked += 1;
            bad += usize::from(!ok);
        }
    }
    Ok((checked, bad))
}

pub fn verify_oracles(fault: Option<Fault>) -> Result<VerifyReport, CliError> {
    let mut rows = Vec::new();
    let mut row = |name: String, expected: f64, computed: f64, tolerance: f64| {
        rows.push(CheckRow {
            name,
            expected,
            computed,
            tolerance,
        })
    };

    let uniform = Oracle::new(&DiamondMdp, &TrajectoryWeighting::Uniform, fault)?;
    for ((s, a, label), want) in DIAMOND_PAIRS.iter().zip([2.0, 1.0, 1.0, 2.0]) {
        row(
            format!("diamond uniform r_g({label})"),
            want,
            uniform.guidance(*s, *a)?,
            1e-12,
        );
    }
    let rounded = Oracle::new(
        &DiamondMdp,
        &TrajectoryWeighting::Explicit(vec![0.1, 0.7, 0.1, 0.1]),
        fault,
    )?;
    for ((s, a, label), want) in DIAMOND_PAIRS.iter().zip([2.75, 1.0, 1.0, 2.75]) {
        row(
            format!("diamond rounded-exp r_g({label})"),
            want,
            rounded.guidance(*s, *a)?,
            1e-12,
        );
    }
    let e2 = std::f64::consts::E.powi(2);
    let exp = Oracle::new(&DiamondMdp, &TrajectoryWeighting::Exponential, fault)?;
    row(
        "diamond exp r_g(s1,a1)".into(),
        (1.0 + 3.0 * e2) / (1.0 + e2),
        exp.guidance(S1, A1)?,
        1e-9,
    );

    let (mut checked, mut bad) = estimator_mismatches(&DiamondMdp, fault)?;
    let mdps = random_mdps();
    for mdp in &mdps {
        let (c, b) = estimator_mismatches(mdp, fault)?;
        checked += c;
        bad += b;
    }
    row(
        format!("sampled = exact, mismatches of {checked}"),
        0.0,
        bad as f64,
        0.0,
    );

    let mut worst = 0.0f64;
    for (w, gamma) in [
        (TrajectoryWeighting::Uniform, 1.0),
        (TrajectoryWeighting::Uniform, 0.9),
        (TrajectoryWeighting::Exponential, 0.99),
    ] {
        let pi = TabularPolicy::uniform(&DiamondMdp);
        worst = worst.max(
            (smoothed_objective(&DiamondMdp, &pi, &w, gamma)?
                - smoothed_objective_visitation(&DiamondMdp, &pi, &w, gamma)?)
            .abs(),
        );
        for mdp in &mdps {
            let pi = TabularPolicy::uniform(mdp);
            worst = worst.max(
                (smoothed_objective(mdp, &pi, &w, gamma)?
                    - smoothed_objective_visitation(mdp, &pi, &w, gamma)?)
                .abs(),
            );
        }
    }
    row("objective: per-step - visitation".into(), 0.0, worst, 1e-10);

    // a uniformly random policy draws each diamond trajectory with
    // probability 1/4, i.e. the uniform weighting
    let mut env = DiamondMdp.env()?;
    let trajs = (0..20_000u64)
        .map(|i| {
            run_episode(
                &mut env,
                |s: &usize, rng| {
                    let acts = DiamondMdp.actions(*s);
                    acts[rng.random_range(0..acts.len())]
                },
                2,
                seed::derive_indexed(7, "verify-sampling", i),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut gap = 0.0f64;
    for (s, a, _) in DIAMOND_PAIRS {
        gap = gap.max((mc_guidance(&trajs, s, a) - uniform.guidance(s, a)?).abs());
    }
    row("sampled estimate, 20000 episodes".into(), 0.0, gap, 0.05);

    Ok(VerifyReport { rows })
}
