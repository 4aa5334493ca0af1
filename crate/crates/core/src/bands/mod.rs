//! Bootstrap calibration and the two-stage intervals.
//!
//! Both intervals first keep every policy whose primary upper confidence
//! bound reaches the largest lower bound, then take the extreme subsidiary
//! bounds over the kept set. The union method splits the error budget
//! between the two stages (`t_beta`, `z_{alpha,beta}`); the joint method
//! calibrates `(s, t, u)` together from the bootstrap.

mod bootstrap;
mod intervals;
mod optimize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::PolicyEstimates;
use crate::model::{z_alpha_beta, Cutoffs, Interval, Outcome};

pub use bootstrap::{multiplier_bootstrap, raw_multiplier_draws, sup_draws, sup_quantile, BootstrapDraws, MIN_REPLICATES};
pub use intervals::{
    filter_policies, first_stage_set, interval_over, joint_ci, joint_cutoffs, joint_cutoffs_with, shortest_joint_ci,
    union_ci, FilteredSet, JointCutoffs, JointFrontier, LowerBoundRule, DEFAULT_T_GRID,
};
pub use optimize::{extend_with_estimated_optimum, optimize_over_class, PolicyClass};

/// Which feasible joint cutoff triple to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JointSelection {
    /// The frontier point with the smallest `u`.
    MinU,
    /// Whichever certified triple (frontier points and the union method's
    /// `(t_beta, t_beta, z_{alpha,beta})`) yields the shortest interval.
    #[default]
    Shortest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub beta: f64,
    pub t_grid: usize,
    pub seed: u64,
    #[serde(default)]
    pub selection: JointSelection,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { b: 1000, alpha: 0.05, beta: 0.01, t_grid: DEFAULT_T_GRID, seed: 0, selection: JointSelection::default() }
    }
}

impl BandConfig {
    pub fn validate(&self) -> Result<()> {
        z_alpha_beta(self.alpha, self.beta)?;
        if self.b < MIN_REPLICATES {
            return Err(Error::invalid(format!("B must be at least {MIN_REPLICATES}, got {}", self.b)));
        }
        if self.t_grid < 1 {
            return Err(Error::invalid("t grid must have at least one point"));
        }
        Ok(())
    }
}

/// Cutoffs, kept sets and intervals of both two-stage methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub cutoffs: Cutoffs,
    pub l_n: f64,
    pub kept_union: Vec<usize>,
    pub kept_joint: Vec<usize>,
    pub union: Interval,
    pub joint: Interval,
    pub frontier: Vec<JointCutoffs>,
}

impl BandResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs the bootstrap and both interval constructions.
pub fn run_bands(est: &PolicyEstimates, cfg: &BandConfig) -> Result<BandResult> {
    cfg.validate()?;
    let draws = multiplier_bootstrap(est, cfg.b, cfg.seed)?;
    bands_from_draws(est, &draws, cfg)
}

pub fn bands_from_draws(est: &PolicyEstimates, draws: &BootstrapDraws, cfg: &BandConfig) -> Result<BandResult> {
    cfg.validate()?;
    let t_beta = sup_quantile(draws, Outcome::Primary, 1.0 - cfg.beta / 2.0)?;
    let z = z_alpha_beta(cfg.alpha, cfg.beta)?;
    let filtered = first_stage_set(est, t_beta, LowerBoundRule::SupLcb)?;
    let union = union_ci(est, &filtered, cfg.alpha, cfg.beta)?;

    let frontier = joint_cutoffs_with(draws, cfg.alpha, cfg.t_grid, &[t_beta])?;
    let (chosen, joint) = match cfg.selection {
        JointSelection::MinU => (frontier.chosen, joint_ci(est, frontier.chosen)?),
        JointSelection::Shortest => {
            let mut triples = frontier.candidates.clone();
            triples.push(JointCutoffs { s: t_beta, t: t_beta, u: z });
            shortest_joint_ci(est, &triples)?
        }
    };
    let kept_joint =
        filter_policies(&est.omega_hat, &est.sigma_hat, est.n(), chosen.s, chosen.t, LowerBoundRule::SupLcb)?.kept;

    Ok(BandResult {
        cutoffs: Cutoffs { t_beta, z_alpha_beta: z, s_dag: chosen.s, t_dag: chosen.t, u_dag: chosen.u },
        l_n: filtered.l_n,
        kept_union: filtered.kept,
        kept_joint,
        union,
        joint,
        frontier: frontier.candidates,
    })
}
