//! AIPW value estimates and influence values, the plug-in optimal policy,
//! and Wald intervals built around it.
//!
//! For an outcome `y` with regression `m` and propensity `p`, the
//! pseudo-outcome of observation `i` under action `d` is
//!
//! ```text
//! v_i(d) = 1{a_i = d} / p(a_i|x_i) * (y_i - m(a_i, x_i)) + m(d, x_i)
//! ```
//!
//! and a policy's value estimate is the mean of `v_i(pi(x_i))`. Writing
//! `v_i(pi) = U_i + pi(x_i) * Delta_i` with `U_i = v_i(0)` and
//! `Delta_i = v_i(1) - v_i(0)` lets a whole grid share two vectors.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecisionTable, Dataset, Interval, Method, Outcome, Policy, PolicyGrid};
use crate::nuisance::{cross_fit, fit_nuisance, NuisanceFit, NuisanceModel, NuisanceRecipe};
use crate::rng::{self, StreamRole};
use crate::stats::{mean, sd_about, wald_multiplier};

/// Smallest standard deviation used for standardization; smaller values are
/// raised to it and flagged.
pub const SD_FLOOR: f64 = 1e-8;

/// `U_i = v_i(0)` and `Delta_i = v_i(1) - v_i(0)` for one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    pub base: Vec<f64>,
    pub lift: Vec<f64>,
}

impl PseudoOutcomes {
    pub fn compute(data: &Dataset, fit: &NuisanceFit, outcome: Outcome) -> Result<Self> {
        check_alignment(data, fit)?;
        let y = data.outcomes(outcome);
        let mut base = Vec::with_capacity(data.len());
        let mut lift = Vec::with_capacity(data.len());
        for i in 0..data.len() {
            let v = fit.at(i);
            let a = data.action(i);
            let resid = (y[i] - v.reg(outcome, a)) / v.propensity(a);
            let (v0, v1) = if a == 1 {
                (v.reg(outcome, 0), v.reg(outcome, 1) + resid)
            } else {
                (v.reg(outcome, 0) + resid, v.reg(outcome, 1))
            };
            if !(v0.is_finite() && v1.is_finite()) {
                return Err(Error::NonFinite { index: i, what: "nuisance evaluation" });
            }
            base.push(v0);
            lift.push(v1 - v0);
        }
        Ok(Self { base, lift })
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// `v_i(pi)` given the policy's decision.
    #[inline]
    pub fn value(&self, i: usize, treat: bool) -> f64 {
        if treat {
            self.base[i] + self.lift[i]
        } else {
            self.base[i]
        }
    }
}

fn check_alignment(data: &Dataset, fit: &NuisanceFit) -> Result<()> {
    if fit.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: fit.len() });
    }
    Ok(())
}

/// `D_pi(obs_i) + Psi_pi - value_center`: the AIPW summand for observation
/// `i` minus the supplied center.
pub fn influence_values(
    policy: &Policy,
    fit: &NuisanceFit,
    data: &Dataset,
    outcome: Outcome,
    value_center: f64,
) -> Result<Vec<f64>> {
    check_alignment(data, fit)?;
    let decisions = policy.decisions(data)?;
    let y = data.outcomes(outcome);
    (0..data.len())
        .map(|i| {
            let v = fit.at(i);
            let a = data.action(i);
            let d = decisions[i];
            let weight = if a == d { 1.0 / v.propensity(a) } else { 0.0 };
            let value = weight * (y[i] - v.reg(outcome, a)) + v.reg(outcome, d) - value_center;
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFinite { index: i, what: "nuisance evaluation" })
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub estimate: f64,
    /// Standard deviation of the influence values (denominator n).
    pub sd: f64,
    /// True when `sd` is exactly zero.
    pub degenerate: bool,
}

pub fn value_estimate(policy: &Policy, fit: &NuisanceFit, data: &Dataset, outcome: Outcome) -> Result<ValueEstimate> {
    let summands = influence_values(policy, fit, data, outcome, 0.0)?;
    let estimate = mean(&summands);
    let sd = sd_about(&summands, estimate);
    Ok(ValueEstimate { estimate, sd, degenerate: sd == 0.0 })
}

/// Value estimates, standard deviations and (factored) influence functions
/// of both outcomes for every policy of a grid.
#[derive(Debug, Clone)]
pub struct PolicyEstimates {
    n: usize,
    pub omega_hat: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    pub kappa_hat: Vec<f64>,
    pub degenerate_primary: Vec<bool>,
    pub degenerate_subsidiary: Vec<bool>,
    primary: PseudoOutcomes,
    subsidiary: PseudoOutcomes,
    table: DecisionTable,
}

pub fn estimate_all(grid: &PolicyGrid, fit: &NuisanceFit, data: &Dataset) -> Result<PolicyEstimates> {
    let primary = PseudoOutcomes::compute(data, fit, Outcome::Primary)?;
    let subsidiary = PseudoOutcomes::compute(data, fit, Outcome::Subsidiary)?;
    let table = DecisionTable::new(grid, data)?;
    PolicyEstimates::from_pseudo_outcomes(primary, subsidiary, table)
}

impl PolicyEstimates {
    pub fn from_pseudo_outcomes(
        primary: PseudoOutcomes,
        subsidiary: PseudoOutcomes,
        table: DecisionTable,
    ) -> Result<Self> {
        let n = table.n_obs();
        if primary.len() != n || subsidiary.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: primary.len().min(subsidiary.len()) });
        }
        let k_count = table.n_policies();
        let summaries: Vec<[(f64, f64); 2]> = (0..k_count)
            .into_par_iter()
            .map(|k| {
                let mut buf = vec![0.0; n];
                [&primary, &subsidiary].map(|po| {
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = po.value(i, table.decide(k, i));
                    }
                    let est = mean(&buf);
                    (est, sd_about(&buf, est))
                })
            })
            .collect();

        let mut est = Self {
            n,
            omega_hat: Vec::with_capacity(k_count),
            psi_hat: Vec::with_capacity(k_count),
            sigma_hat: Vec::with_capacity(k_count),
            kappa_hat: Vec::with_capacity(k_count),
            degenerate_primary: Vec::with_capacity(k_count),
            degenerate_subsidiary: Vec::with_capacity(k_count),
            primary,
            subsidiary,
            table,
        };
        for [(omega, sigma), (psi, kappa)] in summaries {
            est.omega_hat.push(omega);
            est.psi_hat.push(psi);
            est.degenerate_primary.push(sigma < SD_FLOOR);
            est.degenerate_subsidiary.push(kappa < SD_FLOOR);
            est.sigma_hat.push(sigma.max(SD_FLOOR));
            est.kappa_hat.push(kappa.max(SD_FLOOR));
        }
        Ok(est)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_policies(&self) -> usize {
        self.omega_hat.len()
    }

    pub fn table(&self) -> &DecisionTable {
        &self.table
    }

    pub fn pseudo_outcomes(&self, outcome: Outcome) -> &PseudoOutcomes {
        match outcome {
            Outcome::Primary => &self.primary,
            Outcome::Subsidiary => &self.subsidiary,
        }
    }

    pub fn estimate(&self, outcome: Outcome, k: usize) -> f64 {
        match outcome {
            Outcome::Primary => self.omega_hat[k],
            Outcome::Subsidiary => self.psi_hat[k],
        }
    }

    pub fn sd(&self, outcome: Outcome, k: usize) -> f64 {
        match outcome {
            Outcome::Primary => self.sigma_hat[k],
            Outcome::Subsidiary => self.kappa_hat[k],
        }
    }

    /// Standardized influence values `D_k(obs_i) / sd_k` of policy `k`.
    pub fn influence_column(&self, outcome: Outcome, k: usize) -> Vec<f64> {
        let po = self.pseudo_outcomes(outcome);
        let (center, scale) = (self.estimate(outcome, k), self.sd(outcome, k));
        (0..self.n).map(|i| (po.value(i, self.table.decide(k, i)) - center) / scale).collect()
    }

    /// Row-major `n x K` matrix of standardized influence values.
    pub fn influence_matrix(&self, outcome: Outcome) -> Vec<Vec<f64>> {
        let cols: Vec<Vec<f64>> = (0..self.n_policies()).map(|k| self.influence_column(outcome, k)).collect();
        (0..self.n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    }

    /// Index of the largest primary estimate (first on ties).
    pub fn argmax_omega(&self) -> usize {
        let mut best = 0;
        for (k, w) in self.omega_hat.iter().enumerate() {
            if *w > self.omega_hat[best] {
                best = k;
            }
        }
        best
    }
}

/// `1{q_hat(x_i) > 0}` on the fitted design; ties go to action 0.
pub fn plugin_policy(fit: &NuisanceFit) -> Policy {
    let labels = (0..fit.len()).map(|i| u8::from(fit.cate_primary(i) > 0.0)).collect();
    Policy::Explicit { labels }
}

/// Plug-in decisions of a fitted model on arbitrary features.
pub fn plugin_decisions(model: &NuisanceModel, data: &Dataset) -> Vec<u8> {
    (0..data.len()).map(|i| u8::from(model.cate(Outcome::Primary, data.x(i)) > 0.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStepResult {
    pub psi_os: f64,
    pub sigma_n: f64,
    pub policy: Policy,
    pub interval: Interval,
}

fn wald(psi: f64, sd: f64, n: usize, alpha: f64, method: Method) -> Result<Interval> {
    let half = wald_multiplier(alpha)? * sd / (n as f64).sqrt();
    Interval::new(psi - half, psi + half, method)
}

/// Wald interval around the one-step estimate of the plug-in policy's
/// subsidiary value. `folds = None` fits nuisances on the full sample.
pub fn one_step_ci(
    data: &Dataset,
    alpha: f64,
    recipe: &NuisanceRecipe,
    folds: Option<usize>,
    seed: u64,
) -> Result<OneStepResult> {
    one_step_ci_with(data, alpha, recipe, folds, seed, PolicyLearner::PlugIn)
}

/// How the one-step methods estimate the primary-optimal policy.
#[derive(Debug, Clone, Copy)]
pub enum PolicyLearner<'a> {
    /// `1{q_hat(x) > 0}` over the unrestricted class.
    PlugIn,
    /// The grid policy with the largest estimated primary value.
    GridArgmax(&'a PolicyGrid),
}

impl PolicyLearner<'_> {
    fn learn(&self, fit: &NuisanceFit, data: &Dataset) -> Result<Policy> {
        match self {
            PolicyLearner::PlugIn => Ok(plugin_policy(fit)),
            PolicyLearner::GridArgmax(grid) => {
                let est = estimate_all(grid, fit, data)?;
                Ok(grid.get(est.argmax_omega()).clone())
            }
        }
    }
}

pub fn one_step_ci_with(
    data: &Dataset,
    alpha: f64,
    recipe: &NuisanceRecipe,
    folds: Option<usize>,
    seed: u64,
    learner: PolicyLearner<'_>,
) -> Result<OneStepResult> {
    wald_multiplier(alpha)?;
    let fit = match folds {
        Some(k) => cross_fit(data, k, recipe, seed)?,
        None => fit_nuisance(data, recipe)?,
    };
    let policy = learner.learn(&fit, data)?;
    let value = value_estimate(&policy, &fit, data, Outcome::Subsidiary)?;
    let interval = wald(value.estimate, value.sd, data.len(), alpha, Method::OneStep)?;
    Ok(OneStepResult { psi_os: value.estimate, sigma_n: value.sd, policy, interval })
}

/// Sample-split variant: the policy is learned on a random half and its
/// subsidiary value is estimated on the other half alone.
pub fn os_split_ci(data: &Dataset, alpha: f64, recipe: &NuisanceRecipe, seed: u64) -> Result<OneStepResult> {
    os_split_ci_with(data, alpha, recipe, seed, PolicyLearner::PlugIn)
}

pub fn os_split_ci_with(
    data: &Dataset,
    alpha: f64,
    recipe: &NuisanceRecipe,
    seed: u64,
    learner: PolicyLearner<'_>,
) -> Result<OneStepResult> {
    wald_multiplier(alpha)?;
    let n = data.len();
    if n < 4 {
        return Err(Error::invalid(format!("sample splitting needs n >= 4, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[StreamRole::Split as u64]));
    let (learn_idx, eval_idx) = order.split_at(n / 2);
    let learn = data.subset(learn_idx)?;
    let eval = data.subset(eval_idx)?;

    let policy = match learner {
        PolicyLearner::PlugIn => {
            let learned = NuisanceModel::fit(&learn, recipe)?;
            Policy::Explicit { labels: plugin_decisions(&learned, &eval) }
        }
        PolicyLearner::GridArgmax(_) => learner.learn(&fit_nuisance(&learn, recipe)?, &learn)?,
    };
    let fit = fit_nuisance(&eval, recipe)?;
    let value = value_estimate(&policy, &fit, &eval, Outcome::Subsidiary)?;
    let interval = wald(value.estimate, value.sd, eval.len(), alpha, Method::OsSplit)?;
    Ok(OneStepResult { psi_os: value.estimate, sigma_n: value.sd, policy, interval })
}
