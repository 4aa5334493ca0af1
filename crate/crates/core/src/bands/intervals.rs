use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::bands::bootstrap::BootstrapDraws;
use crate::error::{Error, Result};
use crate::estimators::PolicyEstimates;
use crate::model::{z_alpha_beta, Interval, Method, Outcome};
use crate::stats::{linspace, quantile_sorted};

/// How the first-stage lower bound `L_n` on the optimal primary value is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundRule {
    /// Largest lower confidence bound `max_k omega_k - sigma_k * t / sqrt(n)`.
    #[default]
    SupLcb,
    /// A caller-supplied bound.
    External(f64),
}

/// Policies retained by the first-stage filtration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredSet {
    pub kept: Vec<usize>,
    pub l_n: f64,
    pub cutoff_used: f64,
}

/// `kept = {k : L_n <= omega_k + sigma_k * t / sqrt(n)}` with `L_n` from
/// `rule` (using the same cutoff `t` for the lower bounds).
pub fn first_stage_set(est: &PolicyEstimates, t_beta: f64, rule: LowerBoundRule) -> Result<FilteredSet> {
    filter_policies(&est.omega_hat, &est.sigma_hat, est.n(), t_beta, t_beta, rule)
}

/// Filtration with separate lower (`s`) and upper (`t`) cutoffs, on raw
/// estimate vectors.
pub fn filter_policies(
    omega: &[f64],
    sigma: &[f64],
    n: usize,
    s: f64,
    t: f64,
    rule: LowerBoundRule,
) -> Result<FilteredSet> {
    if omega.is_empty() || omega.len() != sigma.len() {
        return Err(Error::invalid("filtration needs matching, nonempty estimate vectors"));
    }
    if !(s >= 0.0 && t >= 0.0) {
        return Err(Error::invalid(format!("filtration cutoffs must be nonnegative, got s={s}, t={t}")));
    }
    let root_n = (n as f64).sqrt();
    let l_n = match rule {
        LowerBoundRule::SupLcb => omega
            .iter()
            .zip(sigma)
            .map(|(w, sd)| w - sd * s / root_n)
            .fold(f64::NEG_INFINITY, f64::max),
        LowerBoundRule::External(l) => {
            if l.is_nan() {
                return Err(Error::invalid("external lower bound is NaN"));
            }
            l
        }
    };
    let kept: Vec<usize> = (0..omega.len()).filter(|&k| l_n <= omega[k] + sigma[k] * t / root_n).collect();
    Ok(FilteredSet { kept, l_n, cutoff_used: t })
}

/// `[min_k psi_k - kappa_k * mult / sqrt(n), max_k psi_k + kappa_k * mult / sqrt(n)]`
/// over the kept policies.
pub fn interval_over(est: &PolicyEstimates, kept: &[usize], mult: f64, method: Method) -> Result<Interval> {
    if kept.is_empty() {
        return Err(Error::invalid("no policies survived the filtration"));
    }
    let root_n = (est.n() as f64).sqrt();
    let lower = kept.iter().map(|&k| est.psi_hat[k] - est.kappa_hat[k] * mult / root_n).fold(f64::INFINITY, f64::min);
    let upper =
        kept.iter().map(|&k| est.psi_hat[k] + est.kappa_hat[k] * mult / root_n).fold(f64::NEG_INFINITY, f64::max);
    Interval::new(lower, upper, method)
}

/// Union-bounding two-stage interval with `z_{alpha,beta}`.
pub fn union_ci(est: &PolicyEstimates, filtered: &FilteredSet, alpha: f64, beta: f64) -> Result<Interval> {
    let z = z_alpha_beta(alpha, beta)?;
    interval_over(est, &filtered.kept, z, Method::Union)
}

/// A joint cutoff triple `(s, t, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointCutoffs {
    pub s: f64,
    pub t: f64,
    pub u: f64,
}

/// Filtration with `(s, t)` followed by bounds with `u`.
pub fn joint_ci(est: &PolicyEstimates, cutoffs: JointCutoffs) -> Result<Interval> {
    let JointCutoffs { s, t, u } = cutoffs;
    if !(u >= 0.0) {
        return Err(Error::invalid(format!("cutoff u must be nonnegative, got {u}")));
    }
    let set = filter_policies(&est.omega_hat, &est.sigma_hat, est.n(), s, t, LowerBoundRule::SupLcb)?;
    assert!(!set.kept.is_empty(), "the lower-bound maximizer always survives");
    interval_over(est, &set.kept, u, Method::Joint)
}

/// Feasible `(t, u)` pairs (with `s = t`) from the joint bootstrap search,
/// ordered by increasing `t`. `u` is nonincreasing along the frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFrontier {
    pub candidates: Vec<JointCutoffs>,
    /// The feasible pair with the smallest `u`.
    pub chosen: JointCutoffs,
}

pub const DEFAULT_T_GRID: usize = 50;

/// Minimal feasible `u` for each candidate `t`, where feasibility means
///
/// ```text
/// min_k  P_B( max_k' f_k' <= t, min_k' f_k' >= -t, |ftilde_k| <= u ) >= 1 - alpha
/// ```
///
/// under the empirical law of the bootstrap rows. Candidates are
/// `t_grid_size` evenly spaced values between the 50% and 99.9% quantiles of
/// `max_k |f_k|`, plus any `extra_t` values.
pub fn joint_cutoffs(draws: &BootstrapDraws, alpha: f64, t_grid_size: usize) -> Result<JointFrontier> {
    joint_cutoffs_with(draws, alpha, t_grid_size, &[])
}

pub fn joint_cutoffs_with(
    draws: &BootstrapDraws,
    alpha: f64,
    t_grid_size: usize,
    extra_t: &[f64],
) -> Result<JointFrontier> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if t_grid_size < 1 {
        return Err(Error::invalid("cutoff search needs at least one t candidate"));
    }
    if !draws.is_normalized() {
        return Err(Error::invalid("cutoff search requires normalized draws"));
    }
    let b = draws.replicates();
    let k = draws.n_policies();
    // rows needed for probability >= 1 - alpha; the slack absorbs rounding in (1 - alpha) * B
    let need = (((1.0 - alpha) * b as f64) - 1e-9).ceil().max(1.0) as usize;

    let radius: Vec<f64> = (0..b)
        .map(|j| draws.row(Outcome::Primary, j).iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
        .collect();
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&x, &y| radius[x].total_cmp(&radius[y]));
    let sorted_radius: Vec<f64> = order.iter().map(|&j| radius[j]).collect();

    let mut ts = if t_grid_size == 1 {
        vec![quantile_sorted(&sorted_radius, 0.999)]
    } else {
        linspace(quantile_sorted(&sorted_radius, 0.5), quantile_sorted(&sorted_radius, 0.999), t_grid_size)
    };
    ts.extend(extra_t.iter().copied().filter(|t| t.is_finite() && *t >= 0.0));
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    // per policy, a max-heap holding the `need` smallest |ftilde| among included rows
    let mut heaps: Vec<BinaryHeap<OrdF64>> = (0..k).map(|_| BinaryHeap::with_capacity(need + 1)).collect();
    let mut next = 0;
    let mut candidates = Vec::new();
    for &t in &ts {
        while next < b && sorted_radius[next] <= t {
            let row = draws.row(Outcome::Subsidiary, order[next]);
            for (heap, v) in heaps.iter_mut().zip(row) {
                heap.push(OrdF64(v.abs()));
                if heap.len() > need {
                    heap.pop();
                }
            }
            next += 1;
        }
        if next < need {
            continue;
        }
        let u = heaps.iter().map(|h| h.peek().map_or(0.0, |v| v.0)).fold(0.0, f64::max);
        candidates.push(JointCutoffs { s: t, t, u });
    }

    let chosen = *candidates
        .iter()
        .min_by(|x, y| x.u.total_cmp(&y.u).then(x.t.total_cmp(&y.t)))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "no t candidate reaches joint probability {:.4} with B={b}; increase B or the t grid",
                1.0 - alpha
            ))
        })?;
    Ok(JointFrontier { candidates, chosen })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Among a set of certified cutoff triples, the one giving the shortest
/// interval (earliest on ties).
pub fn shortest_joint_ci(est: &PolicyEstimates, triples: &[JointCutoffs]) -> Result<(JointCutoffs, Interval)> {
    let mut best: Option<(JointCutoffs, Interval)> = None;
    for &c in triples {
        let ci = joint_ci(est, c)?;
        if best.is_none_or(|(_, b)| ci.width() < b.width()) {
            best = Some((c, ci));
        }
    }
    best.ok_or_else(|| Error::Infeasible("no cutoff triple to choose from".into()))
}
