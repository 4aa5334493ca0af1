use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::PseudoOutcomes;
use crate::model::{grid_threshold, Dataset, Outcome, Policy, PolicyGrid};
use crate::nuisance::NuisanceFit;
use crate::rng::{self, StreamRole};

/// A continuous policy class to search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyClass {
    /// Thresholds on an evenly spaced grid of `points` values over `[lo, hi]`.
    Threshold { lo: f64, hi: f64, points: usize },
    /// Box corners in `[lo, hi]^3`.
    Box { lo: f64, hi: f64 },
}

/// Approximate maximizer of `objective` over a policy class.
///
/// Threshold classes are searched exhaustively over their grid. Box classes
/// spend half the budget (at least one evaluation) on uniform random corners
/// and the rest on coordinate descent with a shrinking step from the best
/// corner found. `budget` counts objective evaluations for boxes.
pub fn optimize_over_class<F>(objective: F, class: PolicyClass, budget: usize, seed: u64) -> Result<Policy>
where
    F: Fn(&Policy) -> f64,
{
    if budget < 1 {
        return Err(Error::invalid("optimizer budget must be at least 1"));
    }
    match class {
        PolicyClass::Threshold { lo, hi, points } => {
            let grid = grid_threshold(lo, hi, points)?;
            let mut best = (f64::NEG_INFINITY, 0);
            for (k, p) in grid.policies().iter().enumerate() {
                let v = objective(p);
                if v > best.0 {
                    best = (v, k);
                }
            }
            Ok(grid.get(best.1).clone())
        }
        PolicyClass::Box { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::invalid(format!("box range [{lo}, {hi}] is degenerate")));
            }
            Ok(Policy::Box { a: box_search(&objective, lo, hi, budget, seed) })
        }
    }
}

fn box_search<F: Fn(&Policy) -> f64>(objective: &F, lo: f64, hi: f64, budget: usize, seed: u64) -> [f64; 3] {
    let mut rng = rng::stream(seed, &[StreamRole::Optimizer as u64]);
    let eval = |a: [f64; 3]| objective(&Policy::Box { a });
    let random_budget = budget.div_ceil(2);
    let mut best = [0.0; 3];
    let mut best_val = f64::NEG_INFINITY;
    for _ in 0..random_budget {
        let a = [rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        let v = eval(a);
        if v > best_val {
            best = a;
            best_val = v;
        }
    }

    let mut used = random_budget;
    let mut step = (hi - lo) / 8.0;
    let min_step = (hi - lo) * 1e-6;
    while used < budget && step > min_step {
        let mut improved = false;
        'axes: for d in 0..3 {
            for dir in [1.0, -1.0] {
                if used >= budget {
                    break 'axes;
                }
                let mut cand = best;
                cand[d] = (cand[d] + dir * step).clamp(lo, hi);
                if cand == best {
                    continue;
                }
                used += 1;
                let v = eval(cand);
                if v > best_val {
                    best = cand;
                    best_val = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best
}

/// `grid` plus the member of `class` that maximizes the estimated primary
/// value (the AIPW mean of the primary pseudo-outcomes under the policy).
pub fn extend_with_estimated_optimum(
    grid: &PolicyGrid,
    class: PolicyClass,
    budget: usize,
    fit: &NuisanceFit,
    data: &Dataset,
    seed: u64,
) -> Result<PolicyGrid> {
    let po = PseudoOutcomes::compute(data, fit, Outcome::Primary)?;
    let objective = |p: &Policy| -> f64 {
        (0..data.len()).map(|i| po.value(i, p.decide(data.x(i)).is_ok_and(|d| d == 1))).sum::<f64>()
    };
    let best = optimize_over_class(objective, class, budget, seed)?;
    let mut out = grid.clone();
    out.push_unique(best);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corner(p: &Policy) -> [f64; 3] {
        match p {
            Policy::Box { a } => *a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn threshold_search_is_exact_on_grid() {
        let obj = |p: &Policy| match p {
            Policy::Threshold { a } => -(a - 0.3) * (a - 0.3),
            _ => unreachable!(),
        };
        let best = optimize_over_class(obj, PolicyClass::Threshold { lo: -1.0, hi: 1.0, points: 21 }, 1, 0).unwrap();
        assert_eq!(best, Policy::Threshold { a: -1.0 + 13.0 * 0.1 });
    }

    #[test]
    fn box_search_finds_separable_optimum() {
        let obj = |p: &Policy| -corner(p).iter().map(|v| v * v).sum::<f64>();
        let best = corner(&optimize_over_class(obj, PolicyClass::Box { lo: -1.0, hi: 1.0 }, 2000, 7).unwrap());

        // dense grid brute force over the same objective
        let axis: Vec<f64> = (0..41).map(|i| -1.0 + i as f64 * 0.05).collect();
        let mut oracle = ([0.0; 3], f64::NEG_INFINITY);
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    let v = obj(&Policy::Box { a: [a, b, c] });
                    if v > oracle.1 {
                        oracle = ([a, b, c], v);
                    }
                }
            }
        }
        for d in 0..3 {
            assert!((best[d] - oracle.0[d]).abs() < 0.05, "{best:?} vs {:?}", oracle.0);
        }
    }

    #[test]
    fn unit_budget_returns_the_sampled_candidate() {
        use std::cell::RefCell;
        let seen = RefCell::new(Vec::new());
        let obj = |p: &Policy| {
            seen.borrow_mut().push(corner(p));
            0.0
        };
        let best = corner(&optimize_over_class(obj, PolicyClass::Box { lo: -1.0, hi: 1.0 }, 1, 3).unwrap());
        assert_eq!(seen.borrow().as_slice(), &[best]);
        assert!(optimize_over_class(|_| 0.0, PolicyClass::Box { lo: -1.0, hi: 1.0 }, 0, 3).is_err());
    }

    #[test]
    fn estimated_optimum_is_appended_near_true_corner() {
        use crate::model::grid_box;
        use crate::nuisance::{fit_nuisance, Bandwidth, NuisanceRecipe};
        use crate::simulate::{generate, make_scenario};

        let spec = make_scenario("3d-margin").unwrap();
        let data = generate(&spec, 3000, 12).unwrap();
        let fit = fit_nuisance(&data, &NuisanceRecipe::kernel(Bandwidth::Auto)).unwrap();
        let base = grid_box(-1.0, 1.0, 3).unwrap();
        let grid = extend_with_estimated_optimum(&base, PolicyClass::Box { lo: -1.0, hi: 1.0 }, 400, &fit, &data, 1).unwrap();
        assert_eq!(grid.len(), base.len() + 1);
        let a = corner(grid.get(base.len()));
        assert!(a.iter().all(|v| v.abs() < 0.35), "{a:?}");
    }
}
