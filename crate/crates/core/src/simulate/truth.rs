//! Ground truth by deterministic quadrature over the uniform feature cube.
//!
//! The cube `[-1,1]^d` is cut into `m^d` equal cells and integrands are
//! evaluated at cell midpoints. Policies that treat `{x >= a}` componentwise
//! are integrated through suffix sums of the cell table; the cell holding a
//! cut point contributes the covered fraction of its width, which amounts
//! to multilinear interpolation of the suffix table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::PolicyEstimates;
use crate::model::{Interval, Method, Policy, PolicyGrid};
use crate::simulate::ScenarioSpec;
use crate::stats::wald_multiplier;

pub const MIN_INTEGRATION_POINTS: usize = 1000;

/// Suffix-sum tables of cell means for one integrand.
struct CellTable {
    dim: usize,
    m: usize,
    /// `(m + 1)^dim` entries; index `m` on any axis is the empty suffix.
    suffix: Vec<f64>,
}

impl CellTable {
    fn build(dim: usize, m: usize, values: &[f64]) -> Self {
        let side = m + 1;
        let total = side.pow(dim as u32);
        let mut suffix = vec![0.0; total];
        let cell_weight = 1.0 / (m as f64).powi(dim as i32);
        for (cell, v) in values.iter().enumerate() {
            suffix[pad_index(cell, dim, m)] = v * cell_weight;
        }
        let strides: Vec<usize> = (0..dim).map(|d| side.pow((dim - 1 - d) as u32)).collect();
        for &stride in &strides {
            for flat in (0..total).rev() {
                if (flat / stride) % side + 1 < side {
                    suffix[flat] += suffix[flat + stride];
                }
            }
        }
        Self { dim, m, suffix }
    }

    /// Mean over the cube of the integrand times `1{x >= a}` componentwise.
    fn tail_mean(&self, a: &[f64]) -> f64 {
        let side = self.m + 1;
        let h = 2.0 / self.m as f64;
        let mut base = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for &ad in a {
            let pos = (ad + 1.0) / h;
            if pos <= 0.0 {
                base.push(0);
                frac.push(1.0);
            } else if pos >= self.m as f64 {
                base.push(self.m);
                frac.push(0.0);
            } else {
                let c = (pos.floor() as usize).min(self.m - 1);
                base.push(c);
                frac.push((c + 1) as f64 - pos);
            }
        }
        let mut total = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut weight = 1.0;
            let mut flat = 0;
            for d in 0..self.dim {
                let up = (corner >> d) & 1;
                weight *= if up == 1 { 1.0 - frac[d] } else { frac[d] };
                flat = flat * side + (base[d] + up).min(self.m);
            }
            if weight != 0.0 {
                total += weight * self.suffix[flat];
            }
        }
        total
    }

    fn full_mean(&self) -> f64 {
        self.suffix[0]
    }
}

fn pad_index(cell: usize, dim: usize, m: usize) -> usize {
    let mut rem = cell;
    let mut digits = vec![0; dim];
    for d in (0..dim).rev() {
        digits[d] = rem % m;
        rem /= m;
    }
    digits.iter().fold(0, |acc, &v| acc * (m + 1) + v)
}

/// Cell midpoints, row-major.
fn midpoints(dim: usize, m: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..m).map(|i| -1.0 + (i as f64 + 0.5) * 2.0 / m as f64).collect();
    let count = m.pow(dim as u32);
    (0..count)
        .map(|cell| {
            let mut rem = cell;
            let mut x = vec![0.0; dim];
            for d in (0..dim).rev() {
                x[d] = axis[rem % m];
                rem /= m;
            }
            x
        })
        .collect()
}

/// Cells per axis for a total point budget; a multiple of 4 so that 0 and
/// +-0.5 fall on cell boundaries.
pub fn cells_per_axis(dim: usize, integration_points: usize) -> usize {
    let per_axis = (integration_points as f64).powf(1.0 / dim as f64).round().max(4.0) as usize;
    per_axis.div_ceil(4) * 4
}

/// Per-axis lower corners of a feature rule (`-inf` where unrestricted).
fn lower_corner(policy: &Policy, dim: usize) -> Result<Vec<f64>> {
    let mut a = vec![f64::NEG_INFINITY; dim];
    match policy {
        Policy::Threshold { a: t } => a[0] = *t,
        Policy::Box { a: corner } => {
            if dim < 3 {
                return Err(Error::DimensionMismatch { expected: 3, found: dim });
            }
            a[..3].copy_from_slice(corner);
        }
        Policy::Explicit { .. } => {
            return Err(Error::invalid("true values need feature-level policies, not explicit labels"));
        }
    }
    Ok(a)
}

/// Exact-law values of every policy of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub omega: Vec<f64>,
    pub psi: Vec<f64>,
    pub omega_star: f64,
    pub psi_l: f64,
    pub psi_u: f64,
    /// Grid indices of the optimal policies.
    pub optimal: Vec<usize>,
    /// Optimal policies attaining `psi_l` and `psi_u`.
    pub lower_policy: usize,
    pub upper_policy: usize,
    pub tolerance: f64,
    pub cells_per_axis: usize,
}

impl OracleTruth {
    pub fn width(&self) -> f64 {
        self.psi_u - self.psi_l
    }
}

/// Integrals used by several truth computations.
pub struct Quadrature {
    m: usize,
    omega: CellTable,
    psi: CellTable,
    base_omega: f64,
    base_psi: f64,
}

impl Quadrature {
    pub fn new(spec: &ScenarioSpec, integration_points: usize) -> Result<Self> {
        if integration_points < MIN_INTEGRATION_POINTS {
            return Err(Error::invalid(format!(
                "quadrature needs at least {MIN_INTEGRATION_POINTS} points, got {integration_points}"
            )));
        }
        let dim = spec.dim;
        let m = cells_per_axis(dim, integration_points);
        let points = midpoints(dim, m);
        let vals: Vec<[f64; 4]> = points
            .par_iter()
            .map(|x| {
                [(spec.q_true)(x), (spec.s_true)(x), (spec.baseline_primary)(x), (spec.baseline_subsidiary)(x)]
            })
            .collect();
        let col = |j: usize| -> Vec<f64> { vals.iter().map(|v| v[j]).collect() };
        let omega = CellTable::build(dim, m, &col(0));
        let psi = CellTable::build(dim, m, &col(1));
        let base_omega = CellTable::build(dim, m, &col(2)).full_mean();
        let base_psi = CellTable::build(dim, m, &col(3)).full_mean();
        Ok(Self { m, omega, psi, base_omega, base_psi })
    }

    /// True `(Omega, Psi)` of a feature-level policy.
    pub fn values(&self, policy: &Policy) -> Result<(f64, f64)> {
        let a = lower_corner(policy, self.omega.dim)?;
        Ok((self.base_omega + self.omega.tail_mean(&a), self.base_psi + self.psi.tail_mean(&a)))
    }

    /// Rough error scale of the midpoint rule at this resolution.
    pub fn error_scale(&self) -> f64 {
        let h = 2.0 / self.m as f64;
        h * h
    }
}

/// True values of every grid policy, the optimal set within tolerance and
/// the resulting `[psi_l, psi_u]`.
pub fn oracle_truth(spec: &ScenarioSpec, grid: &PolicyGrid, integration_points: usize) -> Result<OracleTruth> {
    let quad = Quadrature::new(spec, integration_points)?;
    truth_from_quadrature(&quad, grid)
}

pub fn truth_from_quadrature(quad: &Quadrature, grid: &PolicyGrid) -> Result<OracleTruth> {
    let values: Vec<(f64, f64)> = grid.policies().iter().map(|p| quad.values(p)).collect::<Result<_>>()?;
    let omega: Vec<f64> = values.iter().map(|v| v.0).collect();
    let psi: Vec<f64> = values.iter().map(|v| v.1).collect();
    let omega_star = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tolerance = quad.error_scale() + 1e-12;
    let optimal: Vec<usize> = (0..omega.len()).filter(|&k| omega[k] >= omega_star - tolerance).collect();
    let mut lower_policy = optimal[0];
    let mut upper_policy = optimal[0];
    for &k in &optimal {
        if psi[k] < psi[lower_policy] {
            lower_policy = k;
        }
        if psi[k] > psi[upper_policy] {
            upper_policy = k;
        }
    }
    Ok(OracleTruth {
        psi_l: psi[lower_policy],
        psi_u: psi[upper_policy],
        omega,
        psi,
        omega_star,
        optimal,
        lower_policy,
        upper_policy,
        tolerance,
        cells_per_axis: quad.m,
    })
}

/// Wald bounds at the true extreme optimal policies, using the estimates
/// of those policies computed on the same grid.
pub fn oracle_ci(truth: &OracleTruth, est: &PolicyEstimates, alpha: f64) -> Result<Interval> {
    let z = wald_multiplier(alpha)?;
    let (lo, hi) = (truth.lower_policy, truth.upper_policy);
    if hi >= est.n_policies() || lo >= est.n_policies() {
        return Err(Error::invalid("oracle policies are not in the estimated grid"));
    }
    let root_n = (est.n() as f64).sqrt();
    let lower = est.psi_hat[lo] - z * est.kappa_hat[lo] / root_n;
    let upper = est.psi_hat[hi] + z * est.kappa_hat[hi] / root_n;
    Interval::new(lower.min(upper), upper.max(lower), Method::Oracle)
}

/// Outcome of a numerical margin-condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginCheck {
    pub pass: bool,
    /// `(t, P(|s| >= C1 t |q|), t^-zeta)` per grid value.
    pub trace: Vec<(f64, f64, f64)>,
}

/// Checks `P(|s(X)| >= C1 t |q(X)|) <= t^(-zeta)` for each `t` by quadrature
/// with about `mc_points` cells.
pub fn check_margin(spec: &ScenarioSpec, c1: f64, zeta: f64, t_grid: &[f64], mc_points: usize) -> Result<MarginCheck> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 1.0)) {
        return Err(Error::invalid("margin check needs t values greater than 1"));
    }
    if mc_points < MIN_INTEGRATION_POINTS {
        return Err(Error::invalid(format!("margin check needs at least {MIN_INTEGRATION_POINTS} points")));
    }
    let m = cells_per_axis(spec.dim, mc_points);
    let pairs: Vec<(f64, f64)> =
        midpoints(spec.dim, m).par_iter().map(|x| ((spec.s_true)(x).abs(), (spec.q_true)(x).abs())).collect();
    let total = pairs.len() as f64;
    let trace: Vec<(f64, f64, f64)> = t_grid
        .iter()
        .map(|&t| {
            let hits = pairs.iter().filter(|(s, q)| *s >= c1 * t * q).count();
            (t, hits as f64 / total, t.powf(-zeta))
        })
        .collect();
    let pass = trace.iter().all(|(_, p, bound)| p <= bound);
    Ok(MarginCheck { pass, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{grid_box, grid_threshold};
    use crate::simulate::{make_scenario, NON_MARGIN_OFFSET};
    use std::sync::Arc;

    #[test]
    fn linear_tail_is_exact() {
        // q = x: Omega(a) = (1 - a^2) / 4 for a in [-1, 1]
        let spec = ScenarioSpec::custom("lin", 1, Arc::new(|x: &[f64]| x[0]), Arc::new(|_: &[f64]| 0.0));
        let quad = Quadrature::new(&spec, 1000).unwrap();
        for a in [-1.5, -1.0, -0.37, 0.0, 0.123, 0.999, 2.0] {
            let (w, _) = quad.values(&Policy::Threshold { a }).unwrap();
            let c: f64 = a.clamp(-1.0, 1.0);
            assert!((w - (1.0 - c * c) / 4.0).abs() < 1e-6, "a={a}: {w}");
        }
    }

    #[test]
    fn box_tail_matches_product_integral() {
        // q = x1 + x2 x3 over the box x >= a
        let spec =
            ScenarioSpec::custom("b", 3, Arc::new(|x: &[f64]| x[0] + x[1] * x[2]), Arc::new(|_: &[f64]| 1.0));
        let quad = Quadrature::new(&spec, 64_000).unwrap();
        let a = [-0.3, 0.2, -0.9];
        let (w, p) = quad.values(&Policy::Box { a }).unwrap();
        let len = |v: f64| 1.0 - v;
        let int1 = |v: f64| (1.0 - v * v) / 2.0;
        let exact = (int1(a[0]) * len(a[1]) * len(a[2]) + len(a[0]) * int1(a[1]) * int1(a[2])) / 8.0;
        assert!((w - exact).abs() < 1e-5, "{w} vs {exact}");
        assert!((p - len(a[0]) * len(a[1]) * len(a[2]) / 8.0).abs() < 1e-9);
    }

    #[test]
    fn positive_effect_everywhere_selects_treat_all() {
        let spec = ScenarioSpec::custom("pos", 1, Arc::new(|_: &[f64]| 1.0), Arc::new(|_: &[f64]| 0.0))
            .with_baselines(Arc::new(|_: &[f64]| 0.0), Arc::new(|_: &[f64]| 3.5));
        let truth = oracle_truth(&spec, &grid_threshold(-1.0, 1.0, 21).unwrap(), 1000).unwrap();
        assert_eq!(truth.optimal, vec![0]);
        assert!((truth.psi_l - 3.5).abs() < 1e-12 && truth.width() == 0.0);
    }

    #[test]
    fn non_unique_interval_has_length_one_half() {
        let spec = make_scenario("non-unique").unwrap();
        let grid = grid_threshold(-1.0, 1.0, 2001).unwrap();
        let truth = oracle_truth(&spec, &grid, 100_000).unwrap();
        assert!((truth.width() - 0.5).abs() < 0.01, "{}", truth.width());
        // plateau: every threshold in [-0.5, 0] is optimal, nothing else
        for (k, p) in grid.policies().iter().enumerate() {
            let Policy::Threshold { a } = p else { unreachable!() };
            assert_eq!(truth.optimal.contains(&k), (-0.5..=0.0).contains(a), "a={a}");
        }
        let plateau: Vec<f64> = truth.optimal.iter().map(|&k| truth.omega[k]).collect();
        assert!(plateau.iter().all(|w| (w - plateau[0]).abs() < 1e-12));
    }

    #[test]
    fn unique_scenarios_have_point_truth() {
        for name in ["unique-margin", "unique-non-margin"] {
            let spec = make_scenario(name).unwrap();
            let truth = oracle_truth(&spec, &grid_threshold(-1.0, 1.0, 2000).unwrap(), 100_000).unwrap();
            assert!(truth.width() < 1e-3, "{name}: {truth:?}");
        }
        let spec = make_scenario("3d-margin").unwrap();
        let truth = oracle_truth(&spec, &grid_box(-1.0, 1.0, 13).unwrap(), 1_000_000).unwrap();
        assert!(truth.width() < 1e-3);
        let Policy::Box { a } = grid_box(-1.0, 1.0, 13).unwrap().get(truth.lower_policy).clone() else {
            unreachable!()
        };
        assert!(a.iter().all(|v| v.abs() < 1e-9), "{a:?}");
    }

    #[test]
    fn quadrature_is_converged() {
        for name in ["non-unique", "unique-margin", "unique-non-margin", "3d-margin", "3d-non-margin"] {
            let spec = make_scenario(name).unwrap();
            let grid = if spec.dim == 1 { grid_threshold(-1.0, 1.0, 2000).unwrap() } else { grid_box(-1.0, 1.0, 13).unwrap() };
            let pts = if spec.dim == 1 { 100_000 } else { 500_000 };
            let a = oracle_truth(&spec, &grid, pts).unwrap();
            let b = oracle_truth(&spec, &grid, 2 * pts).unwrap();
            assert!((a.psi_l - b.psi_l).abs() < 1e-4 && (a.psi_u - b.psi_u).abs() < 1e-4, "{name}");
        }
    }

    // q = x, s = x + c on U[-1, 1]: P(|s| >= t|q|) for t > 1
    fn closed_form_linear_offset(c: f64, t: f64) -> f64 {
        ((c / (t - 1.0)).min(1.0) + (c / (t + 1.0)).min(1.0)) / 2.0
    }

    #[test]
    fn margin_check_against_closed_forms() {
        let t_grid = [2.0, 4.0, 8.0, 16.0, 64.0];
        let zero = ScenarioSpec::custom("z", 1, Arc::new(|x: &[f64]| x[0]), Arc::new(|_: &[f64]| 0.0));
        assert!(check_margin(&zero, 1.0, 50.0, &t_grid, 10_000).unwrap().pass);

        let cubic = make_scenario("unique-margin").unwrap();
        let res = check_margin(&cubic, 1.0, 3.0, &t_grid, 200_000).unwrap();
        assert!(res.pass);
        assert!(res.trace.iter().all(|(_, p, _)| *p == 0.0));

        let offset = make_scenario("unique-non-margin").unwrap();
        let res = check_margin(&offset, 1.0, 2.5, &t_grid, 200_000).unwrap();
        assert!(!res.pass);
        for (t, p, _) in &res.trace {
            assert!((p - closed_form_linear_offset(NON_MARGIN_OFFSET, *t)).abs() < 1e-3, "t={t}: {p}");
        }
        let shifted = ScenarioSpec::custom("o", 1, Arc::new(|x: &[f64]| x[0]), Arc::new(|x: &[f64]| x[0] + 0.3));
        let res = check_margin(&shifted, 1.0, 2.5, &t_grid, 200_000).unwrap();
        assert!(!res.pass);
        for (t, p, _) in &res.trace {
            assert!((p - closed_form_linear_offset(0.3, *t)).abs() < 1e-3, "t={t}: {p}");
        }
        assert!(check_margin(&offset, 1.0, 2.5, &[1.0], 10_000).is_err());
    }
}
