use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::PolicyEstimates;
use crate::model::Outcome;
use crate::rng::{self, StreamRole};
use crate::stats::{mean, quantile_sorted, sd_about};

pub const MIN_REPLICATES: usize = 100;

/// Bootstrap realizations of the standardized primary (`f`) and subsidiary
/// (`ftilde`) processes, each stored row-major as `B x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    b: usize,
    k: usize,
    f: Vec<f64>,
    ftilde: Vec<f64>,
    normalized: bool,
}

impl BootstrapDraws {
    /// Wraps externally generated draws (row-major `b x k`).
    pub fn from_raw(b: usize, k: usize, f: Vec<f64>, ftilde: Vec<f64>) -> Result<Self> {
        if b < 2 || k == 0 {
            return Err(Error::invalid(format!("need at least 2 replicates and 1 policy, got B={b}, K={k}")));
        }
        if f.len() != b * k || ftilde.len() != b * k {
            return Err(Error::DimensionMismatch { expected: b * k, found: f.len().min(ftilde.len()) });
        }
        if f.iter().chain(&ftilde).any(|v| !v.is_finite()) {
            return Err(Error::invalid("bootstrap draws must be finite"));
        }
        Ok(Self { b, k, f, ftilde, normalized: false })
    }

    pub fn replicates(&self) -> usize {
        self.b
    }

    pub fn n_policies(&self) -> usize {
        self.k
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    fn matrix(&self, which: Outcome) -> &[f64] {
        match which {
            Outcome::Primary => &self.f,
            Outcome::Subsidiary => &self.ftilde,
        }
    }

    pub fn row(&self, which: Outcome, j: usize) -> &[f64] {
        &self.matrix(which)[j * self.k..(j + 1) * self.k]
    }

    pub fn column(&self, which: Outcome, k: usize) -> Vec<f64> {
        (0..self.b).map(|j| self.matrix(which)[j * self.k + k]).collect()
    }

    /// Studentizes every column of both matrices: bootstrap mean 0 and
    /// bootstrap SD 1 (denominator B). Columns with zero spread, which come
    /// from degenerate policies, are only centered.
    pub fn normalize(&mut self) {
        let (b, k) = (self.b, self.k);
        for m in [&mut self.f, &mut self.ftilde] {
            for c in 0..k {
                let col: Vec<f64> = (0..b).map(|j| m[j * k + c]).collect();
                let center = mean(&col);
                let sd = sd_about(&col, center);
                let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
                for j in 0..b {
                    m[j * k + c] = (m[j * k + c] - center) * scale;
                }
            }
        }
        self.normalized = true;
    }
}

/// Multiplier bootstrap of both standardized influence processes.
///
/// Replicate `j` draws one standard normal multiplier per observation from
/// its own substream of `seed`; the same multipliers drive every policy and
/// both outcomes. Draws are returned normalized.
pub fn multiplier_bootstrap(est: &PolicyEstimates, b: usize, seed: u64) -> Result<BootstrapDraws> {
    let mut draws = raw_multiplier_draws(est, b, seed)?;
    draws.normalize();
    Ok(draws)
}

/// The bootstrap before column normalization.
pub fn raw_multiplier_draws(est: &PolicyEstimates, b: usize, seed: u64) -> Result<BootstrapDraws> {
    if b < MIN_REPLICATES {
        return Err(Error::invalid(format!("multiplier bootstrap needs B >= {MIN_REPLICATES}, got {b}")));
    }
    let n = est.n();
    let k = est.n_policies();
    let root_n = (n as f64).sqrt();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..b)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng::stream(seed, &[StreamRole::Bootstrap as u64, j as u64]);
            let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let eps_sum: f64 = eps.iter().sum();
            let mut weighted = vec![0.0; n];
            let process = |outcome: Outcome, weighted: &mut Vec<f64>| {
                let po = est.pseudo_outcomes(outcome);
                let base: f64 = eps.iter().zip(&po.base).map(|(e, u)| e * u).sum();
                for ((w, e), d) in weighted.iter_mut().zip(&eps).zip(&po.lift) {
                    *w = e * d;
                }
                let mut row = vec![0.0; k];
                est.table().treated_sums(weighted, &mut row);
                for (c, r) in row.iter_mut().enumerate() {
                    *r = (base + *r - est.estimate(outcome, c) * eps_sum) / (est.sd(outcome, c) * root_n);
                }
                row
            };
            let f = process(Outcome::Primary, &mut weighted);
            let ft = process(Outcome::Subsidiary, &mut weighted);
            (f, ft)
        })
        .collect();
    let mut f = Vec::with_capacity(b * k);
    let mut ftilde = Vec::with_capacity(b * k);
    for (rf, rt) in rows {
        f.extend(rf);
        ftilde.extend(rt);
    }
    BootstrapDraws::from_raw(b, k, f, ftilde)
}

/// Row maxima of one process.
pub fn sup_draws(draws: &BootstrapDraws, which: Outcome) -> Vec<f64> {
    (0..draws.replicates())
        .map(|j| draws.row(which, j).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Type-7 empirical quantile of the row maxima of one process.
pub fn sup_quantile(draws: &BootstrapDraws, which: Outcome, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {level}")));
    }
    if !draws.is_normalized() {
        return Err(Error::invalid("sup quantiles require normalized draws"));
    }
    let mut sups = sup_draws(draws, which);
    sups.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sups, level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_all;
    use crate::model::{grid_threshold, Dataset, Observation, Policy, PolicyGrid};
    use crate::nuisance::{fit_nuisance, Bandwidth, NuisanceRecipe};
    use crate::stats::normal_quantile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..n)
            .map(|i| {
                let x: f64 = rng.random_range(-1.0..1.0);
                let a = if i < 2 { i as u8 } else { u8::from(rng.random_bool(0.5)) };
                let e: f64 = rng.sample(StandardNormal);
                let t = f64::from(a);
                Observation::new(vec![x], a, t * x + 0.5 * e, t * (x + 0.3) + 0.4 * e).unwrap()
            })
            .collect();
        Dataset::new(obs).unwrap()
    }

    fn estimates(grid: &PolicyGrid, n: usize) -> PolicyEstimates {
        let data = sample(n, 5);
        let fit = fit_nuisance(&data, &NuisanceRecipe::kernel(Bandwidth::Auto)).unwrap();
        estimate_all(grid, &fit, &data).unwrap()
    }

    /// Same draws computed from the dense influence matrices.
    fn dense_draws(est: &PolicyEstimates, b: usize, seed: u64) -> Vec<f64> {
        let n = est.n();
        let cols: Vec<Vec<f64>> = (0..est.n_policies()).map(|k| est.influence_column(Outcome::Primary, k)).collect();
        let mut out = Vec::new();
        for j in 0..b {
            let mut rng = rng::stream(seed, &[StreamRole::Bootstrap as u64, j as u64]);
            let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for col in &cols {
                out.push(eps.iter().zip(col).map(|(e, o)| e * o).sum::<f64>() / (n as f64).sqrt());
            }
        }
        out
    }

    #[test]
    fn fast_path_matches_dense_computation() {
        let grid = grid_threshold(-1.0, 1.0, 41).unwrap();
        let est = estimates(&grid, 150);
        let raw = raw_multiplier_draws(&est, 120, 7).unwrap();
        let dense = dense_draws(&est, 120, 7);
        for j in 0..120 {
            for k in 0..41 {
                assert!((raw.row(Outcome::Primary, j)[k] - dense[j * 41 + k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_small_b() {
        let grid = grid_threshold(-1.0, 1.0, 3).unwrap();
        let est = estimates(&grid, 50);
        assert!(multiplier_bootstrap(&est, 99, 1).is_err());
        assert!(multiplier_bootstrap(&est, 100, 1).is_ok());
    }

    #[test]
    fn normalized_columns_are_standardized() {
        let grid = grid_threshold(-1.0, 1.0, 11).unwrap();
        let est = estimates(&grid, 200);
        let draws = multiplier_bootstrap(&est, 400, 3).unwrap();
        for which in [Outcome::Primary, Outcome::Subsidiary] {
            for k in 0..11 {
                let col = draws.column(which, k);
                let m = mean(&col);
                assert!(m.abs() < 1e-9);
                assert!((sd_about(&col, m) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_policy_unit_column() {
        let grid = PolicyGrid::new(vec![Policy::Threshold { a: 0.0 }], "one").unwrap();
        let est = estimates(&grid, 300);
        let draws = multiplier_bootstrap(&est, 4000, 11).unwrap();
        let col = draws.column(Outcome::Primary, 0);
        assert!((sd_about(&col, mean(&col)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_policies_have_identical_columns() {
        // thresholds below every observation treat everyone
        let grid = PolicyGrid::new(vec![Policy::Threshold { a: -5.0 }, Policy::Threshold { a: -4.0 }], "dup").unwrap();
        let est = estimates(&grid, 100);
        let draws = multiplier_bootstrap(&est, 200, 2).unwrap();
        assert_eq!(draws.column(Outcome::Primary, 0), draws.column(Outcome::Primary, 1));
        assert_eq!(draws.column(Outcome::Subsidiary, 0), draws.column(Outcome::Subsidiary, 1));
    }

    #[test]
    fn multiplier_draws_keep_influence_correlation() {
        let n = 2000;
        let grid = PolicyGrid::new(vec![Policy::Threshold { a: -0.2 }, Policy::Threshold { a: 0.0 }], "pair").unwrap();
        let est = estimates(&grid, n);
        let c0 = est.influence_column(Outcome::Primary, 0);
        let c1 = est.influence_column(Outcome::Primary, 1);
        let target = c0.iter().zip(&c1).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        let draws = multiplier_bootstrap(&est, 4000, 8).unwrap();
        let (d0, d1) = (draws.column(Outcome::Primary, 0), draws.column(Outcome::Primary, 1));
        let got = d0.iter().zip(&d1).map(|(a, b)| a * b).sum::<f64>() / 4000.0;
        assert!((got - target).abs() < 0.03, "bootstrap corr {got}, influence corr {target}");
    }

    #[test]
    fn permuting_policies_permutes_columns() {
        let grid = grid_threshold(-1.0, 1.0, 9).unwrap();
        let mut rev = grid.policies().to_vec();
        rev.reverse();
        let rgrid = PolicyGrid::new(rev, "reversed").unwrap();
        let a = multiplier_bootstrap(&estimates(&grid, 120), 150, 4).unwrap();
        let b = multiplier_bootstrap(&estimates(&rgrid, 120), 150, 4).unwrap();
        for k in 0..9 {
            assert_eq!(a.column(Outcome::Primary, k), b.column(Outcome::Primary, 8 - k));
            assert_eq!(a.column(Outcome::Subsidiary, k), b.column(Outcome::Subsidiary, 8 - k));
        }
    }

    fn independent_normals(b: usize, k: usize, seed: u64) -> BootstrapDraws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..b * k).map(|_| rng.sample(StandardNormal)).collect();
        let ft = f.clone();
        let mut d = BootstrapDraws::from_raw(b, k, f, ft).unwrap();
        d.normalize();
        d
    }

    #[test]
    fn sup_quantile_of_one_column_is_marginal() {
        let d = independent_normals(100_000, 1, 1);
        let q = sup_quantile(&d, Outcome::Primary, 0.975).unwrap();
        assert!((q - 1.959964).abs() < 0.03, "{q}");
        assert!(sup_quantile(&d, Outcome::Primary, 1.0).is_err());
    }

    #[test]
    fn duplicated_column_does_not_change_supremum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let col: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let mut one = BootstrapDraws::from_raw(5000, 1, col.clone(), col.clone()).unwrap();
        one.normalize();
        let both: Vec<f64> = col.iter().flat_map(|v| [*v, *v]).collect();
        let mut two = BootstrapDraws::from_raw(5000, 2, both.clone(), both).unwrap();
        two.normalize();
        assert_eq!(
            sup_quantile(&one, Outcome::Primary, 0.9).unwrap(),
            sup_quantile(&two, Outcome::Primary, 0.9).unwrap()
        );
    }

    #[test]
    fn sup_of_independent_normals_matches_closed_form() {
        let d = independent_normals(20_000, 100, 3);
        let q = sup_quantile(&d, Outcome::Primary, 0.975).unwrap();
        let exact = normal_quantile(0.975f64.powf(0.01));
        assert!((q - exact).abs() < 0.08, "{q} vs {exact}");
    }
}
