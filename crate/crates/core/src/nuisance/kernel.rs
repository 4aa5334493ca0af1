//! Nadaraya–Watson regression with a Gaussian product kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Outcome};

/// Bandwidth choice for kernel smoothers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's rule of thumb per coordinate, computed on the training
    /// points of each smoother.
    #[default]
    Auto,
    /// The same fixed bandwidth on every coordinate.
    Fixed(f64),
}

impl Bandwidth {
    fn validate(&self) -> Result<()> {
        match *self {
            Bandwidth::Fixed(h) if !(h > 0.0 && h.is_finite()) => {
                Err(Error::invalid(format!("bandwidth must be positive, got {h}")))
            }
            _ => Ok(()),
        }
    }
}

/// Normal-reference (Silverman) bandwidth for one coordinate of `m`
/// points in dimension `dim`: `(4/(d+2))^{1/(d+4)} * sd * m^{-1/(d+4)}`.
pub fn silverman_bandwidth(values: &[f64], dim: usize) -> f64 {
    let m = values.len();
    if m < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return 1.0;
    }
    let d = dim as f64;
    (4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * sd * (m as f64).powf(-1.0 / (d + 4.0))
}

/// Multi-target Nadaraya–Watson smoother over a fixed set of training points.
#[derive(Debug, Clone)]
pub struct KernelSmoother {
    dim: usize,
    xs: Vec<f64>,
    /// `targets[t][j]` is target `t` at training point `j`.
    targets: Vec<Vec<f64>>,
    inv_h: Vec<f64>,
}

impl KernelSmoother {
    pub fn fit(dim: usize, xs: Vec<f64>, targets: Vec<Vec<f64>>, bandwidth: Bandwidth) -> Result<Self> {
        bandwidth.validate()?;
        let m = xs.len() / dim.max(1);
        if dim == 0 || m == 0 || xs.len() != m * dim {
            return Err(Error::invalid("kernel smoother needs at least one training point"));
        }
        if targets.iter().any(|t| t.len() != m) {
            return Err(Error::invalid("kernel smoother target length disagrees with training points"));
        }
        let inv_h = (0..dim)
            .map(|d| {
                let h = match bandwidth {
                    Bandwidth::Fixed(h) => h,
                    Bandwidth::Auto => {
                        let col: Vec<f64> = (0..m).map(|j| xs[j * dim + d]).collect();
                        silverman_bandwidth(&col, dim)
                    }
                };
                1.0 / h
            })
            .collect();
        Ok(Self { dim, xs, targets, inv_h })
    }

    pub fn n_train(&self) -> usize {
        self.xs.len() / self.dim
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.inv_h.iter().map(|v| 1.0 / v).collect()
    }

    /// Evaluates every target at `x`.
    ///
    /// Kernel weights are shifted by the closest training point so that the
    /// largest weight is exactly 1 and the ratio never degenerates to 0/0.
    pub fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.n_train();
        let mut dist = Vec::with_capacity(m);
        let mut min_dist = f64::INFINITY;
        for j in 0..m {
            let row = &self.xs[j * self.dim..(j + 1) * self.dim];
            let mut u = 0.0;
            for d in 0..self.dim {
                let z = (x[d] - row[d]) * self.inv_h[d];
                u += z * z;
            }
            min_dist = min_dist.min(u);
            dist.push(u);
        }
        let mut den = 0.0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, u) in dist.iter().enumerate() {
            let w = (-0.5 * (u - min_dist)).exp();
            den += w;
            for (o, t) in out.iter_mut().zip(&self.targets) {
                *o += w * t[j];
            }
        }
        out.iter_mut().for_each(|o| *o /= den);
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.targets.len()];
        self.predict_into(x, &mut out);
        out
    }
}

/// Arm-specific regression `(a, x) -> E[Y | A = a, X = x]`.
#[derive(Debug, Clone)]
pub struct KernelRegression {
    arms: [KernelSmoother; 2],
}

impl KernelRegression {
    /// Builds one smoother per arm with the given target columns
    /// (`targets_for_arm` picks them from the dataset).
    pub(crate) fn fit_targets(data: &Dataset, outcomes: &[Outcome], bandwidth: Bandwidth) -> Result<Self> {
        bandwidth.validate()?;
        data.require_both_arms("outcome regression")?;
        let arm = |a: u8| -> Result<KernelSmoother> {
            let idx: Vec<usize> = (0..data.len()).filter(|&i| data.action(i) == a).collect();
            let mut xs = Vec::with_capacity(idx.len() * data.dim());
            for &i in &idx {
                xs.extend_from_slice(data.x(i));
            }
            let targets = outcomes
                .iter()
                .map(|&o| idx.iter().map(|&i| data.outcomes(o)[i]).collect())
                .collect();
            KernelSmoother::fit(data.dim(), xs, targets, bandwidth)
        };
        Ok(Self { arms: [arm(0)?, arm(1)?] })
    }

    pub fn predict(&self, a: u8, x: &[f64]) -> f64 {
        self.arms[a as usize].predict(x)[0]
    }

    pub(crate) fn predict_into(&self, a: u8, x: &[f64], out: &mut [f64]) {
        self.arms[a as usize].predict_into(x, out);
    }

    pub fn bandwidths(&self, a: u8) -> Vec<f64> {
        self.arms[a as usize].bandwidths()
    }
}

/// Nadaraya–Watson fit of one outcome on the features, separately per arm.
pub fn fit_kernel_regression(data: &Dataset, outcome: Outcome, bandwidth: Bandwidth) -> Result<KernelRegression> {
    KernelRegression::fit_targets(data, &[outcome], bandwidth)
}
