use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::nuisance::FeatureFn;
use crate::rng::{self, StreamRole};

/// The shipped data-generating processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "non-unique")]
    NonUnique,
    #[serde(rename = "unique-margin")]
    UniqueMargin,
    #[serde(rename = "unique-non-margin")]
    UniqueNonMargin,
    #[serde(rename = "3d-margin")]
    Margin3d,
    #[serde(rename = "3d-non-margin")]
    NonMargin3d,
}

impl Scenario {
    pub const ALL: [Scenario; 5] =
        [Scenario::NonUnique, Scenario::UniqueMargin, Scenario::UniqueNonMargin, Scenario::Margin3d, Scenario::NonMargin3d];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::NonUnique => "non-unique",
            Scenario::UniqueMargin => "unique-margin",
            Scenario::UniqueNonMargin => "unique-non-margin",
            Scenario::Margin3d => "3d-margin",
            Scenario::NonMargin3d => "3d-non-margin",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Scenario::Margin3d | Scenario::NonMargin3d => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.as_str() == s.trim()).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.as_str()).collect();
            Error::invalid(format!("unknown scenario '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

pub const DEFAULT_NOISE_SD: f64 = 0.5;
/// Value of the subsidiary CATE where the primary CATE crosses zero in
/// `unique-non-margin`.
pub const NON_MARGIN_OFFSET: f64 = 0.8;
/// Same for `3d-non-margin`; a corner shift moves far less mass in 3D.
pub const NON_MARGIN_OFFSET_3D: f64 = 2.0;
pub const DEFAULT_NOISE_CORR: f64 = 0.5;

/// A data-generating process: `X ~ U[-1,1]^dim`, `A | X ~ Bernoulli(p(X))`,
/// `Y* = b*(X) + A q(X) + e*`, `Y† = b†(X) + A s(X) + e†` with bivariate
/// normal noise.
#[derive(Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub dim: usize,
    pub q_true: FeatureFn,
    pub s_true: FeatureFn,
    pub baseline_primary: FeatureFn,
    pub baseline_subsidiary: FeatureFn,
    pub propensity_true: FeatureFn,
    pub noise_sd: f64,
    pub noise_corr: f64,
}

impl fmt::Debug for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScenarioSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_sd", &self.noise_sd)
            .field("noise_corr", &self.noise_corr)
            .finish_non_exhaustive()
    }
}

fn constant(c: f64) -> FeatureFn {
    Arc::new(move |_: &[f64]| c)
}

fn min3(x: &[f64]) -> f64 {
    x[0].min(x[1]).min(x[2])
}

/// CATE of the non-unique scenario: zero exactly on `[-0.5, 0]`.
fn plateau(x: f64) -> f64 {
    if x < 0.0 {
        (x + 0.5).min(0.0)
    } else {
        x
    }
}

impl ScenarioSpec {
    /// A custom process with zero baselines, randomization probability 0.5
    /// and the default noise.
    pub fn custom(name: impl Into<String>, dim: usize, q_true: FeatureFn, s_true: FeatureFn) -> Self {
        Self {
            name: name.into(),
            dim,
            q_true,
            s_true,
            baseline_primary: constant(0.0),
            baseline_subsidiary: constant(0.0),
            propensity_true: constant(0.5),
            noise_sd: DEFAULT_NOISE_SD,
            noise_corr: DEFAULT_NOISE_CORR,
        }
    }

    pub fn with_noise_corr(mut self, rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::invalid(format!("noise correlation must lie in [-1, 1], got {rho}")));
        }
        self.noise_corr = rho;
        Ok(self)
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::invalid(format!("noise SD must be positive, got {sd}")));
        }
        self.noise_sd = sd;
        Ok(self)
    }

    pub fn with_baselines(mut self, primary: FeatureFn, subsidiary: FeatureFn) -> Self {
        self.baseline_primary = primary;
        self.baseline_subsidiary = subsidiary;
        self
    }

    pub fn with_propensity(mut self, p1: FeatureFn) -> Self {
        self.propensity_true = p1;
        self
    }

    /// `E[Y | A = a, X = x]` for the requested outcome.
    pub fn regression(&self, primary: bool, a: u8, x: &[f64]) -> f64 {
        let (base, effect) = if primary {
            ((self.baseline_primary)(x), (self.q_true)(x))
        } else {
            ((self.baseline_subsidiary)(x), (self.s_true)(x))
        };
        base + f64::from(a) * effect
    }
}

/// Builds a shipped scenario by name.
pub fn make_scenario(name: &str) -> Result<ScenarioSpec> {
    let scenario: Scenario = name.parse()?;
    let (q, s): (FeatureFn, FeatureFn) = match scenario {
        Scenario::NonUnique => (Arc::new(|x: &[f64]| plateau(x[0])), constant(2.0)),
        Scenario::UniqueMargin => (Arc::new(|x: &[f64]| x[0]), Arc::new(|x: &[f64]| x[0].powi(3))),
        Scenario::UniqueNonMargin => (Arc::new(|x: &[f64]| x[0]), Arc::new(|x: &[f64]| x[0] + NON_MARGIN_OFFSET)),
        Scenario::Margin3d => (Arc::new(min3), Arc::new(|x: &[f64]| min3(x).powi(3))),
        Scenario::NonMargin3d => (Arc::new(min3), Arc::new(|x: &[f64]| min3(x) + NON_MARGIN_OFFSET_3D)),
    };
    let spec = ScenarioSpec::custom(scenario.as_str(), scenario.dim(), q, s);
    check_shape(scenario, &spec)?;
    Ok(spec)
}

/// Numerical check of the sign pattern a shipped scenario is built around,
/// along the first coordinate (or the diagonal in 3D).
pub fn check_shape(scenario: Scenario, spec: &ScenarioSpec) -> Result<()> {
    let points = 4000;
    let broken = |what: &str| Err(Error::invalid(format!("scenario {scenario} violates its shape: {what}")));
    let q_at = |t: f64| (spec.q_true)(&vec![t; spec.dim]);
    let ts: Vec<f64> = (0..points).map(|i| -1.0 + (i as f64 + 0.5) * 2.0 / points as f64).collect();
    match scenario {
        Scenario::NonUnique => {
            for &t in &ts {
                let q = q_at(t);
                let ok = if t < -0.5 {
                    q < 0.0
                } else if t <= 0.0 {
                    q == 0.0
                } else {
                    q > 0.0
                };
                if !ok {
                    return broken("q must vanish exactly on [-0.5, 0], be negative below and positive above");
                }
            }
        }
        _ => {
            let changes = ts.windows(2).filter(|w| (q_at(w[0]) > 0.0) != (q_at(w[1]) > 0.0)).count();
            if changes != 1 || ts.iter().any(|&t| q_at(t) == 0.0) {
                return broken("q must change sign exactly once");
            }
        }
    }
    Ok(())
}

/// `n` independent draws from the process, reproducible from `seed`.
pub fn generate(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = rng::stream(seed, &[StreamRole::Data as u64]);
    let rho = spec.noise_corr;
    let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
    let dim = spec.dim;
    let mut x = Vec::with_capacity(n * dim);
    let mut a = Vec::with_capacity(n);
    let mut y_star = Vec::with_capacity(n);
    let mut y_dag = Vec::with_capacity(n);
    let mut xi = vec![0.0; dim];
    for _ in 0..n {
        for v in xi.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let p = (spec.propensity_true)(&xi);
        let ai = u8::from(rng.random::<f64>() < p);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let e1 = spec.noise_sd * z1;
        let e2 = spec.noise_sd * (rho * z1 + rho_c * z2);
        x.extend_from_slice(&xi);
        a.push(ai);
        y_star.push(spec.regression(true, ai, &xi) + e1);
        y_dag.push(spec.regression(false, ai, &xi) + e2);
    }
    Dataset::from_columns(dim, x, a, y_star, y_dag)
}
