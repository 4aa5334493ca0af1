//! Nuisance estimation: propensity `p(a|x)`, arm-specific outcome
//! regressions for both outcomes, and the two CATEs, optionally cross-fit.

mod kernel;

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dataset, Outcome};
use crate::rng;

pub use kernel::{fit_kernel_regression, silverman_bandwidth, Bandwidth, KernelRegression, KernelSmoother};

/// Function of the features alone.
pub type FeatureFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Function of an action and the features.
pub type ArmFn = Arc<dyn Fn(u8, &[f64]) -> f64 + Send + Sync>;

pub const DEFAULT_CLIP: f64 = 0.01;

#[derive(Clone)]
pub enum PropensityMethod {
    /// Designed randomization: `p(1|x)` supplied by the caller.
    Known(FeatureFn),
    /// Nadaraya–Watson regression of `A` on `X`.
    Kernel(Bandwidth),
}

#[derive(Clone)]
pub enum RegressionMethod {
    Known(ArmFn),
    Kernel(Bandwidth),
}

impl fmt::Debug for PropensityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropensityMethod::Known(_) => f.write_str("Known(<fn>)"),
            PropensityMethod::Kernel(b) => write!(f, "Kernel({b:?})"),
        }
    }
}

impl fmt::Debug for RegressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressionMethod::Known(_) => f.write_str("Known(<fn>)"),
            RegressionMethod::Kernel(b) => write!(f, "Kernel({b:?})"),
        }
    }
}

/// How to fit every nuisance function from a training sample.
#[derive(Debug, Clone)]
pub struct NuisanceRecipe {
    pub propensity: PropensityMethod,
    pub primary: RegressionMethod,
    pub subsidiary: RegressionMethod,
    pub clip: f64,
}

impl NuisanceRecipe {
    /// Kernel estimates for everything.
    pub fn kernel(bandwidth: Bandwidth) -> Self {
        Self {
            propensity: PropensityMethod::Kernel(bandwidth),
            primary: RegressionMethod::Kernel(bandwidth),
            subsidiary: RegressionMethod::Kernel(bandwidth),
            clip: DEFAULT_CLIP,
        }
    }

    /// Kernel outcome regressions with a known propensity.
    pub fn known_propensity(p1: FeatureFn, bandwidth: Bandwidth) -> Self {
        Self { propensity: PropensityMethod::Known(p1), ..Self::kernel(bandwidth) }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }

    fn validate(&self) -> Result<()> {
        validate_clip(self.clip)
    }
}

fn validate_clip(clip: f64) -> Result<()> {
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Error::invalid(format!("propensity clip must lie in (0, 0.5), got {clip}")));
    }
    Ok(())
}

/// Fitted `p(a|x)`, clipped into `[clip, 1 - clip]`.
#[derive(Clone)]
pub struct PropensityModel {
    inner: PropensityInner,
    clip: f64,
}

#[derive(Clone)]
enum PropensityInner {
    Known(FeatureFn),
    Kernel(KernelSmoother),
}

impl fmt::Debug for PropensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.inner {
            PropensityInner::Known(_) => "known",
            PropensityInner::Kernel(_) => "kernel",
        };
        f.debug_struct("PropensityModel").field("kind", &kind).field("clip", &self.clip).finish()
    }
}

impl PropensityModel {
    /// Clipped `p(1|x)`.
    pub fn treat_prob(&self, x: &[f64]) -> f64 {
        let raw = match &self.inner {
            PropensityInner::Known(f) => f(x),
            PropensityInner::Kernel(s) => s.predict(x)[0],
        };
        raw.clamp(self.clip, 1.0 - self.clip)
    }

    pub fn prob(&self, a: u8, x: &[f64]) -> f64 {
        let p1 = self.treat_prob(x);
        if a == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    pub fn bandwidths(&self) -> Option<Vec<f64>> {
        match &self.inner {
            PropensityInner::Kernel(s) => Some(s.bandwidths()),
            PropensityInner::Known(_) => None,
        }
    }
}

pub fn fit_propensity(data: &Dataset, method: &PropensityMethod, clip: f64) -> Result<PropensityModel> {
    validate_clip(clip)?;
    let inner = match method {
        PropensityMethod::Known(f) => PropensityInner::Known(f.clone()),
        PropensityMethod::Kernel(bw) => {
            data.require_both_arms("propensity estimation")?;
            let target = data.actions().iter().map(|&a| f64::from(a)).collect();
            PropensityInner::Kernel(KernelSmoother::fit(data.dim(), data.features().to_vec(), vec![target], *bw)?)
        }
    };
    Ok(PropensityModel { inner, clip })
}

#[derive(Clone)]
pub enum RegressionModel {
    Known(ArmFn),
    Kernel(KernelRegression),
}

impl RegressionModel {
    pub fn predict(&self, a: u8, x: &[f64]) -> f64 {
        match self {
            RegressionModel::Known(f) => f(a, x),
            RegressionModel::Kernel(r) => r.predict(a, x),
        }
    }
}

#[derive(Clone)]
enum OutcomeModels {
    /// Both outcomes smoothed with the same kernel weights.
    Shared(KernelRegression),
    Separate { primary: RegressionModel, subsidiary: RegressionModel },
}

/// Every nuisance evaluated at one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NuisanceValues {
    /// Clipped `p(1|x)`.
    pub p1: f64,
    /// `E[Y* | A=a, X=x]` for a = 0, 1.
    pub m_star: [f64; 2],
    /// `E[Y† | A=a, X=x]` for a = 0, 1.
    pub m_dag: [f64; 2],
}

impl NuisanceValues {
    pub fn propensity(&self, a: u8) -> f64 {
        if a == 1 {
            self.p1
        } else {
            1.0 - self.p1
        }
    }

    pub fn reg(&self, outcome: Outcome, a: u8) -> f64 {
        match outcome {
            Outcome::Primary => self.m_star[a as usize],
            Outcome::Subsidiary => self.m_dag[a as usize],
        }
    }

    pub fn cate(&self, outcome: Outcome) -> f64 {
        self.reg(outcome, 1) - self.reg(outcome, 0)
    }
}

/// Nuisance functions fitted on one training sample.
#[derive(Clone)]
pub struct NuisanceModel {
    propensity: PropensityModel,
    outcomes: OutcomeModels,
}

impl NuisanceModel {
    pub fn fit(data: &Dataset, recipe: &NuisanceRecipe) -> Result<Self> {
        recipe.validate()?;
        let propensity = fit_propensity(data, &recipe.propensity, recipe.clip)?;
        let outcomes = match (&recipe.primary, &recipe.subsidiary) {
            (RegressionMethod::Kernel(b1), RegressionMethod::Kernel(b2)) if b1 == b2 => OutcomeModels::Shared(
                KernelRegression::fit_targets(data, &[Outcome::Primary, Outcome::Subsidiary], *b1)?,
            ),
            (p, s) => {
                let fit_one = |m: &RegressionMethod, o: Outcome| -> Result<RegressionModel> {
                    Ok(match m {
                        RegressionMethod::Known(f) => RegressionModel::Known(f.clone()),
                        RegressionMethod::Kernel(b) => RegressionModel::Kernel(fit_kernel_regression(data, o, *b)?),
                    })
                };
                OutcomeModels::Separate {
                    primary: fit_one(p, Outcome::Primary)?,
                    subsidiary: fit_one(s, Outcome::Subsidiary)?,
                }
            }
        };
        Ok(Self { propensity, outcomes })
    }

    pub fn propensity_model(&self) -> &PropensityModel {
        &self.propensity
    }

    pub fn propensity(&self, a: u8, x: &[f64]) -> f64 {
        self.propensity.prob(a, x)
    }

    pub fn reg(&self, outcome: Outcome, a: u8, x: &[f64]) -> f64 {
        self.evaluate(x).reg(outcome, a)
    }

    pub fn cate(&self, outcome: Outcome, x: &[f64]) -> f64 {
        self.evaluate(x).cate(outcome)
    }

    pub fn evaluate(&self, x: &[f64]) -> NuisanceValues {
        let p1 = self.propensity.treat_prob(x);
        let mut m_star = [0.0; 2];
        let mut m_dag = [0.0; 2];
        match &self.outcomes {
            OutcomeModels::Shared(reg) => {
                let mut buf = [0.0; 2];
                for a in 0..2u8 {
                    reg.predict_into(a, x, &mut buf);
                    m_star[a as usize] = buf[0];
                    m_dag[a as usize] = buf[1];
                }
            }
            OutcomeModels::Separate { primary, subsidiary } => {
                for a in 0..2u8 {
                    m_star[a as usize] = primary.predict(a, x);
                    m_dag[a as usize] = subsidiary.predict(a, x);
                }
            }
        }
        NuisanceValues { p1, m_star, m_dag }
    }

    /// Outcome-regression bandwidths per arm, when kernel-based.
    pub fn regression_bandwidths(&self) -> Option<[Vec<f64>; 2]> {
        match &self.outcomes {
            OutcomeModels::Shared(r) => Some([r.bandwidths(0), r.bandwidths(1)]),
            OutcomeModels::Separate { primary: RegressionModel::Kernel(r), .. } => {
                Some([r.bandwidths(0), r.bandwidths(1)])
            }
            _ => None,
        }
    }
}

/// Nuisance evaluations at every observation of a design, plus the models
/// that produced them. Under cross-fitting, observation `i` is scored by the
/// model trained without its fold.
#[derive(Clone)]
pub struct NuisanceFit {
    values: Vec<NuisanceValues>,
    models: Vec<NuisanceModel>,
    fold_assignment: Option<Vec<usize>>,
    clip: f64,
}

impl fmt::Debug for NuisanceFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NuisanceFit")
            .field("n", &self.values.len())
            .field("folds", &self.models.len())
            .field("clip", &self.clip)
            .finish()
    }
}

impl NuisanceFit {
    /// Assembles a fit from precomputed design evaluations.
    pub fn from_values(values: Vec<NuisanceValues>, clip: f64) -> Result<Self> {
        validate_clip(clip)?;
        let values = values
            .into_iter()
            .map(|v| NuisanceValues { p1: v.p1.clamp(clip, 1.0 - clip), ..v })
            .collect();
        Ok(Self { values, models: Vec::new(), fold_assignment: None, clip })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[NuisanceValues] {
        &self.values
    }

    pub fn at(&self, i: usize) -> &NuisanceValues {
        &self.values[i]
    }

    pub fn propensity(&self, a: u8, i: usize) -> f64 {
        self.values[i].propensity(a)
    }

    pub fn reg(&self, outcome: Outcome, a: u8, i: usize) -> f64 {
        self.values[i].reg(outcome, a)
    }

    pub fn cate_primary(&self, i: usize) -> f64 {
        self.values[i].cate(Outcome::Primary)
    }

    pub fn cate_subsidiary(&self, i: usize) -> f64 {
        self.values[i].cate(Outcome::Subsidiary)
    }

    pub fn models(&self) -> &[NuisanceModel] {
        &self.models
    }

    pub fn fold_assignment(&self) -> Option<&[usize]> {
        self.fold_assignment.as_deref()
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }
}

/// Fits on the full sample and evaluates in-sample.
pub fn fit_nuisance(data: &Dataset, recipe: &NuisanceRecipe) -> Result<NuisanceFit> {
    let model = NuisanceModel::fit(data, recipe)?;
    let values = (0..data.len()).into_par_iter().map(|i| model.evaluate(data.x(i))).collect();
    Ok(NuisanceFit { values, models: vec![model], fold_assignment: None, clip: recipe.clip })
}

/// Seeded uniform partition of `0..n` into `folds` groups of near-equal size.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[0xF01D]));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

/// K-fold cross-fitting: each observation's nuisances come from the model
/// trained on the other folds.
pub fn cross_fit(data: &Dataset, folds: usize, recipe: &NuisanceRecipe, seed: u64) -> Result<NuisanceFit> {
    recipe.validate()?;
    let n = data.len();
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("cross-fitting needs 2 <= folds <= n = {n}, got {folds}")));
    }
    let fold_of = fold_partition(n, folds, seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for (i, &f) in fold_of.iter().enumerate() {
        members[f].push(i);
    }

    let models: Vec<NuisanceModel> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let train_data = data.subset(&train)?;
            for arm in [0u8, 1] {
                if train_data.arm_count(arm) == 0 {
                    return Err(Error::MissingArm { arm, context: format!("training complement of fold {f}") });
                }
            }
            NuisanceModel::fit(&train_data, recipe)
        })
        .collect::<Result<_>>()?;

    let values = (0..n).into_par_iter().map(|i| models[fold_of[i]].evaluate(data.x(i))).collect();
    Ok(NuisanceFit { values, models, fold_assignment: Some(fold_of), clip: recipe.clip })
}
