//! Monte Carlo coverage studies.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{extend_with_estimated_optimum, run_bands, BandConfig, JointSelection, PolicyClass, DEFAULT_T_GRID};
use crate::error::{Error, Result};
use crate::estimators::{estimate_all, one_step_ci_with, os_split_ci_with, PolicyEstimates, PolicyLearner};
use crate::model::{grid_box, grid_threshold, z_alpha_beta, Interval, Method, PolicyGrid};
use crate::nuisance::{cross_fit, fit_nuisance, Bandwidth, NuisanceFit, NuisanceRecipe, PropensityMethod, DEFAULT_CLIP};
use crate::rng::derive_seed;
use crate::simulate::truth::{oracle_ci, oracle_truth, OracleTruth};
use crate::simulate::{generate, ScenarioSpec};

/// How nuisance propensities are obtained in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropensityChoice {
    /// The design's randomization probability.
    Known,
    #[default]
    Kernel,
}

/// How the one-step methods learn the primary-optimal policy in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    /// `1{q_hat > 0}` over all policies.
    PlugIn,
    /// Argmax of the estimated primary value over the study grid.
    #[default]
    Class,
}

/// Everything that defines a coverage study besides the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    /// Thresholds in 1D; optimizer budget (and approximate box-grid size) in 3D.
    pub grid_size: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub replications: usize,
    pub alpha: f64,
    pub beta: f64,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Cross-fitting folds for the one-step method; `None` fits in-sample.
    pub one_step_folds: Option<usize>,
    /// Cross-fitting folds for the band methods; `None` fits in-sample.
    pub band_folds: Option<usize>,
    pub bandwidth: Bandwidth,
    pub propensity: PropensityChoice,
    pub learner: LearnerChoice,
    pub clip: f64,
    pub t_grid: usize,
    pub selection: JointSelection,
    pub integration_points: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n: 500,
            grid_size: 2000,
            b: 1000,
            replications: 1000,
            alpha: 0.05,
            beta: 0.01,
            methods: Method::ALL.to_vec(),
            seed: 0,
            one_step_folds: Some(2),
            band_folds: None,
            bandwidth: Bandwidth::Auto,
            propensity: PropensityChoice::Kernel,
            learner: LearnerChoice::Class,
            clip: DEFAULT_CLIP,
            t_grid: DEFAULT_T_GRID,
            selection: JointSelection::Shortest,
            integration_points: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        z_alpha_beta(self.alpha, self.beta)?;
        if self.replications < 1 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if self.n < 4 {
            return Err(Error::invalid(format!("sample size must be at least 4, got {}", self.n)));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.grid_size < 2 {
            return Err(Error::invalid("grid size must be at least 2"));
        }
        if self.needs_bands() {
            BandConfig { b: self.b, alpha: self.alpha, beta: self.beta, t_grid: self.t_grid, seed: 0, selection: self.selection }
                .validate()?;
        }
        Ok(())
    }

    fn needs_bands(&self) -> bool {
        self.methods.iter().any(|m| matches!(m, Method::Union | Method::Joint))
    }

    fn needs_grid_estimates(&self) -> bool {
        self.needs_bands() || self.methods.contains(&Method::Oracle)
    }

    fn recipe(&self, spec: &ScenarioSpec) -> NuisanceRecipe {
        let mut recipe = NuisanceRecipe::kernel(self.bandwidth).with_clip(self.clip);
        if self.propensity == PropensityChoice::Known {
            recipe.propensity = PropensityMethod::Known(spec.propensity_true.clone());
        }
        recipe
    }

    fn integration_points(&self, dim: usize) -> usize {
        match (self.integration_points, dim) {
            (0, 1) => 200_000,
            (0, _) => 1_000_000,
            (p, _) => p,
        }
    }
}

/// The policy grid a study uses for a scenario: thresholds over `[-1, 1]`
/// in 1D, a box-corner lattice over `[-1, 1]^3` in 3D.
pub fn study_grid(dim: usize, grid_size: usize) -> Result<PolicyGrid> {
    if dim == 1 {
        grid_threshold(-1.0, 1.0, grid_size)
    } else {
        grid_box(-1.0, 1.0, box_axis_points(grid_size))
    }
}

/// Lattice points per axis so that the box grid has about `grid_size`
/// corners; always odd so that 0 is a corner coordinate.
pub fn box_axis_points(grid_size: usize) -> usize {
    let per_axis = (grid_size as f64).cbrt().round().max(3.0) as usize;
    if per_axis.is_multiple_of(2) {
        per_axis + 1
    } else {
        per_axis
    }
}

/// Realized errors of the fitted CATEs against the truth at the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub rmse_cate_primary: f64,
    pub rmse_cate_subsidiary: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub intervals: Vec<Interval>,
    pub kept_union: Option<usize>,
    pub kept_joint: Option<usize>,
    pub diagnostics: Option<NuisanceDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub coverage: f64,
    pub mean_width: f64,
    /// Standard error of the mean width across replicates.
    pub width_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub scenario: String,
    pub n: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub psi_l: f64,
    pub psi_u: f64,
    pub rows: Vec<MethodSummary>,
    pub mean_diagnostics: Option<NuisanceDiagnostics>,
    pub replicates: Vec<ReplicateRecord>,
}

pub const CSV_HEADER: &str = "scenario,n,method,coverage,mean_width,replications,B,seed";

impl CoverageReport {
    pub fn row(&self, method: Method) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                self.scenario, self.n, r.method, r.coverage, r.mean_width, self.replications, self.b, self.seed
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// JSON summary; per-replicate records are included when `verbose`.
    pub fn to_json(&self, verbose: bool) -> Result<String> {
        if verbose {
            Ok(serde_json::to_string_pretty(self)?)
        } else {
            let mut slim = self.clone();
            slim.replicates.clear();
            Ok(serde_json::to_string_pretty(&slim)?)
        }
    }
}

/// Runs a full study on a scenario. Replicates are independent and run in
/// parallel; every random stream derives from `(seed, replicate)`, so the
/// report does not depend on the thread count.
pub fn run_study(spec: &ScenarioSpec, cfg: &StudyConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let base_grid = study_grid(spec.dim, cfg.grid_size)?;
    let truth = oracle_truth(spec, &base_grid, cfg.integration_points(spec.dim))?;
    let recipe = cfg.recipe(spec);

    let records: Vec<Result<ReplicateRecord>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replicate(spec, cfg, &recipe, &base_grid, &truth, r))
        .collect();
    let mut replicates = Vec::with_capacity(cfg.replications);
    for (index, rec) in records.into_iter().enumerate() {
        replicates.push(rec.map_err(|e| Error::Replicate { index, source: Box::new(e) })?);
    }
    Ok(summarize(spec, cfg, &truth, replicates))
}

fn summarize(spec: &ScenarioSpec, cfg: &StudyConfig, truth: &OracleTruth, replicates: Vec<ReplicateRecord>) -> CoverageReport {
    let mut per_method: BTreeMap<Method, (usize, Vec<f64>)> = BTreeMap::new();
    for rec in &replicates {
        for ci in &rec.intervals {
            let entry = per_method.entry(ci.method).or_default();
            entry.0 += usize::from(ci.covers(truth.psi_l, truth.psi_u));
            entry.1.push(ci.width());
        }
    }
    let reps = replicates.len() as f64;
    let rows = cfg
        .methods
        .iter()
        .filter_map(|m| per_method.get(m).map(|v| (m, v)))
        .map(|(m, (hits, widths))| {
            let mean_width = widths.iter().sum::<f64>() / reps;
            let var = widths.iter().map(|w| (w - mean_width).powi(2)).sum::<f64>() / (reps - 1.0).max(1.0);
            MethodSummary { method: *m, coverage: *hits as f64 / reps, mean_width, width_se: (var / reps).sqrt() }
        })
        .collect();
    let diags: Vec<NuisanceDiagnostics> = replicates.iter().filter_map(|r| r.diagnostics).collect();
    let mean_diagnostics = (!diags.is_empty()).then(|| NuisanceDiagnostics {
        rmse_cate_primary: diags.iter().map(|d| d.rmse_cate_primary).sum::<f64>() / diags.len() as f64,
        rmse_cate_subsidiary: diags.iter().map(|d| d.rmse_cate_subsidiary).sum::<f64>() / diags.len() as f64,
    });
    CoverageReport {
        scenario: spec.name.clone(),
        n: cfg.n,
        b: cfg.b,
        replications: cfg.replications,
        seed: cfg.seed,
        alpha: cfg.alpha,
        beta: cfg.beta,
        psi_l: truth.psi_l,
        psi_u: truth.psi_u,
        rows,
        mean_diagnostics,
        replicates,
    }
}

fn diagnostics(spec: &ScenarioSpec, fit: &NuisanceFit, data: &crate::model::Dataset) -> NuisanceDiagnostics {
    let n = data.len() as f64;
    let (mut eq, mut es) = (0.0, 0.0);
    for i in 0..data.len() {
        let x = data.x(i);
        eq += (fit.cate_primary(i) - (spec.q_true)(x)).powi(2);
        es += (fit.cate_subsidiary(i) - (spec.s_true)(x)).powi(2);
    }
    NuisanceDiagnostics { rmse_cate_primary: (eq / n).sqrt(), rmse_cate_subsidiary: (es / n).sqrt() }
}

/// Grid used for one replicate's band methods. In 3D the box lattice is
/// extended by the corner that maximizes the estimated primary value.
fn replicate_grid(
    base: &PolicyGrid,
    dim: usize,
    budget: usize,
    fit: &NuisanceFit,
    data: &crate::model::Dataset,
    seed: u64,
) -> Result<PolicyGrid> {
    if dim == 1 {
        return Ok(base.clone());
    }
    extend_with_estimated_optimum(base, PolicyClass::Box { lo: -1.0, hi: 1.0 }, budget, fit, data, seed)
}

fn run_replicate(
    spec: &ScenarioSpec,
    cfg: &StudyConfig,
    recipe: &NuisanceRecipe,
    base_grid: &PolicyGrid,
    truth: &OracleTruth,
    index: usize,
) -> Result<ReplicateRecord> {
    let seed = derive_seed(cfg.seed, &[index as u64]);
    let data = generate(spec, cfg.n, seed)?;
    let mut intervals = Vec::with_capacity(cfg.methods.len());
    let mut kept_union = None;
    let mut kept_joint = None;
    let mut diag = None;

    let mut estimates: Option<PolicyEstimates> = None;
    let mut bands = None;
    if cfg.needs_grid_estimates() {
        let fit = match cfg.band_folds {
            Some(k) => cross_fit(&data, k, recipe, seed)?,
            None => fit_nuisance(&data, recipe)?,
        };
        diag = Some(diagnostics(spec, &fit, &data));
        let grid = replicate_grid(base_grid, spec.dim, cfg.grid_size, &fit, &data, seed)?;
        let est = estimate_all(&grid, &fit, &data)?;
        if cfg.needs_bands() {
            let band_cfg = BandConfig {
                b: cfg.b,
                alpha: cfg.alpha,
                beta: cfg.beta,
                t_grid: cfg.t_grid,
                seed,
                selection: cfg.selection,
            };
            bands = Some(run_bands(&est, &band_cfg)?);
        }
        estimates = Some(est);
    }

    let learner = match cfg.learner {
        LearnerChoice::PlugIn => PolicyLearner::PlugIn,
        LearnerChoice::Class => PolicyLearner::GridArgmax(base_grid),
    };
    for &method in &cfg.methods {
        let ci = match method {
            Method::Union => {
                let b = bands.as_ref().expect("bands computed");
                kept_union = Some(b.kept_union.len());
                b.union
            }
            Method::Joint => {
                let b = bands.as_ref().expect("bands computed");
                kept_joint = Some(b.kept_joint.len());
                b.joint
            }
            Method::OneStep => one_step_ci_with(&data, cfg.alpha, recipe, cfg.one_step_folds, seed, learner)?.interval,
            Method::OsSplit => os_split_ci_with(&data, cfg.alpha, recipe, seed, learner)?.interval,
            Method::Oracle => oracle_ci(truth, estimates.as_ref().expect("estimates computed"), cfg.alpha)?,
        };
        intervals.push(ci);
    }
    Ok(ReplicateRecord { index, seed, intervals, kept_union, kept_joint, diagnostics: diag })
}
