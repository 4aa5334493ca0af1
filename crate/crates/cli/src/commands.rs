use std::io::Write;
use std::path::Path;

use serde_json::json;

use polband_core::bands::{extend_with_estimated_optimum, run_bands, BandConfig, BandResult, JointSelection, PolicyClass, DEFAULT_T_GRID};
use polband_core::estimators::{estimate_all, one_step_ci_with, os_split_ci_with, PolicyLearner};
use polband_core::model::{grid_box, grid_threshold, z_alpha_beta, Dataset, Interval, Method, Policy, PolicyGrid};
use polband_core::nuisance::{cross_fit, fit_nuisance, Bandwidth, NuisanceRecipe, DEFAULT_CLIP};
use polband_core::simulate::{
    box_axis_points, generate, make_scenario, run_study, LearnerChoice, PropensityChoice, Quadrature, ScenarioSpec,
    StudyConfig,
};
use polband_core::stats::linspace;

use crate::config::FileConfig;
use crate::format::coverage_table;
use crate::{AnalyzeArgs, ClassArg, CliError, CurvesArgs, InferenceArgs, Learner, StudyArgs};

/// Inference settings after merging flags, the config file and defaults.
struct Settings {
    alpha: f64,
    beta: f64,
    b: usize,
    seed: u64,
    one_step_folds: Option<usize>,
    band_folds: Option<usize>,
    bandwidth: Bandwidth,
    propensity: PropensityChoice,
    clip: f64,
    t_grid: usize,
    methods: Vec<Method>,
    learner: Learner,
}

impl Settings {
    fn resolve(args: &InferenceArgs, default_methods: &[Method]) -> Result<Self, CliError> {
        let file = FileConfig::load(args.config.as_deref())?;
        let alpha = args.alpha.or(file.band.alpha).or(file.alpha).unwrap_or(0.05);
        let beta = args.beta.or(file.band.beta).unwrap_or(0.01);
        z_alpha_beta(alpha, beta)?;
        let folds = args.folds.or(file.nuisance.folds).unwrap_or(2);
        if folds == 1 {
            return Err(CliError::Usage("--folds must be 0 (no cross-fitting) or at least 2".into()));
        }
        let one_step_folds = (folds >= 2 && file.estimator.cross_fit != Some(false)).then_some(folds);
        let band_folds = (file.band.cross_fit == Some(true)).then_some(folds.max(2));
        let methods = match &args.methods {
            Some(names) => names.iter().map(|s| s.parse::<Method>()).collect::<Result<Vec<_>, _>>()?,
            None => default_methods.to_vec(),
        };
        if methods.is_empty() {
            return Err(CliError::Usage("--methods needs at least one method".into()));
        }
        Ok(Self {
            alpha,
            beta,
            b: args.b.or(file.band.b).unwrap_or(1000),
            seed: args.seed.or(file.band.seed).unwrap_or(0),
            one_step_folds,
            band_folds,
            bandwidth: file.bandwidth()?,
            propensity: file.nuisance.propensity.unwrap_or_default(),
            clip: file.nuisance.clip.unwrap_or(DEFAULT_CLIP),
            t_grid: file.band.t_grid.unwrap_or(DEFAULT_T_GRID),
            methods,
            learner: args.learner,
        })
    }

    fn band_config(&self) -> BandConfig {
        BandConfig {
            b: self.b,
            alpha: self.alpha,
            beta: self.beta,
            t_grid: self.t_grid,
            seed: self.seed,
            selection: JointSelection::Shortest,
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::Runtime(format!("cannot write to standard output: {e}")))
        }
    }
}

fn scenario(name: &str, noise_corr: Option<f64>) -> Result<ScenarioSpec, CliError> {
    let spec = make_scenario(name)?;
    Ok(match noise_corr {
        Some(rho) => spec.with_noise_corr(rho)?,
        None => spec,
    })
}

pub fn study(args: StudyArgs) -> Result<(), CliError> {
    let settings = Settings::resolve(&args.inference, &Method::ALL)?;
    let spec = scenario(&args.scenario, args.noise_corr)?;
    let cfg = StudyConfig {
        n: args.n,
        grid_size: args.grid,
        b: settings.b,
        replications: args.reps,
        alpha: settings.alpha,
        beta: settings.beta,
        methods: settings.methods.clone(),
        seed: settings.seed,
        one_step_folds: settings.one_step_folds,
        band_folds: settings.band_folds,
        bandwidth: settings.bandwidth,
        propensity: settings.propensity,
        learner: match settings.learner {
            Learner::Class => LearnerChoice::Class,
            Learner::PlugIn => LearnerChoice::PlugIn,
        },
        clip: settings.clip,
        t_grid: settings.t_grid,
        selection: JointSelection::Shortest,
        integration_points: args.integration_points.unwrap_or(0),
    };
    let report = run_study(&spec, &cfg)?;
    write_output(args.out.as_deref(), &report.to_csv())?;
    let table = coverage_table(&report);
    if args.out.is_some() {
        print!("{table}");
    } else {
        eprint!("{table}");
    }
    if args.verbose {
        let json = report.to_json(true)?;
        match &args.out {
            Some(path) => write_output(Some(&path.with_extension("json")), &json)?,
            None => eprintln!("{json}"),
        }
    }
    Ok(())
}

fn feature_range(data: &Dataset, dims: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..data.len() {
        for &v in &data.x(i)[..dims] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

fn interval_json(ci: &Interval, kept: Option<usize>) -> serde_json::Value {
    json!({
        "method": ci.method,
        "lower": ci.lower,
        "upper": ci.upper,
        "width": ci.width(),
        "kept": kept,
    })
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let settings = Settings::resolve(&args.inference, &[Method::Union, Method::Joint, Method::OneStep, Method::OsSplit])?;
    if settings.methods.contains(&Method::Oracle) {
        return Err(CliError::Usage("the oracle method needs a known data-generating process; use `study`".into()));
    }
    if settings.propensity == PropensityChoice::Known {
        return Err(CliError::Usage("a known propensity is only available in simulated studies".into()));
    }
    if !args.input.is_file() {
        return Err(CliError::Usage(format!("input {} is not a readable file", args.input.display())));
    }
    let data = Dataset::read_csv_path(&args.input)?;
    let recipe = NuisanceRecipe::kernel(settings.bandwidth).with_clip(settings.clip);

    let fit = match settings.band_folds {
        Some(k) => cross_fit(&data, k, &recipe, settings.seed)?,
        None => fit_nuisance(&data, &recipe)?,
    };
    let grid: PolicyGrid = match args.class {
        ClassArg::Threshold => {
            let (lo, hi) = feature_range(&data, 1);
            grid_threshold(lo, hi, args.grid)?
        }
        ClassArg::Box => {
            if data.dim() < 3 {
                return Err(CliError::Usage(format!("the box class needs 3 features, the input has {}", data.dim())));
            }
            let (lo, hi) = feature_range(&data, 3);
            let base = grid_box(lo, hi, box_axis_points(args.grid))?;
            extend_with_estimated_optimum(&base, PolicyClass::Box { lo, hi }, args.grid, &fit, &data, settings.seed)?
        }
    };
    let est = estimate_all(&grid, &fit, &data)?;
    let needs_bands = settings.methods.iter().any(|m| matches!(m, Method::Union | Method::Joint));
    let bands: Option<BandResult> = if needs_bands { Some(run_bands(&est, &settings.band_config())?) } else { None };

    let learner = match settings.learner {
        Learner::Class => PolicyLearner::GridArgmax(&grid),
        Learner::PlugIn => PolicyLearner::PlugIn,
    };
    let mut intervals = Vec::new();
    for &method in &settings.methods {
        let entry = match method {
            Method::Union => {
                let b = bands.as_ref().expect("bands computed");
                interval_json(&b.union, Some(b.kept_union.len()))
            }
            Method::Joint => {
                let b = bands.as_ref().expect("bands computed");
                interval_json(&b.joint, Some(b.kept_joint.len()))
            }
            Method::OneStep => {
                let r = one_step_ci_with(&data, settings.alpha, &recipe, settings.one_step_folds, settings.seed, learner)?;
                interval_json(&r.interval, None)
            }
            Method::OsSplit => {
                let r = os_split_ci_with(&data, settings.alpha, &recipe, settings.seed, learner)?;
                interval_json(&r.interval, None)
            }
            Method::Oracle => unreachable!("rejected above"),
        };
        intervals.push(entry);
    }

    let p1: Vec<f64> = fit.values().iter().map(|v| v.p1).collect();
    let clip = fit.clip();
    let at_bound = p1.iter().filter(|&&p| p <= clip || p >= 1.0 - clip).count();
    let model = fit.models().first();
    let best = est.argmax_omega();
    let report = json!({
        "n": data.len(),
        "dim": data.dim(),
        "class": match args.class { ClassArg::Threshold => "threshold", ClassArg::Box => "box" },
        "policies": grid.len(),
        "alpha": settings.alpha,
        "beta": settings.beta,
        "B": settings.b,
        "seed": settings.seed,
        "intervals": intervals,
        "cutoffs": bands.as_ref().map(|b| b.cutoffs),
        "l_n": bands.as_ref().map(|b| b.l_n),
        "kept_union": bands.as_ref().map(|b| &b.kept_union),
        "kept_joint": bands.as_ref().map(|b| &b.kept_joint),
        "best_primary_policy": {
            "policy": grid.get(best),
            "omega_hat": est.omega_hat[best],
            "psi_hat": est.psi_hat[best],
        },
        "nuisance": {
            "propensity_min": p1.iter().copied().fold(f64::INFINITY, f64::min),
            "propensity_max": p1.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "propensity_at_clip": at_bound,
            "clip": clip,
            "propensity_bandwidths": model.and_then(|m| m.propensity_model().bandwidths()),
            "regression_bandwidths": model.and_then(|m| m.regression_bandwidths()),
            "folds": settings.band_folds,
        },
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))? + "\n";
    write_output(args.out.as_deref(), &text)
}

pub fn scenario_curves(args: CurvesArgs) -> Result<(), CliError> {
    let spec = scenario(&args.scenario, args.noise_corr)?;
    if let Some(sample) = &args.emit_sample {
        let (n, seed) = (sample[0] as usize, sample[1]);
        let data = generate(&spec, n, seed)?;
        let mut buf = Vec::new();
        data.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        return write_output(args.out.as_deref(), &text);
    }
    if args.resolution < 2 {
        return Err(CliError::Usage("--resolution must be at least 2".into()));
    }
    let points = args.integration_points.unwrap_or(if spec.dim == 1 { 200_000 } else { 1_000_000 });
    let quad = Quadrature::new(&spec, points)?;
    let mut text = String::from("t,omega,psi,q,s\n");
    for t in linspace(-1.0, 1.0, args.resolution) {
        let policy = if spec.dim == 1 { Policy::Threshold { a: t } } else { Policy::Box { a: [t; 3] } };
        let (omega, psi) = quad.values(&policy)?;
        let x = vec![t; spec.dim];
        text.push_str(&format!("{t:?},{omega:?},{psi:?},{:?},{:?}\n", (spec.q_true)(&x), (spec.s_true)(&x)));
    }
    write_output(args.out.as_deref(), &text)
}
