//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::sync::Arc;

use polband_core::bands::{
    bands_from_draws, filter_policies, multiplier_bootstrap, sup_quantile, BandConfig, BootstrapDraws, LowerBoundRule,
};
use polband_core::estimators::{estimate_all, influence_values, value_estimate, PolicyEstimates};
use polband_core::model::{grid_threshold, z_alpha_beta, Method, Outcome, Policy};
use polband_core::nuisance::{fit_nuisance, Bandwidth, NuisanceRecipe, PropensityMethod, RegressionMethod};
use polband_core::simulate::{
    check_margin, generate, make_scenario, run_study, CoverageReport, Quadrature, ScenarioSpec, StudyConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn study(name: &str, n: usize, reps: usize, methods: &[Method], seed: u64) -> CoverageReport {
    let spec = make_scenario(name).expect("shipped scenario");
    let cfg = StudyConfig { n, grid_size: 2000, b: 500, replications: reps, methods: methods.to_vec(), seed, ..Default::default() };
    run_study(&spec, &cfg).expect("study runs")
}

fn cov(r: &CoverageReport, m: Method) -> f64 {
    r.row(m).expect("method present").coverage
}

fn width(r: &CoverageReport, m: Method) -> f64 {
    r.row(m).expect("method present").mean_width
}

const BANDS_AND_ONE_STEP: [Method; 3] = [Method::Union, Method::Joint, Method::OneStep];

fn coverage_dichotomy(non_unique_500: &CoverageReport) -> Verdict {
    let r = non_unique_500;
    let (u, j, o, s) = (cov(r, Method::Union), cov(r, Method::Joint), cov(r, Method::OneStep), cov(r, Method::OsSplit));
    verdict(
        u >= 0.98 && j >= 0.98 && o <= 0.05 && s <= 0.05,
        format!("union {u:.3}, joint {j:.3}, one-step {o:.3}, os-split {s:.3}"),
    )
}

fn margin_validity() -> Verdict {
    let r = study("unique-margin", 500, 200, &BANDS_AND_ONE_STEP, 2);
    let (u, j, o) = (cov(&r, Method::Union), cov(&r, Method::Joint), cov(&r, Method::OneStep));
    let (wu, wj) = (width(&r, Method::Union), width(&r, Method::Joint));
    verdict(
        (0.90..=0.99).contains(&o) && u >= 0.93 && j >= 0.93 && wj < wu,
        format!("one-step {o:.3}, union {u:.3}, joint {j:.3}, widths joint {wj:.4} < union {wu:.4}"),
    )
}

fn non_margin_undercoverage() -> Verdict {
    let r = study("unique-non-margin", 500, 200, &BANDS_AND_ONE_STEP, 3);
    let (u, j, o) = (cov(&r, Method::Union), cov(&r, Method::Joint), cov(&r, Method::OneStep));
    verdict(o <= 0.90 && u >= 0.93 && j >= 0.93, format!("one-step {o:.3}, union {u:.3}, joint {j:.3}"))
}

fn length_floor(non_unique_500: &CoverageReport) -> Verdict {
    let r = study("non-unique", 5000, 50, &[Method::Union, Method::Joint], 4);
    let floor = r.psi_u - r.psi_l - 0.02;
    let mut pass = (r.psi_u - r.psi_l - 0.5).abs() < 0.01;
    let mut parts = vec![format!("truth length {:.4}", r.psi_u - r.psi_l)];
    for m in [Method::Union, Method::Joint] {
        let (w5000, w500) = (width(&r, m), width(non_unique_500, m));
        pass &= w5000 >= floor && w5000 < w500;
        parts.push(format!("{m} {w500:.4} -> {w5000:.4}"));
    }
    verdict(pass, parts.join(", "))
}

fn z_spot_value() -> Verdict {
    let z = z_alpha_beta(0.06, 0.01).expect("valid levels");
    verdict((z - 1.959964).abs() < 0.005, format!("z = {z:.6}"))
}

fn normal_draws(b: usize, k: usize, seed: u64) -> BootstrapDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f: Vec<f64> = (0..b * k).map(|_| rng.sample(StandardNormal)).collect();
    let mut d = BootstrapDraws::from_raw(b, k, f.clone(), f).expect("shape");
    d.normalize();
    d
}

/// Root of `Phi(t)^k = level` by bisection.
fn max_normal_quantile(k: i32, level: f64) -> f64 {
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi.cdf(mid).powi(k) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn bootstrap_quantile_oracle() -> Verdict {
    let q100 = sup_quantile(&normal_draws(100_000, 100, 6), Outcome::Primary, 0.975).expect("normalized");
    let q1 = sup_quantile(&normal_draws(100_000, 1, 7), Outcome::Primary, 0.975).expect("normalized");
    let exact = max_normal_quantile(100, 0.975);
    verdict(
        (q100 - exact).abs() < 0.05 && (q1 - 1.960).abs() < 0.03,
        format!("K=100: {q100:.4} vs {exact:.4}; K=1: {q1:.4} vs 1.960"),
    )
}

fn known_recipe(spec: &ScenarioSpec) -> NuisanceRecipe {
    let s1 = spec.clone();
    let s2 = spec.clone();
    NuisanceRecipe {
        propensity: PropensityMethod::Known(spec.propensity_true.clone()),
        primary: RegressionMethod::Known(Arc::new(move |a, x| s1.regression(true, a, x))),
        subsidiary: RegressionMethod::Known(Arc::new(move |a, x| s2.regression(false, a, x))),
        clip: 0.01,
    }
}

fn estimator_unbiasedness() -> Verdict {
    let spec = make_scenario("unique-margin").expect("shipped scenario");
    let recipe = known_recipe(&spec);
    let policies: Vec<Policy> = [-0.8, -0.3, 0.0, 0.4, 0.9].iter().map(|&a| Policy::Threshold { a }).collect();
    let quad = Quadrature::new(&spec, 200_000).expect("quadrature");
    let reps = 10_000;
    let mut sums = vec![[0.0f64; 2]; policies.len()];
    let mut squares = vec![[0.0f64; 2]; policies.len()];
    for r in 0..reps {
        let data = generate(&spec, 200, 70_000 + r).expect("sample");
        let fit = fit_nuisance(&data, &recipe).expect("known nuisances");
        for (k, p) in policies.iter().enumerate() {
            for (o, outcome) in [Outcome::Primary, Outcome::Subsidiary].into_iter().enumerate() {
                let v = value_estimate(p, &fit, &data, outcome).expect("estimate").estimate;
                sums[k][o] += v;
                squares[k][o] += v * v;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for (k, p) in policies.iter().enumerate() {
        let (omega, psi) = quad.values(p).expect("feature policy");
        for (o, truth) in [omega, psi].into_iter().enumerate() {
            let m = sums[k][o] / reps as f64;
            let var = squares[k][o] / reps as f64 - m * m;
            let se = (var / reps as f64).sqrt();
            worst = worst.max((m - truth).abs() / se);
        }
    }
    verdict(worst < 4.0, format!("largest |mean - truth| / SE over 10 targets = {worst:.2}"))
}

fn invariant_suites() -> Verdict {
    let mut failures = Vec::new();
    let spec = make_scenario("non-unique").expect("shipped scenario");
    let recipe = NuisanceRecipe::kernel(Bandwidth::Auto);
    let grid = grid_threshold(-1.0, 1.0, 201).expect("grid");

    // influence centering
    let mut worst_center: f64 = 0.0;
    for seed in 0..5 {
        let data = generate(&spec, 300, 800 + seed).expect("sample");
        let fit = fit_nuisance(&data, &recipe).expect("fit");
        for a in [-0.9, -0.25, 0.0, 0.6] {
            let p = Policy::Threshold { a };
            for outcome in [Outcome::Primary, Outcome::Subsidiary] {
                let est = value_estimate(&p, &fit, &data, outcome).expect("estimate").estimate;
                let d = influence_values(&p, &fit, &data, outcome, est).expect("influence");
                let scale = d.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
                worst_center = worst_center.max(d.iter().sum::<f64>().abs() / scale);
            }
        }
    }
    if worst_center > 1e-9 {
        failures.push(format!("centering {worst_center:e}"));
    }

    // filtration monotone in the cutoff, LCB maximizer always kept
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for _ in 0..500 {
        let k = rng.random_range(1..80);
        let omega: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let sigma: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..3.0)).collect();
        let n = rng.random_range(1..5000);
        let t = rng.random_range(0.0..4.0);
        let small = filter_policies(&omega, &sigma, n, t, t, LowerBoundRule::SupLcb).expect("filter");
        let large = filter_policies(&omega, &sigma, n, t + 0.5, t + 0.5, LowerBoundRule::SupLcb).expect("filter");
        if !small.kept.iter().all(|k| large.kept.contains(k)) {
            failures.push("filtration not monotone".into());
            break;
        }
        let root_n = (n as f64).sqrt();
        let lcb = |i: usize| omega[i] - sigma[i] * t / root_n;
        let best = (0..k).max_by(|&a, &b| lcb(a).total_cmp(&lcb(b))).expect("nonempty");
        if !small.kept.contains(&best) {
            failures.push("argmax not kept".into());
            break;
        }
    }

    // joint never wider than union on shared draws
    for seed in 0..8 {
        let data = generate(&spec, 300, 900 + seed).expect("sample");
        let fit = fit_nuisance(&data, &recipe).expect("fit");
        let est: PolicyEstimates = estimate_all(&grid, &fit, &data).expect("estimates");
        let draws = multiplier_bootstrap(&est, 500, seed).expect("draws");
        let res = bands_from_draws(&est, &draws, &BandConfig { b: 500, seed, ..BandConfig::default() }).expect("bands");
        if res.joint.width() > res.union.width() {
            failures.push(format!("joint wider than union (seed {seed})"));
        }
    }

    // byte determinism across thread counts
    let cfg = StudyConfig { n: 200, grid_size: 101, b: 200, replications: 12, seed: 5, ..Default::default() };
    let outputs: Vec<String> = [1, 4, 8]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("pool");
            let report = pool.install(|| run_study(&spec, &cfg)).expect("study");
            report.to_json(true).expect("json") + &report.to_csv()
        })
        .collect();
    if outputs.windows(2).any(|w| w[0] != w[1]) {
        failures.push("output differs across thread counts".into());
    }

    let detail = if failures.is_empty() {
        format!("centering max {worst_center:.1e}; 500 random filtrations; 8 shared-draw band pairs; 1/4/8 threads identical")
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

fn margin_checker() -> Verdict {
    let t_grid = [1.5, 2.0, 4.0, 8.0, 16.0, 64.0];
    let linear: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(|x: &[f64]| x[0]);
    let cubic = ScenarioSpec::custom("cubic", 1, linear.clone(), Arc::new(|x: &[f64]| x[0].powi(3)));
    let offset = ScenarioSpec::custom("offset", 1, linear, Arc::new(|x: &[f64]| x[0] + 0.3));
    let good = check_margin(&cubic, 1.0, 3.0, &t_grid, 200_000).expect("check");
    let bad = check_margin(&offset, 1.0, 2.5, &t_grid, 200_000).expect("check");
    // x^2 >= t is impossible on [-1, 1] for t > 1
    let err_good = good.trace.iter().map(|(_, p, _)| p.abs()).fold(0.0, f64::max);
    let err_bad = bad
        .trace
        .iter()
        .map(|(t, p, _)| (p - ((0.3 / (t - 1.0)).min(1.0) + (0.3 / (t + 1.0)).min(1.0)) / 2.0).abs())
        .fold(0.0, f64::max);
    verdict(
        good.pass && !bad.pass && err_good < 1e-3 && err_bad < 1e-3,
        format!("cubic passes={}, offset passes={}, max prob error {:.1e}", good.pass, bad.pass, err_good.max(err_bad)),
    )
}

fn three_d_reproduction() -> Verdict {
    let m = study("3d-margin", 500, 100, &BANDS_AND_ONE_STEP, 10);
    let nm = study("3d-non-margin", 500, 100, &BANDS_AND_ONE_STEP, 11);
    let (u, j) = (cov(&m, Method::Union), cov(&m, Method::Joint));
    let (wu, wj) = (width(&m, Method::Union), width(&m, Method::Joint));
    let o = cov(&nm, Method::OneStep);
    verdict(
        u >= 0.90 && j >= 0.90 && wj <= wu && o <= 0.80,
        format!("3d-margin union {u:.3}, joint {j:.3}, widths {wj:.4} <= {wu:.4}; 3d-non-margin one-step {o:.3}"),
    )
}

fn main() {
    let shared = std::cell::OnceCell::new();
    let non_unique_500 = || {
        shared.get_or_init(|| {
            study("non-unique", 500, 200, &[Method::Union, Method::Joint, Method::OneStep, Method::OsSplit], 1)
        })
    };
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        ("coverage dichotomy", Box::new(|| coverage_dichotomy(non_unique_500()))),
        ("margin-scenario validity", Box::new(margin_validity)),
        ("non-margin one-step undercoverage", Box::new(non_margin_undercoverage)),
        ("interval-length floor", Box::new(|| length_floor(non_unique_500()))),
        ("z_{alpha,beta} spot value", Box::new(z_spot_value)),
        ("bootstrap quantile oracle", Box::new(bootstrap_quantile_oracle)),
        ("estimator unbiasedness", Box::new(estimator_unbiasedness)),
        ("invariant suites", Box::new(invariant_suites)),
        ("margin checker ground truth", Box::new(margin_checker)),
        ("3D qualitative reproduction", Box::new(three_d_reproduction)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = std::time::Instant::now();
        let out = check();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!out.pass);
        println!("criterion {:>2} {tag}: {name}: {} ({:.1}s)", i + 1, out.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
