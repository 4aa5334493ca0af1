//! Synthetic data-generating processes, numerically exact targets, and
//! Monte Carlo coverage studies.

mod scenario;
mod study;
mod truth;

pub use scenario::{
    check_shape, generate, make_scenario, Scenario, ScenarioSpec, DEFAULT_NOISE_CORR, DEFAULT_NOISE_SD,
    NON_MARGIN_OFFSET, NON_MARGIN_OFFSET_3D,
};
pub use study::{
    box_axis_points, run_study, LearnerChoice, study_grid, CoverageReport, MethodSummary, NuisanceDiagnostics, PropensityChoice,
    ReplicateRecord, StudyConfig, CSV_HEADER,
};
pub use truth::{
    cells_per_axis, check_margin, oracle_ci, oracle_truth, truth_from_quadrature, MarginCheck, OracleTruth, Quadrature,
    MIN_INTEGRATION_POINTS,
};
