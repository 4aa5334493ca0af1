//! Human-readable tables.

use polband_core::simulate::CoverageReport;

/// `x` rounded to six significant digits, plain notation where practical.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-5..15).contains(&magnitude) {
        let decimals = (5 - magnitude).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

pub fn coverage_table(report: &CoverageReport) -> String {
    let mut out = format!(
        "scenario {}  n={}  B={}  replications={}  seed={}\ntrue range [{}, {}]\n",
        report.scenario,
        report.n,
        report.b,
        report.replications,
        report.seed,
        sig6(report.psi_l),
        sig6(report.psi_u)
    );
    out.push_str(&format!("{:<10} {:>12} {:>12}\n", "method", "coverage", "mean width"));
    for row in &report.rows {
        out.push_str(&format!("{:<10} {:>12} {:>12}\n", row.method.as_str(), sig6(row.coverage), sig6(row.mean_width)));
    }
    out
}
