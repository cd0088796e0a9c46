//! Experiment drivers: configuration, measurement, and reports.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::specialfn::log_gamma;

pub mod acceptance;
pub mod config;
pub mod experiments;
pub mod presets;
pub mod report;

pub use config::{
    parse_config, write_config, DomainSpec, ExperimentConfig, ExperimentKind, MeshSpec, ProblemSpec, Shape, TimeSpec,
    WeightSpec,
};
pub use experiments::{
    run_dilation_test, run_experiment, run_higher_order, run_norms, run_path_continuity, run_polygon_localization,
    run_t_independence, run_theta_sweep,
};
pub use report::{emit_report, Estimate, Provenance, Report, ReportFormat, ReportRow, Tolerance, Verdict};

/// Admissible weight exponents near a vertex of opening `kappa0`:
/// the open interval `(p(1 - pi/kappa0), p(1 + pi/kappa0))`.
pub fn critical_range(p: f64, kappa0: f64) -> Result<(f64, f64)> {
    if !(p >= 2.0 && p.is_finite()) {
        return Err(Error::domain(format!("critical range needs p >= 2, got {p}")));
    }
    if !(kappa0 > 0.0 && kappa0 <= 2.0 * PI) {
        return Err(Error::domain(format!("opening must lie in (0, 2pi], got {kappa0}")));
    }
    let a = PI / kappa0;
    Ok((p * (1.0 - a), p * (1.0 + a)))
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Minimum coefficient of determination for a slope verdict.
pub const R2_GATE: f64 = 0.98;

pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::config("a slope fit needs at least two points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::domain("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("log-log fit needs distinct abscissae"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LogLogFit { slope, intercept, r2 })
}

/// `E|X|^p / sigma^p` for a centered Gaussian `X`: `2^{p/2} Gamma((p+1)/2) / sqrt(pi)`.
pub fn gaussian_abs_moment(p: f64) -> f64 {
    let lg = log_gamma(0.5 * (p + 1.0)).expect("positive argument");
    (0.5 * p * 2f64.ln() + lg - 0.5 * PI.ln()).exp()
}
