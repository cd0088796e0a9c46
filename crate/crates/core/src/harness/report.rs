use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a predicted value or threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Closed-form prediction from the regularity theory.
    Formula,
    /// Independent computation (image kernels, quadrature, exact moments).
    Oracle,
    /// Exact identity, up to rounding.
    Identity,
    /// Artifact-level threshold: the theory only asserts a finite constant.
    Engineering,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Formula => "formula",
            Provenance::Oracle => "oracle",
            Provenance::Identity => "identity",
            Provenance::Engineering => "engineering-threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The measurement cannot support a verdict (e.g. a slope fit with low R²).
    Inconclusive,
    /// Nothing to measure (e.g. zero data).
    Skipped,
    /// Failed or inconclusive, but listed in the config's waiver list.
    Waived,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Skipped => "skipped",
            Verdict::Waived => "waived",
        }
    }

    /// Whether the verdict lets an experiment succeed.
    pub fn is_ok(self) -> bool {
        matches!(self, Verdict::Pass | Verdict::Skipped | Verdict::Waived)
    }
}

/// Acceptance rule of one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "kebab-case")]
pub enum Tolerance {
    /// `|measured - predicted| <= tol * |predicted|`.
    Relative(f64),
    /// `|measured - predicted| <= tol`.
    Absolute(f64),
    /// `measured <= tol`.
    AtMost(f64),
    /// `measured < tol`.
    Below(f64),
    /// `measured >= tol`.
    AtLeast(f64),
    /// `|measured - predicted| <= k` standard errors of the estimate.
    Sigma(f64),
    /// `measured` is finite.
    Finite,
}

impl Tolerance {
    fn judge(self, measured: f64, predicted: Option<f64>, std_err: Option<f64>) -> Verdict {
        let ok = match (self, predicted) {
            _ if !measured.is_finite() => false,
            (Tolerance::Relative(t), Some(p)) => (measured - p).abs() <= t * p.abs(),
            (Tolerance::Absolute(t), Some(p)) => (measured - p).abs() <= t,
            (Tolerance::Sigma(k), Some(p)) => match std_err {
                Some(se) => (measured - p).abs() <= k * se,
                None => false,
            },
            (Tolerance::AtMost(t), _) => measured <= t,
            (Tolerance::Below(t), _) => measured < t,
            (Tolerance::AtLeast(t), _) => measured >= t,
            (Tolerance::Finite, _) => true,
            _ => false,
        };
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    fn describe(self) -> String {
        match self {
            Tolerance::Relative(t) => format!("rel<={t}"),
            Tolerance::Absolute(t) => format!("abs<={t}"),
            Tolerance::AtMost(t) => format!("<={t}"),
            Tolerance::Below(t) => format!("<{t}"),
            Tolerance::AtLeast(t) => format!(">={t}"),
            Tolerance::Sigma(k) => format!("{k}sigma"),
            Tolerance::Finite => "finite".into(),
        }
    }
}

/// One measured quantity with its prediction and verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case: String,
    pub quantity: String,
    pub measured: f64,
    /// Half-width of the 95% normal-approximation confidence interval.
    pub ci: Option<f64>,
    /// Sample standard deviation behind `ci`.
    pub sample_std: Option<f64>,
    pub predicted: Option<f64>,
    pub provenance: Provenance,
    pub tolerance: Tolerance,
    pub verdict: Verdict,
}

impl ReportRow {
    pub fn new(case: impl Into<String>, quantity: impl Into<String>, measured: f64) -> Self {
        Self {
            case: case.into(),
            quantity: quantity.into(),
            measured,
            ci: None,
            sample_std: None,
            predicted: None,
            provenance: Provenance::Engineering,
            tolerance: Tolerance::Finite,
            verdict: Verdict::Pass,
        }
    }

    pub fn predicted(mut self, value: f64, provenance: Provenance) -> Self {
        self.predicted = Some(value);
        self.provenance = provenance;
        self
    }

    pub fn provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Attaches a Monte Carlo estimate's spread.
    pub fn estimate(mut self, e: &Estimate) -> Self {
        self.ci = Some(e.ci95());
        self.sample_std = Some(e.std);
        self
    }

    /// Sets the rule and computes the verdict.
    pub fn tolerance(mut self, tol: Tolerance) -> Self {
        self.tolerance = tol;
        let se = self.ci.map(|c| c / 1.96);
        self.verdict = tol.judge(self.measured, self.predicted, se);
        self
    }

    pub fn verdict(mut self, v: Verdict) -> Self {
        self.verdict = v;
        self
    }
}

/// Mean of independent samples with its sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }

    pub fn std_err(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }

    pub fn ci95(&self) -> f64 {
        1.96 * self.std_err()
    }
}

/// Measured quantities of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), rows: Vec::new(), notes: Vec::new() }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
        self.notes.extend(other.notes);
    }

    /// Marks non-passing rows whose case or `case/quantity` is listed as waived.
    pub fn apply_waivers(&mut self, waive: &[String]) {
        for row in &mut self.rows {
            let key = format!("{}/{}", row.case, row.quantity);
            if !row.verdict.is_ok() && waive.iter().any(|w| *w == row.case || *w == key) {
                row.verdict = Verdict::Waived;
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verdict.is_ok())
    }

    /// Rows that block success.
    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.verdict.is_ok())
    }

    pub fn find(&self, case: &str, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.case == case && r.quantity == quantity)
    }

    pub const CSV_HEADER: &'static str =
        "kind,case,quantity,measured,ci95,sample_std,predicted,provenance,tolerance,verdict";

    /// Flat table; floats in round-trip exponent form, so identical runs give
    /// identical bytes.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.17e},{},{},{},{},{},{}",
                self.kind,
                r.case,
                r.quantity,
                r.measured,
                opt(r.ci),
                opt(r.sample_std),
                opt(r.predicted),
                r.provenance.as_str(),
                r.tolerance.describe(),
                r.verdict.as_str()
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(format!("report serialization: {e}")))
    }

    /// Human-readable summary, one line per row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = write!(out, "{:<8} {} {} = {:.6e}", r.verdict.as_str(), r.case, r.quantity, r.measured);
            if let Some(c) = r.ci {
                let _ = write!(out, " ± {c:.2e}");
            }
            if let Some(p) = r.predicted {
                let _ = write!(out, " (predicted {p:.6e}, {})", r.provenance.as_str());
            }
            let _ = writeln!(out, " [{}]", r.tolerance.describe());
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// Output format of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

/// Writes `<dir>/<kind>.json` and/or `<dir>/<kind>.csv`.
pub fn emit_report(report: &Report, dir: &Path, format: ReportFormat) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        std::fs::write(dir.join(format!("{}.json", report.kind)), report.to_json()?)?;
    }
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        std::fs::write(dir.join(format!("{}.csv", report.kind)), report.to_csv())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerances() {
        let r = ReportRow::new("a", "slope", 1.3).predicted(4.0 / 3.0, Provenance::Formula);
        assert_eq!(r.clone().tolerance(Tolerance::Relative(0.1)).verdict, Verdict::Pass);
        assert_eq!(r.clone().tolerance(Tolerance::Relative(0.01)).verdict, Verdict::Fail);
        assert_eq!(r.tolerance(Tolerance::Absolute(0.05)).verdict, Verdict::Pass);
        let nan = ReportRow::new("a", "x", f64::NAN).tolerance(Tolerance::Finite);
        assert_eq!(nan.verdict, Verdict::Fail);
        assert_eq!(ReportRow::new("a", "x", 1.0).tolerance(Tolerance::Below(1.0)).verdict, Verdict::Fail);
        let e = Estimate { mean: 1.1, std: 1.0, n: 100 };
        let row = ReportRow::new("a", "m", e.mean).predicted(1.0, Provenance::Oracle).estimate(&e);
        assert_eq!(row.tolerance(Tolerance::Sigma(3.0)).verdict, Verdict::Pass);
    }

    #[test]
    fn waivers_and_pass() {
        let mut rep = Report::new("demo");
        rep.push(ReportRow::new("c1", "x", 3.0).tolerance(Tolerance::AtMost(2.0)));
        rep.push(ReportRow::new("c2", "y", 1.0).tolerance(Tolerance::AtMost(2.0)));
        assert!(!rep.passed());
        rep.apply_waivers(&["c1/x".to_string()]);
        assert!(rep.passed());
        assert_eq!(rep.rows[0].verdict, Verdict::Waived);
        assert_eq!(rep.rows[1].verdict, Verdict::Pass);
    }

    #[test]
    fn csv_is_stable() {
        let mut rep = Report::new("demo");
        rep.push(ReportRow::new("c", "x", 0.1 + 0.2).predicted(0.3, Provenance::Identity).tolerance(Tolerance::Absolute(1e-15)));
        let a = rep.to_csv();
        assert_eq!(a, rep.clone().to_csv());
        assert!(a.starts_with(Report::CSV_HEADER));
        assert!(a.contains("3.00000000000000044e-1"));
        let back: Report = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
    }
}
