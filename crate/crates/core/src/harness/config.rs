use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::critical_range;
use crate::error::{Error, Result};
use crate::fields::{Coefficient, NoiseSpec};
use crate::geometry::{build_polar_mesh, build_polygon_mesh, AngularDomain, Mesh, Point, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    ThetaSweep,
    HigherOrder,
    Dilation,
    TIndependence,
    PathContinuity,
    PolygonLocalization,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::ThetaSweep => "theta-sweep",
            ExperimentKind::HigherOrder => "higher-order",
            ExperimentKind::Dilation => "dilation",
            ExperimentKind::TIndependence => "t-independence",
            ExperimentKind::PathContinuity => "path-continuity",
            ExperimentKind::PolygonLocalization => "polygon-localization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Opening angle in units of `pi`.
    Wedge {
        opening_pi: f64,
        #[serde(default)]
        vertex: Point,
        #[serde(default)]
        start_angle: f64,
    },
    Polygon {
        vertices: Vec<Point>,
        radius: f64,
    },
}

impl DomainSpec {
    pub fn wedge(opening_pi: f64) -> Self {
        DomainSpec::Wedge { opening_pi, vertex: [0.0, 0.0], start_angle: 0.0 }
    }

    pub fn angular_domain(&self) -> Result<AngularDomain> {
        match self {
            DomainSpec::Wedge { opening_pi, vertex, start_angle } => {
                AngularDomain::new(*vertex, *start_angle, opening_pi * PI)
            }
            DomainSpec::Polygon { .. } => Err(Error::config("experiment needs a wedge domain")),
        }
    }

    pub fn polygon(&self) -> Result<Polygon> {
        match self {
            DomainSpec::Polygon { vertices, radius } => Polygon::new(vertices.clone(), *radius),
            DomainSpec::Wedge { .. } => Err(Error::config("experiment needs a polygon domain")),
        }
    }

    /// Interior angles at the vertices (one entry for a wedge).
    pub fn angles(&self) -> Result<Vec<f64>> {
        match self {
            DomainSpec::Wedge { opening_pi, .. } => Ok(vec![opening_pi * PI]),
            DomainSpec::Polygon { .. } => Ok(self.polygon()?.angles().to_vec()),
        }
    }
}

fn two() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(default = "two")]
    pub p: f64,
    pub theta: Vec<f64>,
    /// Mixed-weight exponents; each must lie in `(1, p+1)`.
    #[serde(default)]
    pub big_theta: Vec<f64>,
    /// Exponents evaluated only as divergence probes, exempt from the range check.
    #[serde(default)]
    pub probe_big_theta: Vec<f64>,
    #[serde(default)]
    pub m: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSpec {
    pub n_radial: usize,
    pub n_angular: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Polygon meshes.
    pub cells_per_axis: usize,
    pub grading: f64,
    /// Number of resolutions; level `l` doubles every cell count `l` times.
    pub levels: usize,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self {
            n_radial: 128,
            n_angular: 128,
            r_min: 1e-3,
            r_max: 8.0,
            cells_per_axis: 64,
            grading: 1.0,
            levels: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    pub final_time: f64,
    pub steps: usize,
    /// Horizons of the T-independence study (multiples of the step).
    pub final_times: Vec<f64>,
    /// Number of time resolutions; level `l` uses `steps * 2^l` steps.
    pub levels: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        Self { final_time: 1.0, steps: 256, final_times: Vec::new(), levels: 1 }
    }
}

/// Smooth data profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    /// `a exp(1 - 1/(1 - |x-c|²/R²))` on the disk `|x-c| < R`.
    Bump {
        center: Point,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Radial bump on the annulus `inner < |x-c| < outer`.
    Annulus {
        #[serde(default)]
        center: Point,
        inner: f64,
        outer: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
}

fn bump_profile(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

impl Shape {
    pub fn eval(&self, x: Point) -> f64 {
        match *self {
            Shape::Bump { center, radius, amplitude } => {
                let d = (x[0] - center[0]).hypot(x[1] - center[1]) / radius;
                amplitude * bump_profile(d)
            }
            Shape::Annulus { center, inner, outer, amplitude } => {
                let r = (x[0] - center[0]).hypot(x[1] - center[1]);
                amplitude * bump_profile((2.0 * r - inner - outer) / (outer - inner))
            }
            Shape::Constant { value } => value,
        }
    }

    /// Radius of a disk around the origin containing the support.
    pub fn support_radius(&self) -> f64 {
        match *self {
            Shape::Bump { center, radius, .. } => center[0].hypot(center[1]) + radius,
            Shape::Annulus { center, outer, .. } => center[0].hypot(center[1]) + outer,
            Shape::Constant { .. } => f64::INFINITY,
        }
    }

    pub fn coefficient(&self) -> Coefficient {
        let s = self.clone();
        Coefficient::closed(move |_t, x| s.eval(x))
    }

    fn validate(&self, path: &str) -> Result<()> {
        let bad = |field: &str, msg: &str| Error::Parse { path: format!("{path}.{field}"), message: msg.into() };
        match *self {
            Shape::Bump { radius, .. } if !(radius > 0.0) => Err(bad("radius", "must be positive")),
            Shape::Annulus { inner, outer, .. } if !(inner >= 0.0 && outer > inner) => {
                Err(bad("outer", "annulus needs 0 <= inner < outer"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f0: Option<Shape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<Shape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f2: Option<Shape>,
    /// One shape per noise mode.
    pub noise: Vec<Shape>,
}

impl ProblemSpec {
    pub fn is_zero(&self) -> bool {
        self.f0.is_none() && self.f1.is_none() && self.f2.is_none() && self.noise.is_empty()
    }

    pub fn has_deterministic(&self) -> bool {
        self.f0.is_some() || self.f1.is_some() || self.f2.is_some()
    }

    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec::new(self.noise.iter().map(Shape::coefficient).collect(), seed)
    }

    pub fn support_radius(&self) -> f64 {
        [&self.f0, &self.f1, &self.f2]
            .into_iter()
            .flatten()
            .chain(&self.noise)
            .map(Shape::support_radius)
            .fold(0.0, f64::max)
    }
}

fn default_paths() -> usize {
    200
}

/// Everything an experiment run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Cutoffs `eps` of the annular masses (theta sweep).
    #[serde(default)]
    pub cutoffs: Vec<f64>,
    /// Cases (`case` or `case/quantity`) whose failures do not count.
    #[serde(default)]
    pub waive: Vec<String>,
    pub domain: DomainSpec,
    pub weights: WeightSpec,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub problem: ProblemSpec,
}

fn parse_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| parse_err("<document>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            parse_err(if path.is_empty() || path == "." { "<root>".into() } else { path }, e.into_inner().message())
        })?;
        for w in cfg.validate()? {
            log::warn!("{w}");
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config serialization: {e}")))
    }

    /// Checks invariants; returns warnings that do not stop a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let w = &self.weights;
        if !(w.p >= 2.0 && w.p.is_finite()) {
            return Err(parse_err("weights.p", format!("p must be >= 2, got {}", w.p)));
        }
        if w.theta.is_empty() {
            return Err(parse_err("weights.theta", "sweep range must be nonempty"));
        }
        for (i, &b) in w.big_theta.iter().enumerate() {
            if !(b > 1.0 && b < w.p + 1.0) {
                return Err(parse_err(
                    format!("weights.big_theta[{i}]"),
                    format!(
                        "Theta = {b} violates the mixed-weight constraint 1 < Theta < p+1 = {}; \
                         use probe_big_theta for divergence probes",
                        w.p + 1.0
                    ),
                ));
            }
        }
        match &self.domain {
            DomainSpec::Wedge { opening_pi, .. } => {
                if !(*opening_pi > 0.0 && *opening_pi < 2.0) {
                    return Err(parse_err("domain.opening_pi", "opening must lie in (0, 2) (units of pi)"));
                }
            }
            DomainSpec::Polygon { .. } => {
                self.domain.polygon().map_err(|e| parse_err("domain", e.to_string()))?;
            }
        }
        let mesh = &self.mesh;
        if !(mesh.r_min > 0.0 && mesh.r_max > mesh.r_min) {
            return Err(parse_err("mesh.r_max", "need 0 < r_min < r_max"));
        }
        if mesh.levels == 0 || self.time.levels == 0 {
            return Err(parse_err("mesh.levels", "at least one resolution level is required"));
        }
        if !(self.time.final_time > 0.0) || self.time.steps == 0 {
            return Err(parse_err("time", "need final_time > 0 and steps >= 1"));
        }
        let shapes = [("f0", &self.problem.f0), ("f1", &self.problem.f1), ("f2", &self.problem.f2)];
        for (name, s) in shapes {
            if let Some(s) = s {
                s.validate(&format!("problem.{name}"))?;
            }
        }
        for (k, s) in self.problem.noise.iter().enumerate() {
            s.validate(&format!("problem.noise[{k}]"))?;
        }
        match self.kind {
            ExperimentKind::ThetaSweep => {
                if self.cutoffs.len() < 2 {
                    return Err(parse_err("cutoffs", "a slope fit needs at least 2 cutoffs"));
                }
                if let Some(i) = self.cutoffs.iter().position(|&e| !(e > 0.0)) {
                    return Err(parse_err(format!("cutoffs[{i}]"), "cutoffs must be positive"));
                }
                if self.problem.noise.is_empty() {
                    return Err(parse_err("problem.noise", "the theta sweep needs vertex-active noise"));
                }
            }
            ExperimentKind::HigherOrder => {
                if w.big_theta.is_empty() && w.probe_big_theta.is_empty() {
                    return Err(parse_err("weights.big_theta", "sweep range must be nonempty"));
                }
                if w.m.is_empty() {
                    return Err(parse_err("weights.m", "sweep range must be nonempty"));
                }
                if let Some(i) = w.m.iter().position(|&m| m > 2) {
                    return Err(parse_err(format!("weights.m[{i}]"), "m <= 2 is supported"));
                }
                if mesh.levels < 2 {
                    return Err(parse_err("mesh.levels", "a refinement study needs at least 2 levels"));
                }
            }
            ExperimentKind::PathContinuity => {
                if self.time.levels < 2 {
                    return Err(parse_err("time.levels", "a refinement study needs at least 2 levels"));
                }
            }
            ExperimentKind::TIndependence => {
                if self.time.final_times.is_empty() {
                    return Err(parse_err("time.final_times", "sweep range must be nonempty"));
                }
            }
            ExperimentKind::PolygonLocalization => {
                if !matches!(self.domain, DomainSpec::Polygon { .. }) {
                    return Err(parse_err("domain.type", "polygon localization needs a polygon"));
                }
            }
            ExperimentKind::Solve | ExperimentKind::Dilation => {}
        }
        let angles = self.domain.angles()?;
        for &theta in &w.theta {
            for &kappa in &angles {
                let (lo, hi) = critical_range(w.p, kappa)?;
                if !(theta > lo && theta < hi) {
                    warnings.push(format!(
                        "theta = {theta} lies outside the admissible range ({lo:.4}, {hi:.4}) for opening {kappa:.4}; \
                         the solve proceeds but weighted norms may diverge"
                    ));
                }
            }
        }
        Ok(warnings)
    }

    pub fn log_warnings(&self) -> Result<()> {
        for w in self.validate()? {
            log::warn!("{w}");
        }
        Ok(())
    }

    /// Polar mesh at refinement level `level`.
    pub fn polar_mesh(&self, level: usize) -> Result<Arc<Mesh>> {
        let w = self.domain.angular_domain()?;
        let m = &self.mesh;
        Ok(Arc::new(build_polar_mesh(&w, m.r_min, m.r_max, m.n_radial << level, m.n_angular << level)?))
    }

    pub fn polygon_mesh(&self, level: usize) -> Result<Arc<Mesh>> {
        let poly = self.domain.polygon()?;
        Ok(Arc::new(build_polygon_mesh(&poly, self.mesh.cells_per_axis << level, self.mesh.grading)?))
    }
}

/// Reads and validates a TOML experiment config.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| parse_err(path.display().to_string(), format!("cannot read config: {e}")))?;
    ExperimentConfig::from_toml(&text)
}

/// Writes a config as TOML.
pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "solve"
seed = 11

[domain]
type = "wedge"
opening_pi = 1.5

[weights]
p = 2.0
theta = [2.0]

[mesh]
n_radial = 32
n_angular = 16

[time]
final_time = 0.5
steps = 64
"#;

    #[test]
    fn minimal_round_trip() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.mesh.n_radial, 32);
        assert_eq!(cfg.mesh.r_max, MeshSpec::default().r_max);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unknown_key_reports_path() {
        let bad = MINIMAL.replace("n_angular = 16", "n_angular = 16\nn_angualr = 3");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Parse { path, message }) => {
                assert!(path.contains("mesh"), "{path}");
                assert!(message.contains("n_angualr"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        let bad = MINIMAL.replace("opening_pi = 1.5", "opening_pi = \"wide\"");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Parse { path, .. }) => assert!(path.contains("domain"), "{path}"),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn big_theta_outside_range_is_rejected() {
        let text = MINIMAL.replace("theta = [2.0]", "theta = [2.0]\nbig_theta = [0.5]");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("weights.big_theta[0]") && msg.contains("1 < Theta < p+1"), "{msg}");
        let ok = MINIMAL.replace("theta = [2.0]", "theta = [2.0]\nprobe_big_theta = [0.5]");
        assert!(ExperimentConfig::from_toml(&ok).is_ok());
    }

    #[test]
    fn theta_outside_critical_range_warns() {
        let text = MINIMAL.replace("theta = [2.0]", "theta = [0.5, 2.0]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let w = cfg.validate().unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("theta = 0.5"));
    }

    #[test]
    fn slope_fits_need_two_levels() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.kind = ExperimentKind::ThetaSweep;
        cfg.problem.noise.push(Shape::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 1.0, amplitude: 1.0 });
        cfg.cutoffs = vec![0.125];
        assert!(matches!(cfg.validate(), Err(Error::Parse { ref path, .. }) if path == "cutoffs"));
        cfg.cutoffs.push(0.0625);
        assert!(cfg.validate().is_ok());
        cfg.weights.theta.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shapes() {
        let b = Shape::Bump { center: [1.0, 0.0], radius: 0.5, amplitude: 2.0 };
        assert!((b.eval([1.0, 0.0]) - 2.0).abs() < 1e-15);
        assert_eq!(b.eval([1.6, 0.0]), 0.0);
        let a = Shape::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 1.0, amplitude: 1.0 };
        assert!((a.eval([0.0, 0.75]) - 1.0).abs() < 1e-15);
        assert_eq!(a.eval([0.4, 0.0]), 0.0);
        assert_eq!(a.support_radius(), 1.0);
    }
}
