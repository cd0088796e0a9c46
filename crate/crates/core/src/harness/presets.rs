//! Calibrated desk-scale configurations used by the acceptance suite.

use std::f64::consts::PI;

use super::config::{DomainSpec, ExperimentConfig, ExperimentKind, MeshSpec, ProblemSpec, Shape, TimeSpec, WeightSpec};

fn weights(theta: Vec<f64>) -> WeightSpec {
    WeightSpec { p: 2.0, theta, big_theta: Vec::new(), probe_big_theta: Vec::new(), m: Vec::new() }
}

fn bump_polar(r: f64, phi: f64, radius: f64) -> Shape {
    Shape::Bump { center: [r * phi.cos(), r * phi.sin()], radius, amplitude: 1.0 }
}

fn base(kind: ExperimentKind, domain: DomainSpec, theta: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        seed: 20240607,
        paths: 200,
        cutoffs: Vec::new(),
        waive: Vec::new(),
        domain,
        weights: weights(theta),
        mesh: MeshSpec::default(),
        time: TimeSpec::default(),
        problem: ProblemSpec::default(),
    }
}

fn l_shape() -> DomainSpec {
    DomainSpec::Polygon {
        vertices: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]],
        radius: 0.2,
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 10] = [
    "theta-sweep-3pi2",
    "theta-sweep-pi2",
    "higher-order-m0",
    "higher-order-m1",
    "dilation",
    "t-independence",
    "path-continuity",
    "polygon-lshape",
    "polygon-square",
    "solve",
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "theta-sweep-3pi2" | "theta-sweep-pi2" => {
            let opening = if name.ends_with("3pi2") { 1.5 } else { 0.5 };
            let critical = 2.0 * (1.0 - 1.0 / opening);
            let theta = if opening > 1.0 { vec![2.0, critical] } else { vec![2.0] };
            let mut c = base(ExperimentKind::ThetaSweep, DomainSpec::wedge(opening), theta);
            c.cutoffs = (3..=7).map(|j| 2f64.powi(-j)).collect();
            // faces at 2^{k/8}, so each annulus [eps, 2 eps] is 8 whole cells
            c.mesh = MeshSpec { n_radial: 136, n_angular: 32, r_min: 2f64.powi(-14), r_max: 8.0, ..MeshSpec::default() };
            c.problem.noise = vec![Shape::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 1.0, amplitude: 1.0 }];
            c
        }
        "higher-order-m0" | "higher-order-m1" => {
            let m1 = name.ends_with("m1");
            let mut c = base(ExperimentKind::HigherOrder, DomainSpec::wedge(1.5), vec![2.0]);
            c.weights.big_theta = vec![1.1, 1.5, 2.0, 2.9];
            c.weights.m = vec![usize::from(m1)];
            c.mesh = MeshSpec { n_radial: 64, n_angular: 32, r_min: 2f64.powi(-10), r_max: 16.0, levels: 3, ..MeshSpec::default() };
            c.problem.noise = if m1 {
                vec![bump_polar(1.0, 0.75 * PI, 0.4)]
            } else {
                c.weights.probe_big_theta = vec![0.5];
                vec![Shape::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 1.5, amplitude: 1.0 }]
            };
            c
        }
        "dilation" => {
            let mut c = base(
                ExperimentKind::Dilation,
                DomainSpec::Wedge { opening_pi: 1.5, vertex: [0.3, -0.2], start_angle: 0.4 },
                vec![1.0, 2.0, 3.0],
            );
            c.mesh = MeshSpec { n_radial: 32, n_angular: 24, r_min: 1e-3, r_max: 6.0, ..MeshSpec::default() };
            c.time = TimeSpec { final_time: 0.4, steps: 12, ..TimeSpec::default() };
            let a = 0.4 + 0.75 * PI;
            let at = |r: f64, da: f64| [0.3 + r * (a + da).cos(), -0.2 + r * (a + da).sin()];
            c.problem.f0 = Some(Shape::Annulus { center: [0.3, -0.2], inner: 0.6, outer: 1.6, amplitude: 1.0 });
            c.problem.f1 = Some(Shape::Bump { center: at(1.2, 0.5), radius: 0.7, amplitude: 1.0 });
            c.problem.noise = vec![Shape::Bump { center: at(1.0, -0.6), radius: 0.5, amplitude: 1.0 }];
            c
        }
        "t-independence" => {
            let mut c = base(ExperimentKind::TIndependence, DomainSpec::wedge(0.5), vec![2.0]);
            c.time = TimeSpec { final_time: 8.0, steps: 64, final_times: vec![1.0, 2.0, 4.0, 8.0], levels: 1 };
            c.mesh = MeshSpec { n_radial: 120, n_angular: 24, r_min: 2f64.powi(-10), r_max: 32.0, ..MeshSpec::default() };
            c.problem.noise = vec![bump_polar(1.0, 0.25 * PI, 0.5)];
            c.problem.f1 = Some(bump_polar(1.0, 0.25 * PI, 0.5));
            c
        }
        "path-continuity" => {
            let mut c = base(ExperimentKind::PathContinuity, DomainSpec::wedge(1.5), vec![2.0]);
            c.time = TimeSpec { final_time: 1.0, steps: 64, final_times: Vec::new(), levels: 3 };
            c.mesh = MeshSpec { n_radial: 64, n_angular: 24, r_min: 2f64.powi(-8), r_max: 16.0, ..MeshSpec::default() };
            c.problem.noise = vec![bump_polar(1.0, 0.75 * PI, 0.5)];
            c.problem.f0 = Some(bump_polar(1.0, 0.75 * PI, 0.5));
            c
        }
        "polygon-lshape" | "polygon-square" => {
            let square = name.ends_with("square");
            let domain = if square {
                DomainSpec::Polygon { vertices: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]], radius: 0.3 }
            } else {
                l_shape()
            };
            let mut c = base(ExperimentKind::PolygonLocalization, domain, vec![2.0]);
            c.seed = 7;
            c.paths = 16;
            c.time = TimeSpec { final_time: 0.25, steps: 256, ..TimeSpec::default() };
            c.mesh = MeshSpec {
                n_radial: 128,
                n_angular: 96,
                r_min: 1e-4,
                r_max: 6.0,
                cells_per_axis: 32,
                grading: 2.0,
                levels: 2,
            };
            let center = if square { [-0.3, -0.3] } else { [-0.35, -0.35] };
            c.problem.noise = vec![Shape::Bump { center, radius: 0.3, amplitude: 1.0 }];
            c
        }
        "solve" => {
            let mut c = base(ExperimentKind::Solve, DomainSpec::wedge(1.5), vec![2.0]);
            c.mesh = MeshSpec { n_radial: 64, n_angular: 48, r_min: 1e-3, r_max: 8.0, ..MeshSpec::default() };
            c.problem.noise = vec![bump_polar(1.0, 0.75 * PI, 0.5)];
            c
        }
        _ => return None,
    };
    Some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(preset("nope").is_none());
    }
}
