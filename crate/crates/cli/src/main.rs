//! `she`: command-line driver for the kernel, the solvers and the experiments.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use she_core::geometry::Point;
use she_core::green::{green_images, green_wedge_eval, heat_kernel_free, KernelQuery};
use she_core::harness::acceptance::{run_criterion, CRITERIA};
use she_core::harness::presets::{preset, PRESETS};
use she_core::harness::{emit_report, parse_config, run_experiment, run_norms, write_config};
use she_core::harness::{ExperimentConfig, ExperimentKind, Report, ReportFormat};

#[derive(Parser)]
#[command(name = "she", version, about = "Stochastic heat equation on wedges and polygons")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration to use when --config is absent.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Directory for reports.
    #[arg(long, global = true, default_value = "reports")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured Monte Carlo path count.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Report format; both files are written when omitted.
    #[arg(long, global = true)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the wedge heat kernel at one point pair (canonical frame).
    GreenEval {
        /// Opening angle in units of pi.
        #[arg(long)]
        kappa_pi: f64,
        #[arg(long)]
        t: f64,
        /// Observation point `x1,x2`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x: Point,
        /// Source point `y1,y2`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        y: Point,
    },
    /// Solve one path and report final-time weighted norms.
    Solve,
    /// Weighted, Kondratiev and mixed norms of one solve.
    Norm,
    /// Near-vertex mass slopes across the weight exponent.
    SweepTheta,
    /// Mixed-weight higher-order estimate under mesh refinement.
    HigherOrder,
    /// Dilation equivariance and norm scaling.
    Dilate,
    /// Estimate ratios across final times.
    TIndep,
    /// Sup-norm and increment modulus across time refinements.
    PathCont,
    /// Polygon solve with vertex localization.
    Polygon,
    /// Run the acceptance suite (all criteria, or the listed ids).
    Verify { ids: Vec<usize> },
    /// List the built-in configurations.
    Presets {
        /// Also write each one to `<out>/<name>.toml`.
        #[arg(long)]
        write: bool,
    },
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `x1,x2`, got `{s}`"));
    }
    let a = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([a, b])
}

impl Common {
    fn report_format(&self) -> ReportFormat {
        match self.format {
            Some(Format::Csv) => ReportFormat::Csv,
            Some(Format::Json) => ReportFormat::Json,
            None => ReportFormat::Both,
        }
    }

    /// Loads `--config`, else `--preset`, else the command's default preset,
    /// then applies the overrides and checks the experiment kind.
    fn load(&self, default_preset: &str, kinds: &[ExperimentKind]) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => parse_config(path).with_context(|| format!("reading {}", path.display()))?,
            (None, name) => {
                let name = name.as_deref().unwrap_or(default_preset);
                preset(name).with_context(|| format!("unknown preset `{name}` (see `she presets`)"))?
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(paths) = self.paths {
            cfg.paths = paths;
        }
        if !kinds.contains(&cfg.kind) {
            bail!("configuration is a `{}` experiment; this command expects `{}`", cfg.kind.as_str(), kinds[0].as_str());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(report: &Report, common: &Common) -> anyhow::Result<()> {
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    emit_report(report, &common.out, common.report_format())?;
    print!("{}", report.to_text());
    info!("reports written to {}", common.out.display());
    Ok(())
}

fn run_config(common: &Common, cfg: &ExperimentConfig, norms: bool) -> anyhow::Result<bool> {
    std::fs::create_dir_all(&common.out)?;
    let name = if norms { "norm" } else { cfg.kind.as_str() };
    write_config(cfg, &Path::new(&common.out).join(format!("{name}.config.toml")))?;
    let report = if norms { run_norms(cfg)? } else { run_experiment(cfg)? };
    emit(&report, common)?;
    Ok(report.passed())
}

fn green_eval(kappa_pi: f64, t: f64, x: Point, y: Point) -> anyhow::Result<bool> {
    let kappa = kappa_pi * PI;
    let q = KernelQuery::new(kappa, t, x, y)?;
    let v = green_wedge_eval(&q)?;
    println!("kernel {:.17e}", v.value);
    println!("modes {}", v.modes);
    println!("free {:.17e}", heat_kernel_free(t, x, y)?);
    if let Ok(img) = green_images(kappa, t, x, y) {
        println!("images {img:.17e}");
    }
    Ok(true)
}

fn verify(common: &Common, ids: &[usize]) -> anyhow::Result<bool> {
    std::fs::create_dir_all(&common.out)?;
    let mut all = true;
    for c in CRITERIA.iter().filter(|c| ids.is_empty() || ids.contains(&c.id)) {
        let report = run_criterion(c)?;
        emit_report(&report, &common.out, common.report_format())?;
        let ok = report.passed();
        println!("{} criterion {:>2} {}", if ok { "PASS" } else { "FAIL" }, c.id, c.name);
        for row in report.failures() {
            println!("       {} {} = {:e} [{}]", row.case, row.quantity, row.measured, row.verdict.as_str());
        }
        all &= ok;
    }
    Ok(all)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let c = &cli.common;
    use ExperimentKind as K;
    match cli.command {
        Command::GreenEval { kappa_pi, t, x, y } => green_eval(kappa_pi, t, x, y),
        Command::Solve => run_config(c, &c.load("solve", &[K::Solve])?, false),
        Command::Norm => run_config(c, &c.load("solve", &[K::Solve])?, true),
        Command::SweepTheta => run_config(c, &c.load("theta-sweep-3pi2", &[K::ThetaSweep])?, false),
        Command::HigherOrder => run_config(c, &c.load("higher-order-m0", &[K::HigherOrder])?, false),
        Command::Dilate => run_config(c, &c.load("dilation", &[K::Dilation])?, false),
        Command::TIndep => run_config(c, &c.load("t-independence", &[K::TIndependence])?, false),
        Command::PathCont => run_config(c, &c.load("path-continuity", &[K::PathContinuity])?, false),
        Command::Polygon => run_config(c, &c.load("polygon-lshape", &[K::PolygonLocalization])?, false),
        Command::Verify { ids } => verify(c, &ids),
        Command::Presets { write } => {
            if write {
                std::fs::create_dir_all(&c.out)?;
            }
            for name in PRESETS {
                let cfg = preset(name).context("preset table is inconsistent")?;
                println!("{name:<20} {}", cfg.kind.as_str());
                if write {
                    write_config(&cfg, &c.out.join(format!("{name}.toml")))?;
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
