//! Solvers for `du = (Δu + f⁰ + f^i_{x^i}) dt + g^k dw^k` with zero initial
//! and boundary data.
//!
//! On wedges the main solver propagates with the exact Dirichlet heat kernel:
//! node values are expanded in the angular sine basis (a discrete sine
//! transform on the cell-centered angle grid, which is exact for the
//! interpolant) and each angular mode is advanced by a radial integral
//! operator assembled once per step size. The finite-difference solver is an
//! independent reference on wedges and the production solver on polygons.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{pairwise_sum, Coefficient, GridFunction, NoiseSpec, SpaceTimeField, TimeGrid};
use crate::geometry::{
    partition_of_unity, AngularDomain, Domain, Layout, Mesh, PartitionOfUnity, Point, PolarLayout,
    TensorLayout, Arm,
};
use crate::specialfn::scaled_i;

/// Kernel contributions with `exp(-(r-r')²/4t) e^{-z} I_ν(z)` below this are dropped.
pub const KERNEL_CUTOFF: f64 = 1e-20;

/// Radius beyond which the free heat kernel started inside `B_support` has
/// mass below `tol` at every time up to `final_time`.
pub fn truncation_radius(support: f64, final_time: f64, tol: f64) -> f64 {
    support + (4.0 * final_time * (1.0 / tol).ln()).sqrt()
}

/// Forcing, noise, mesh and time grid of one problem.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub mesh: Arc<Mesh>,
    pub time: TimeGrid,
    pub f0: Option<Coefficient>,
    /// Divergence-form terms `f¹, f²` in Cartesian components.
    pub f_div: [Option<Coefficient>; 2],
    pub noise: NoiseSpec,
}

impl ProblemData {
    pub fn new(mesh: Arc<Mesh>, time: TimeGrid) -> Self {
        Self { mesh, time, f0: None, f_div: [None, None], noise: NoiseSpec::none() }
    }

    pub fn with_f0(mut self, f0: Coefficient) -> Self {
        self.f0 = Some(f0);
        self
    }

    /// Sets `f^i` for `i ∈ {0, 1}` (the x- and y-components).
    pub fn with_f_div(mut self, i: usize, f: Coefficient) -> Self {
        self.f_div[i] = Some(f);
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn domain(&self) -> &Domain {
        self.mesh.domain()
    }

    pub fn final_time(&self) -> f64 {
        self.time.final_time()
    }

    fn has_div(&self) -> bool {
        self.f_div.iter().any(Option::is_some)
    }

    fn wedge(&self) -> Result<(AngularDomain, PolarLayout)> {
        match (self.mesh.domain(), self.mesh.layout()) {
            (Domain::Wedge(w), Layout::Polar(p)) => Ok((*w, p.clone())),
            _ => Err(Error::precondition("a wedge problem on a polar mesh is required")),
        }
    }
}

/// Run statistics of one solve.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub solver: String,
    pub nodes: usize,
    pub steps: usize,
    /// Angular modes carried by the kernel propagator.
    pub modes: usize,
    /// Highest mode with a kernel contribution above the cutoff.
    pub max_active_mode: usize,
    pub kernel_cutoff: f64,
    /// Radial quadrature nodes used while assembling the propagator.
    pub quadrature_nodes: usize,
    pub build_seconds: f64,
    pub wall_seconds: f64,
    /// `max |u(t_n)|` per step.
    pub step_sup: Vec<f64>,
    /// `max |u(t_n)|` on the outermost radial ring, a truncation check.
    pub outer_ring: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    fn record(&mut self, mesh: &Mesh, u: &[f64]) {
        self.step_sup.push(u.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        if let Some(p) = mesh.polar() {
            let ring = &u[(p.n_radial - 1) * p.n_angular..];
            self.outer_ring.push(ring.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
        }
    }
}

/// Solution history and run statistics.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub u: SpaceTimeField,
    pub diagnostics: Diagnostics,
}

/// A solver that can be run path by path.
pub trait PathSolver {
    fn data(&self) -> &ProblemData;

    /// Runs noise path `path`, calling `observer(n, t_n, u_n)` for `n = 1..=N`.
    fn run_path(&self, path: u64, observer: &mut dyn FnMut(usize, f64, &[f64])) -> Result<Diagnostics>;

    /// Runs one path and keeps every time level.
    fn collect(&self, path: u64) -> Result<SolveOutput> {
        let data = self.data();
        let mesh = data.mesh.clone();
        let mut slices = vec![GridFunction::zeros(mesh.clone(), 1)];
        let diagnostics = self.run_path(path, &mut |_, _, u| {
            slices.push(GridFunction::from_values(mesh.clone(), 1, u.to_vec()).expect("sized by solver"));
        })?;
        let u = SpaceTimeField::new(data.time.clone(), slices)?;
        Ok(SolveOutput { u, diagnostics })
    }
}

fn sample_checked(c: &Coefficient, mesh: &Mesh, t: f64, out: &mut [f64], what: &str) -> Result<()> {
    c.sample(mesh, t, out)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!("{what} is not finite at t = {t}")));
    }
    Ok(())
}

/// Adds `Σ_k g^k(t) dw^k` to `u`.
fn add_noise(data: &ProblemData, path: u64, m: usize, t: f64, dt: f64, buf: &mut [f64], u: &mut [f64]) -> Result<()> {
    let k = data.noise.modes();
    if k == 0 {
        return Ok(());
    }
    let mut dw = vec![0.0; k];
    data.noise.increments(path, m, dt, &mut dw);
    for (g, &w) in data.noise.coefficients().iter().zip(&dw) {
        sample_checked(g, &data.mesh, t, buf, "noise coefficient")?;
        for (ui, gi) in u.iter_mut().zip(buf.iter()) {
            *ui += gi * w;
        }
    }
    Ok(())
}

fn dt_key(dt: f64) -> u64 {
    // steps equal to ~1e-12 relative share one operator
    (dt * 1e12).round() as u64
}

// ---------------------------------------------------------------------------
// Angular transforms

/// Sine/cosine tables `sin(ν_n φ_l)`, `ν_n = nπ/κ₀`, for `n = 1..=N_φ`.
#[derive(Debug, Clone)]
struct AngularBasis {
    n: usize,
    opening: f64,
    step: f64,
    sin: Vec<f64>,
    cos: Vec<f64>,
}

impl AngularBasis {
    fn new(p: &PolarLayout) -> Self {
        let n = p.n_angular;
        let mut sin = Vec::with_capacity(n * n);
        let mut cos = Vec::with_capacity(n * n);
        for mode in 1..=n {
            let nu = mode as f64 * PI / p.opening;
            for &phi in &p.angles {
                sin.push((nu * phi).sin());
                cos.push((nu * phi).cos());
            }
        }
        Self { n, opening: p.opening, step: p.angle_step, sin, cos }
    }

    fn nu(&self, mode_index: usize) -> f64 {
        (mode_index + 1) as f64 * PI / self.opening
    }

    /// Exact inverse of synthesis: `out[n * nr + i]` from node values.
    fn analyze(&self, u: &[f64], nr: usize, out: &mut [f64]) {
        let n = self.n;
        for m in 0..n {
            let scale = if m + 1 == n { 1.0 / n as f64 } else { 2.0 / n as f64 };
            let row = &self.sin[m * n..(m + 1) * n];
            for i in 0..nr {
                let ring = &u[i * n..(i + 1) * n];
                out[m * nr + i] = scale * row.iter().zip(ring).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    /// Plain quadrature `h_φ Σ_l tab(ν_n φ_l) f(r_i, φ_l)`.
    fn project(&self, tab: &[f64], f: &[f64], nr: usize, out: &mut [f64]) {
        let n = self.n;
        for m in 0..n {
            let row = &tab[m * n..(m + 1) * n];
            for i in 0..nr {
                let ring = &f[i * n..(i + 1) * n];
                out[m * nr + i] = self.step * row.iter().zip(ring).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }

    fn synthesize(&self, coeff: &[f64], nr: usize, out: &mut [f64]) {
        let n = self.n;
        out.fill(0.0);
        for m in 0..n {
            let row = &self.sin[m * n..(m + 1) * n];
            for i in 0..nr {
                let c = coeff[m * nr + i];
                if c == 0.0 {
                    continue;
                }
                for (o, s) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += c * s;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Radial kernel operators

pub(crate) const GL_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
pub(crate) const GL_W: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Kernel support in units of `sqrt(t)`: `exp(-d²/4t) < 1e-20` beyond it.
const SUPPORT_WIDTHS: f64 = 13.6;
/// Longest quadrature piece in units of `sqrt(t)`.
const PIECE_WIDTHS: f64 = 0.75;

#[derive(Clone, Copy)]
enum RadialKind {
    /// `G_n(t, r, r')`.
    Value,
    /// `∂_{r'} G_n` and `(ν_n / r') G_n`.
    Gradient,
}

/// Per-mode radial matrices, `mats[n][i][j]` flattened.
#[derive(Debug, Clone)]
struct RadialOps {
    mats: Vec<f64>,
    /// Second family for the gradient kind.
    aux: Vec<f64>,
    max_mode: usize,
    nodes: usize,
}

/// Interpolation points per cell: Lagrange on nodes `k-3..=k+4` of cell `k`.
const STENCIL: usize = 8;
const STENCIL_SHIFT: isize = STENCIL as isize / 2 - 1;

/// Lagrange weights at local coordinate `t ∈ [0,1]` of a cell.
fn lagrange_weights(t: f64) -> [f64; STENCIL] {
    let mut w = [1.0; STENCIL];
    for (a, wa) in w.iter_mut().enumerate() {
        let xa = (a as isize - STENCIL_SHIFT) as f64;
        for b in 0..STENCIL {
            if b != a {
                let xb = (b as isize - STENCIL_SHIFT) as f64;
                *wa *= (t - xb) / (xa - xb);
            }
        }
    }
    w
}

/// Node and sign for a stencil index with odd reflection at both ends.
fn reflect(m: isize, nr: usize) -> (usize, f64) {
    let n = nr as isize;
    if m < 0 {
        ((-1 - m) as usize, -1.0)
    } else if m >= n {
        ((2 * n - 1 - m) as usize, -1.0)
    } else {
        (m as usize, 1.0)
    }
}

impl RadialOps {
    /// Assembles `∫ K_n(t, r_i, r') L_j(r') r' dr'` over `[r_min, r_max]`, where
    /// `L_j` is the 8-point Lagrange basis in `ln r` with odd ghosts.
    fn build(p: &PolarLayout, basis: &AngularBasis, t: f64, kind: RadialKind) -> Self {
        let nr = p.n_radial;
        let modes = basis.n;
        let h = p.log_step;
        let s0 = p.radii[0].ln();
        let s_lo = p.r_min.ln();
        let s_hi = p.r_max.ln();
        let sq = t.sqrt();
        let support = SUPPORT_WIDTHS * sq;
        let mut mats = vec![0.0; modes * nr * nr];
        let mut aux = match kind {
            RadialKind::Value => Vec::new(),
            RadialKind::Gradient => vec![0.0; modes * nr * nr],
        };
        let mut max_mode = 0;
        let mut nodes = 0;
        let mut svals = vec![0.0; modes + 1];
        for i in 0..nr {
            let r = p.radii[i];
            for k in -1..nr as isize {
                let a = (s0 + k as f64 * h).max(s_lo);
                let b = (s0 + (k + 1) as f64 * h).min(s_hi);
                if b <= a {
                    continue;
                }
                let (ra, rb) = (a.exp(), b.exp());
                let dist = if r < ra { ra - r } else if r > rb { r - rb } else { 0.0 };
                if dist > support {
                    continue;
                }
                let pieces = ((rb - ra) / (PIECE_WIDTHS * sq)).ceil().max(1.0) as usize;
                let width = (b - a) / pieces as f64;
                let stencil: [(usize, f64); STENCIL] =
                    std::array::from_fn(|a| reflect(k + a as isize - STENCIL_SHIFT, nr));
                for piece in 0..pieces {
                    let c = a + (piece as f64 + 0.5) * width;
                    for (x, w) in GL_X.iter().zip(GL_W) {
                        let s = c + 0.5 * width * x;
                        let rp = s.exp();
                        let gauss = (-(r - rp) * (r - rp) / (4.0 * t)).exp();
                        if gauss < KERNEL_CUTOFF {
                            continue;
                        }
                        nodes += 1;
                        let z = r * rp / (2.0 * t);
                        let weight = 0.5 * width * w * rp * rp * gauss / (2.0 * t);
                        let ell = lagrange_weights((s - s0) / h - k as f64);
                        let mut last = 0;
                        match kind {
                            RadialKind::Value => {
                                for n in 0..modes {
                                    let sv = scaled_i(basis.nu(n), z);
                                    if gauss * sv < KERNEL_CUTOFF {
                                        break;
                                    }
                                    last = n + 1;
                                    let base = (n * nr + i) * nr;
                                    for (&(j, sign), l) in stencil.iter().zip(ell) {
                                        mats[base + j] += sign * l * weight * sv;
                                    }
                                }
                            }
                            RadialKind::Gradient => {
                                svals[0] = scaled_i(basis.nu(0), z);
                                for n in 0..modes {
                                    let nu = basis.nu(n);
                                    let sv = svals[n];
                                    if gauss * sv < KERNEL_CUTOFF {
                                        break;
                                    }
                                    let sv1 = scaled_i(nu + 1.0, z);
                                    if n + 1 < modes {
                                        svals[n + 1] = scaled_i(basis.nu(n + 1), z);
                                    }
                                    last = n + 1;
                                    let dr = r / (2.0 * t) * sv1 + (nu / rp - rp / (2.0 * t)) * sv;
                                    let dphi = nu / rp * sv;
                                    let base = (n * nr + i) * nr;
                                    for (&(j, sign), l) in stencil.iter().zip(ell) {
                                        mats[base + j] += sign * l * weight * dr;
                                        aux[base + j] += sign * l * weight * dphi;
                                    }
                                }
                            }
                        }
                        max_mode = max_mode.max(last);
                    }
                }
            }
        }
        Self { mats, aux, max_mode, nodes }
    }

    fn apply(mats: &[f64], nr: usize, max_mode: usize, c: &[f64], out: &mut [f64]) {
        for n in 0..max_mode {
            let cn = &c[n * nr..(n + 1) * nr];
            for i in 0..nr {
                let row = &mats[(n * nr + i) * nr..(n * nr + i + 1) * nr];
                out[n * nr + i] += row.iter().zip(cn).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}

/// Kernel operators for one step size.
#[derive(Debug)]
struct StepOps {
    full: RadialOps,
    half: RadialOps,
    grad: Option<RadialOps>,
}

/// Exact-kernel propagation solver on a wedge.
///
/// Assembly happens once in [`GreenSolver::new`]; paths reuse the operators.
#[derive(Debug)]
pub struct GreenSolver {
    data: ProblemData,
    wedge: AngularDomain,
    layout: PolarLayout,
    basis: AngularBasis,
    ops: BTreeMap<u64, Arc<StepOps>>,
    build_seconds: f64,
}

impl GreenSolver {
    pub fn new(data: &ProblemData) -> Result<Self> {
        let start = Instant::now();
        let (wedge, layout) = data.wedge()?;
        if layout.n_radial < STENCIL {
            return Err(Error::config("the kernel propagator needs at least 8 radial cells"));
        }
        let basis = AngularBasis::new(&layout);
        let mut ops = BTreeMap::new();
        for m in 0..data.time.steps() {
            let dt = data.time.dt(m);
            ops.entry(dt_key(dt)).or_insert_with(|| {
                let full = RadialOps::build(&layout, &basis, dt, RadialKind::Value);
                let half = RadialOps::build(&layout, &basis, 0.5 * dt, RadialKind::Value);
                let grad = data
                    .has_div()
                    .then(|| RadialOps::build(&layout, &basis, 0.5 * dt, RadialKind::Gradient));
                Arc::new(StepOps { full, half, grad })
            });
        }
        Ok(Self {
            data: data.clone(),
            wedge,
            layout,
            basis,
            ops,
            build_seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn step_ops(&self, dt: f64) -> &StepOps {
        &self.ops[&dt_key(dt)]
    }

    fn base_diagnostics(&self) -> Diagnostics {
        let mut d = Diagnostics {
            solver: "green".into(),
            nodes: self.data.mesh.len(),
            steps: self.data.time.steps(),
            modes: self.basis.n,
            kernel_cutoff: KERNEL_CUTOFF,
            build_seconds: self.build_seconds,
            ..Default::default()
        };
        for ops in self.ops.values() {
            for r in [Some(&ops.full), Some(&ops.half), ops.grad.as_ref()].into_iter().flatten() {
                d.max_active_mode = d.max_active_mode.max(r.max_mode);
                d.quadrature_nodes += r.nodes;
            }
        }
        d
    }

    /// `S_t u` for the step size `dt` (`half` selects `t = dt/2`).
    fn propagate(&self, ops: &RadialOps, u: &[f64], spec: &mut [f64], tmp: &mut [f64], out: &mut [f64]) {
        let nr = self.layout.n_radial;
        self.basis.analyze(u, nr, spec);
        tmp.fill(0.0);
        RadialOps::apply(&ops.mats, nr, ops.max_mode, spec, tmp);
        self.basis.synthesize(tmp, nr, out);
    }

    /// Applies `S_{dt}` to node values.
    pub fn semigroup(&self, dt: f64, u: &[f64]) -> Result<Vec<f64>> {
        let ops = self
            .ops
            .get(&dt_key(dt))
            .ok_or_else(|| Error::config("no operator assembled for this step size"))?;
        let n = u.len();
        let mut spec = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut out = vec![0.0; n];
        self.propagate(&ops.full, u, &mut spec, &mut tmp, &mut out);
        Ok(out)
    }

    /// Spectral coefficients of `-∫ ∇_y Γ(t, ·, y) · F(y) dy`, accumulated into `acc`.
    fn divergence_into(&self, ops: &RadialOps, fx: &[f64], fy: &[f64], acc: &mut [f64]) {
        let nr = self.layout.n_radial;
        let na = self.layout.n_angular;
        let n = nr * na;
        let alpha = self.wedge.start_angle();
        let mut fr = vec![0.0; n];
        let mut fphi = vec![0.0; n];
        for i in 0..nr {
            for (l, &phi) in self.layout.angles.iter().enumerate() {
                let (s, c) = (alpha + phi).sin_cos();
                let idx = i * na + l;
                fr[idx] = c * fx[idx] + s * fy[idx];
                fphi[idx] = -s * fx[idx] + c * fy[idx];
            }
        }
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        self.basis.project(&self.basis.sin, &fr, nr, &mut a);
        self.basis.project(&self.basis.cos, &fphi, nr, &mut b);
        let mut t = vec![0.0; n];
        RadialOps::apply(&ops.mats, nr, ops.max_mode, &a, &mut t);
        RadialOps::apply(&ops.aux, nr, ops.max_mode, &b, &mut t);
        let scale = -2.0 / self.basis.opening;
        for (o, v) in acc.iter_mut().zip(&t) {
            *o += scale * v;
        }
    }

    /// Propagates each noise mode: calls `visit(n, [S^n g^k])` for `n = 1..=N`.
    ///
    /// Requires a uniform time grid and time-independent noise coefficients;
    /// this is the input to exact Gaussian moments of the discrete scheme.
    pub fn noise_responses(&self, visit: &mut dyn FnMut(usize, &[Vec<f64>]) -> Result<()>) -> Result<()> {
        let dt = self
            .data
            .time
            .uniform_step()
            .ok_or_else(|| Error::precondition("noise responses need a uniform time grid"))?;
        let mesh = &self.data.mesh;
        let times = self.data.time.times();
        let mut current: Vec<Vec<f64>> = Vec::new();
        for g in self.data.noise.coefficients() {
            let mut v = vec![0.0; mesh.len()];
            sample_checked(g, mesh, 0.0, &mut v, "noise coefficient")?;
            let mut w = vec![0.0; mesh.len()];
            for &t in &times[1..] {
                sample_checked(g, mesh, t, &mut w, "noise coefficient")?;
                if w != v {
                    return Err(Error::precondition("noise responses need time-independent coefficients"));
                }
            }
            current.push(v);
        }
        let ops = self.step_ops(dt);
        let n = mesh.len();
        let (mut spec, mut tmp) = (vec![0.0; n], vec![0.0; n]);
        for step in 1..=self.data.time.steps() {
            for v in current.iter_mut() {
                let mut out = vec![0.0; n];
                self.propagate(&ops.full, v, &mut spec, &mut tmp, &mut out);
                *v = out;
            }
            visit(step, &current)?;
        }
        Ok(())
    }
}

impl PathSolver for GreenSolver {
    fn data(&self) -> &ProblemData {
        &self.data
    }

    fn run_path(&self, path: u64, observer: &mut dyn FnMut(usize, f64, &[f64])) -> Result<Diagnostics> {
        let start = Instant::now();
        let data = &self.data;
        let mesh = &data.mesh;
        let n = mesh.len();
        let nr = self.layout.n_radial;
        let mut diag = self.base_diagnostics();
        let mut u = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut buf = vec![0.0; n];
        let mut spec = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut forcing = vec![0.0; n];
        let mut fy = vec![0.0; n];
        let times = data.time.times();
        for m in 0..data.time.steps() {
            let (t0, dt) = (times[m], data.time.dt(m));
            let tm = t0 + 0.5 * dt;
            let ops = self.step_ops(dt);
            w.copy_from_slice(&u);
            add_noise(data, path, m, t0, dt, &mut buf, &mut w).map_err(|e| e.in_slab(m))?;
            self.basis.analyze(&w, nr, &mut spec);
            acc.fill(0.0);
            RadialOps::apply(&ops.full.mats, nr, ops.full.max_mode, &spec, &mut acc);
            if let Some(f0) = &data.f0 {
                sample_checked(f0, mesh, tm, &mut forcing, "f0").map_err(|e| e.in_slab(m))?;
                self.basis.analyze(&forcing, nr, &mut spec);
                for v in spec.iter_mut() {
                    *v *= dt;
                }
                RadialOps::apply(&ops.half.mats, nr, ops.half.max_mode, &spec, &mut acc);
            }
            if let Some(grad) = &ops.grad {
                forcing.fill(0.0);
                fy.fill(0.0);
                if let Some(f) = &data.f_div[0] {
                    sample_checked(f, mesh, tm, &mut forcing, "f1").map_err(|e| e.in_slab(m))?;
                }
                if let Some(f) = &data.f_div[1] {
                    sample_checked(f, mesh, tm, &mut fy, "f2").map_err(|e| e.in_slab(m))?;
                }
                for (a, b) in forcing.iter_mut().zip(fy.iter_mut()) {
                    *a *= dt;
                    *b *= dt;
                }
                self.divergence_into(grad, &forcing, &fy, &mut acc);
            }
            self.basis.synthesize(&acc, nr, &mut u);
            diag.record(mesh, &u);
            observer(m + 1, times[m + 1], &u);
        }
        diag.wall_seconds = start.elapsed().as_secs_f64();
        Ok(diag)
    }
}

/// Deterministic wedge solve by kernel propagation.
pub fn solve_deterministic_wedge(data: &ProblemData) -> Result<SolveOutput> {
    if data.noise.modes() != 0 {
        return Err(Error::precondition("deterministic solve requires K = 0 noise modes"));
    }
    GreenSolver::new(data)?.collect(0)
}

/// Stochastic wedge solve on noise path 0.
pub fn solve_stochastic_wedge(data: &ProblemData) -> Result<SolveOutput> {
    solve_stochastic_wedge_path(data, 0)
}

pub fn solve_stochastic_wedge_path(data: &ProblemData, path: u64) -> Result<SolveOutput> {
    if data.noise.modes() == 0 {
        return Err(Error::precondition("stochastic solve requires K >= 1 noise modes"));
    }
    GreenSolver::new(data)?.collect(path)
}

// ---------------------------------------------------------------------------
// Finite differences

/// Per-mode tridiagonal factors for `(r²/dt + λ_n) c - D_ss c = rhs`.
#[derive(Debug)]
struct PolarFactors {
    /// Modified super-diagonal and inverse pivots, `[mode][i]`.
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

#[derive(Debug)]
struct BandLu {
    n: usize,
    bw: usize,
    a: Vec<f64>,
}

impl BandLu {
    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let w = self.width();
        &mut self.a[i * w + (j + self.bw - i)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.width() + (j + self.bw - i)]
    }

    /// In-place LU without pivoting; fill stays inside the band.
    fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.get(k, k);
            if !(pivot.abs() > 0.0) {
                return Err(Error::domain("zero pivot in banded factorization"));
            }
            for i in k + 1..(k + bw + 1).min(n) {
                let l = self.get(i, k) / pivot;
                if l == 0.0 {
                    continue;
                }
                *self.at(i, k) = l;
                for j in k + 1..(k + bw + 1).min(n) {
                    let v = self.get(k, j);
                    *self.at(i, j) -= l * v;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for j in lo..i {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw + 1).min(n);
            let mut s = x[i];
            for j in i + 1..hi {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
    }
}

#[derive(Debug)]
enum FdOps {
    Polar { basis: AngularBasis, layout: PolarLayout, alpha: f64, factors: BTreeMap<u64, PolarFactors> },
    Tensor { layout: TensorLayout, lu: BTreeMap<u64, BandLu> },
}

/// Implicit-Euler finite-difference solver.
///
/// Polar meshes use the five-point Laplacian in `(ln r, φ)` with odd ghost
/// cells, diagonalized in angle by the discrete sine transform. Tensor meshes
/// on polygons use the Shortley–Weller stencil and a banded LU.
#[derive(Debug)]
pub struct FdSolver {
    data: ProblemData,
    ops: FdOps,
    build_seconds: f64,
}

impl FdSolver {
    pub fn new(data: &ProblemData) -> Result<Self> {
        let start = Instant::now();
        let ops = match data.mesh.layout() {
            Layout::Polar(p) => {
                let Domain::Wedge(w) = data.mesh.domain() else {
                    return Err(Error::config("polar layout on a non-wedge domain"));
                };
                let basis = AngularBasis::new(p);
                let mut factors = BTreeMap::new();
                for m in 0..data.time.steps() {
                    let dt = data.time.dt(m);
                    factors.entry(dt_key(dt)).or_insert_with(|| polar_factors(p, dt));
                }
                FdOps::Polar { basis, layout: p.clone(), alpha: w.start_angle(), factors }
            }
            Layout::Tensor(t) => {
                let mut lu = BTreeMap::new();
                for m in 0..data.time.steps() {
                    let dt = data.time.dt(m);
                    if let std::collections::btree_map::Entry::Vacant(e) = lu.entry(dt_key(dt)) {
                        e.insert(tensor_lu(t, dt)?);
                    }
                }
                FdOps::Tensor { layout: t.clone(), lu }
            }
        };
        Ok(Self { data: data.clone(), ops, build_seconds: start.elapsed().as_secs_f64() })
    }

    /// Discrete `div F` at time `t` from face values of the coefficients.
    fn divergence(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        let [fx, fy] = &self.data.f_div;
        if fx.is_none() && fy.is_none() {
            return;
        }
        let eval = |c: &Option<Coefficient>, x: Point| c.as_ref().map_or(0.0, |c| c.eval(t, x));
        let points = self.data.mesh.points();
        match &self.ops {
            FdOps::Polar { layout: p, alpha, .. } => {
                let iso_vertex = match self.data.mesh.domain() {
                    Domain::Wedge(w) => w.vertex(),
                    Domain::Polygon(_) => unreachable!(),
                };
                let at = |r: f64, phi: f64| -> (Point, f64, f64) {
                    let (s, c) = (alpha + phi).sin_cos();
                    ([iso_vertex[0] + r * c, iso_vertex[1] + r * s], c, s)
                };
                let half_h = 0.5 * p.log_step;
                let half_a = 0.5 * p.angle_step;
                for i in 0..p.n_radial {
                    let r = p.radii[i];
                    let (rp, rm) = (r * half_h.exp(), r * (-half_h).exp());
                    for (j, &phi) in p.angles.iter().enumerate() {
                        let radial = |rr: f64| {
                            let (x, c, s) = at(rr, phi);
                            rr * (c * eval(fx, x) + s * eval(fy, x))
                        };
                        let angular = |ph: f64| {
                            let (x, c, s) = at(r, ph);
                            r * (-s * eval(fx, x) + c * eval(fy, x))
                        };
                        let d = (radial(rp) - radial(rm)) / p.log_step
                            + (angular(phi + half_a) - angular(phi - half_a)) / p.angle_step;
                        out[p.index(i, j)] = d / (r * r);
                    }
                }
            }
            FdOps::Tensor { layout, .. } => {
                for (n, (x, arms)) in points.iter().zip(&layout.arms).enumerate() {
                    let [e, w, no, so] = arms.map(|a| a.length());
                    let dx = (eval(fx, [x[0] + 0.5 * e, x[1]]) - eval(fx, [x[0] - 0.5 * w, x[1]])) / (0.5 * (e + w));
                    let dy = (eval(fy, [x[0], x[1] + 0.5 * no]) - eval(fy, [x[0], x[1] - 0.5 * so])) / (0.5 * (no + so));
                    out[n] = dx + dy;
                }
            }
        }
    }

    /// Solves `(I - dt Δ_h) x = rhs` in place.
    fn implicit_solve(&self, dt: f64, rhs: &mut [f64], spec: &mut [f64]) {
        match &self.ops {
            FdOps::Polar { basis, layout: p, factors, .. } => {
                let nr = p.n_radial;
                let f = &factors[&dt_key(dt)];
                for i in 0..nr {
                    let s = p.radii[i] * p.radii[i] / dt;
                    for v in &mut rhs[i * p.n_angular..(i + 1) * p.n_angular] {
                        *v *= s;
                    }
                }
                basis.analyze(rhs, nr, spec);
                let inv_h2 = 1.0 / (p.log_step * p.log_step);
                for m in 0..basis.n {
                    let c = &mut spec[m * nr..(m + 1) * nr];
                    let up = &f.upper[m * nr..(m + 1) * nr];
                    let ip = &f.inv_pivot[m * nr..(m + 1) * nr];
                    c[0] *= ip[0];
                    for i in 1..nr {
                        c[i] = (c[i] + inv_h2 * c[i - 1]) * ip[i];
                    }
                    for i in (0..nr - 1).rev() {
                        c[i] -= up[i] * c[i + 1];
                    }
                }
                basis.synthesize(spec, nr, rhs);
            }
            FdOps::Tensor { lu, .. } => lu[&dt_key(dt)].solve(rhs),
        }
    }

    /// Runs from a nonzero initial datum; reference-oracle test hook.
    #[doc(hidden)]
    pub fn run_from(
        &self,
        initial: &[f64],
        path: u64,
        observer: &mut dyn FnMut(usize, f64, &[f64]),
    ) -> Result<Diagnostics> {
        let start = Instant::now();
        let data = &self.data;
        let mesh = &data.mesh;
        let n = mesh.len();
        if initial.len() != n {
            return Err(Error::config("initial datum has the wrong length"));
        }
        let mut diag = Diagnostics {
            solver: "fd".into(),
            nodes: n,
            steps: data.time.steps(),
            build_seconds: self.build_seconds,
            ..Default::default()
        };
        if data.time.steps() < 32 {
            diag.warnings.push("fewer than 32 time steps: first-order time error may dominate".into());
        }
        let mut u = initial.to_vec();
        let mut buf = vec![0.0; n];
        let mut spec = vec![0.0; n];
        let times = data.time.times();
        for m in 0..data.time.steps() {
            let (t0, t1, dt) = (times[m], times[m + 1], data.time.dt(m));
            add_noise(data, path, m, t0, dt, &mut buf, &mut u).map_err(|e| e.in_slab(m))?;
            if let Some(f0) = &data.f0 {
                sample_checked(f0, mesh, t1, &mut buf, "f0").map_err(|e| e.in_slab(m))?;
                for (a, b) in u.iter_mut().zip(&buf) {
                    *a += dt * b;
                }
            }
            if data.has_div() {
                self.divergence(t1, &mut buf);
                if buf.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain("divergence forcing is not finite").in_slab(m));
                }
                for (a, b) in u.iter_mut().zip(&buf) {
                    *a += dt * b;
                }
            }
            self.implicit_solve(dt, &mut u, &mut spec);
            diag.record(mesh, &u);
            observer(m + 1, t1, &u);
        }
        diag.wall_seconds = start.elapsed().as_secs_f64();
        Ok(diag)
    }
}

impl PathSolver for FdSolver {
    fn data(&self) -> &ProblemData {
        &self.data
    }

    fn run_path(&self, path: u64, observer: &mut dyn FnMut(usize, f64, &[f64])) -> Result<Diagnostics> {
        let zeros = vec![0.0; self.data.mesh.len()];
        self.run_from(&zeros, path, observer)
    }
}

fn polar_factors(p: &PolarLayout, dt: f64) -> PolarFactors {
    let (nr, na) = (p.n_radial, p.n_angular);
    let inv_h2 = 1.0 / (p.log_step * p.log_step);
    let mut upper = vec![0.0; na * nr];
    let mut inv_pivot = vec![0.0; na * nr];
    for m in 0..na {
        let lambda = (2.0 - 2.0 * ((m + 1) as f64 * PI / na as f64).cos()) / (p.angle_step * p.angle_step);
        let mut prev_upper = 0.0;
        for i in 0..nr {
            let mut diag = p.radii[i] * p.radii[i] / dt + lambda + 2.0 * inv_h2;
            if i == 0 || i == nr - 1 {
                diag += inv_h2;
            }
            if nr == 1 {
                diag += inv_h2;
            }
            let ip = 1.0 / (diag + inv_h2 * prev_upper);
            let up = -inv_h2 * ip;
            upper[m * nr + i] = up;
            inv_pivot[m * nr + i] = ip;
            prev_upper = up;
        }
    }
    PolarFactors { upper, inv_pivot }
}

fn tensor_lu(t: &TensorLayout, dt: f64) -> Result<BandLu> {
    let n = t.arms.len();
    let mut bw = 0;
    for (i, arms) in t.arms.iter().enumerate() {
        for a in arms {
            if let Arm::Node(j, _) = *a {
                bw = bw.max(i.abs_diff(j));
            }
        }
    }
    let mut lu = BandLu { n, bw, a: vec![0.0; n * (2 * bw + 1)] };
    for (i, arms) in t.arms.iter().enumerate() {
        let [e, w, no, so] = *arms;
        let mut diag = 1.0;
        for (a, b) in [(e, w), (no, so)] {
            let (ha, hb) = (a.length(), b.length());
            diag += dt * 2.0 / (ha * hb);
            for (arm, h) in [(a, ha), (b, hb)] {
                if let Arm::Node(j, _) = arm {
                    *lu.at(i, j) -= dt * 2.0 / (h * (ha + hb));
                }
            }
        }
        *lu.at(i, i) += diag;
    }
    lu.factor()?;
    Ok(lu)
}

/// Finite-difference reference solve on noise path 0.
pub fn solve_fd_reference(data: &ProblemData) -> Result<SolveOutput> {
    FdSolver::new(data)?.collect(0)
}

pub fn solve_fd_reference_path(data: &ProblemData, path: u64) -> Result<SolveOutput> {
    FdSolver::new(data)?.collect(path)
}

// ---------------------------------------------------------------------------
// Polygons

/// Partition-of-unity pieces of a polygon solution and their wedge forcings.
#[derive(Debug, Clone)]
pub struct Localization {
    partition: PartitionOfUnity,
    u: Arc<SpaceTimeField>,
    data: ProblemData,
}

impl Localization {
    pub fn new(u: Arc<SpaceTimeField>, data: &ProblemData) -> Result<Self> {
        let Domain::Polygon(polygon) = data.domain() else {
            return Err(Error::precondition("localization needs a polygon domain"));
        };
        Ok(Self { partition: partition_of_unity(polygon)?, u, data: data.clone() })
    }

    pub fn partition(&self) -> &PartitionOfUnity {
        &self.partition
    }

    pub fn solution(&self) -> &SpaceTimeField {
        &self.u
    }

    /// Number of pieces `ξ_0..ξ_M`.
    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `ξ_j u` on the polygon mesh.
    pub fn piece(&self, j: usize) -> Result<SpaceTimeField> {
        let mesh = self.data.mesh.clone();
        let xi: Vec<f64> = mesh.points().iter().map(|&x| self.partition.value(j, x)).collect();
        let slices = self
            .u
            .slices()
            .iter()
            .map(|s| {
                let v = s.values().iter().zip(&xi).map(|(a, b)| a * b).collect();
                GridFunction::from_values(mesh.clone(), 1, v)
            })
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::new(self.u.grid().clone(), slices)
    }

    /// `max |Σ_j ξ_j u - u|` over all nodes and time levels.
    pub fn reassembly_error(&self) -> Result<f64> {
        let pieces = (0..self.len()).map(|j| self.piece(j)).collect::<Result<Vec<_>>>()?;
        let mut err = 0.0_f64;
        for (m, s) in self.u.slices().iter().enumerate() {
            for (n, &v) in s.values().iter().enumerate() {
                let sum = pieces.iter().map(|p| p.at(m).values()[n]).sum::<f64>();
                err = err.max((sum - v).abs());
            }
        }
        Ok(err)
    }

    fn eval_opt(c: &Option<Coefficient>, t: f64, x: Point) -> f64 {
        c.as_ref().map_or(0.0, |c| c.eval(t, x))
    }

    /// `f^{j,i} = -2 ξ_{j,x^i} u + ξ_j f^i` for `i ∈ {0, 1}`.
    pub fn forcing_div(&self, j: usize, i: usize) -> Coefficient {
        let this = self.clone();
        Coefficient::closed(move |t, x| {
            if !this.data.domain().contains(x) {
                return 0.0;
            }
            let grad = this.partition.gradient(j, x);
            let u = this.u.value_at(t, x);
            -2.0 * grad[i] * u + this.partition.value(j, x) * Self::eval_opt(&this.data.f_div[i], t, x)
        })
    }

    /// `f^{j,0} = u Δξ_j + ξ_j f⁰ - Σ_i ξ_{j,x^i} f^i`.
    ///
    /// The minus sign on the last term is what the product rule gives for
    /// `ξ_j f^i_{x^i} = (ξ_j f^i)_{x^i} - ξ_{j,x^i} f^i`.
    pub fn forcing_free(&self, j: usize) -> Coefficient {
        let this = self.clone();
        Coefficient::closed(move |t, x| {
            if !this.data.domain().contains(x) {
                return 0.0;
            }
            let grad = this.partition.gradient(j, x);
            let u = this.u.value_at(t, x);
            let mut v = u * this.partition.laplacian(j, x)
                + this.partition.value(j, x) * Self::eval_opt(&this.data.f0, t, x);
            for (i, f) in this.data.f_div.iter().enumerate() {
                v -= grad[i] * Self::eval_opt(f, t, x);
            }
            v
        })
    }

    /// Noise `ξ_j g^k` with the polygon problem's seed.
    pub fn noise(&self, j: usize) -> NoiseSpec {
        let coefficients = self
            .data
            .noise
            .coefficients()
            .iter()
            .map(|g| {
                let g = g.clone();
                let part = self.partition.clone();
                let domain = self.data.domain().clone();
                Coefficient::closed(move |t, x| {
                    if domain.contains(x) {
                        part.value(j, x) * g.eval(t, x)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        NoiseSpec::new(coefficients, self.data.noise.seed())
    }

    /// Wedge problem for `ξ_j u` on the vertex wedge `D_j` (`j >= 1`), on
    /// `mesh` with the polygon problem's time grid.
    pub fn vertex_problem(&self, j: usize, mesh: Arc<Mesh>) -> Result<ProblemData> {
        if j == 0 || j >= self.len() {
            return Err(Error::config(format!("vertex piece index {j} out of range")));
        }
        let Domain::Polygon(polygon) = self.data.domain() else { unreachable!() };
        let expected = polygon.vertex_wedge(j - 1);
        match mesh.domain() {
            Domain::Wedge(w)
                if (w.opening() - expected.opening()).abs() < 1e-12
                    && (w.start_angle() - expected.start_angle()).abs() < 1e-12
                    && crate::geometry::norm(crate::geometry::sub(w.vertex(), expected.vertex())) < 1e-12 => {}
            _ => return Err(Error::config("mesh does not cover the vertex wedge")),
        }
        // `u Δξ_j` has large cancelling lobes and kinks where the cutoff
        // profile is only C^2, so it is cell averaged with the panels split
        // there. The divergence data stays point valued (face evaluations).
        let breaks = [polygon.radius(), 2.0 * polygon.radius()];
        let f0 = self.forcing_free(j).cell_averaged(&mesh, &breaks)?;
        Ok(ProblemData::new(mesh, self.data.time.clone())
            .with_f0(f0)
            .with_f_div(0, self.forcing_div(j, 0))
            .with_f_div(1, self.forcing_div(j, 1))
            .with_noise(self.noise(j)))
    }
}

/// Polygon solve and its localized decomposition.
#[derive(Debug, Clone)]
pub struct PolygonSolve {
    pub output: SolveOutput,
    pub localization: Localization,
}

/// Polygon solve on noise path 0.
pub fn solve_polygon(data: &ProblemData) -> Result<PolygonSolve> {
    solve_polygon_path(data, 0)
}

pub fn solve_polygon_path(data: &ProblemData, path: u64) -> Result<PolygonSolve> {
    if !matches!(data.domain(), Domain::Polygon(_)) {
        return Err(Error::precondition("solve_polygon needs a polygon domain"));
    }
    let output = solve_fd_reference_path(data, path)?;
    let localization = Localization::new(Arc::new(output.u.clone()), data)?;
    Ok(PolygonSolve { output, localization })
}

// ---------------------------------------------------------------------------
// Checks and serialization

/// Residuals of the weak form at the grid times for the test function `φ`:
/// `(u(t_n), φ) - Σ_m [(u, Δφ) + (f⁰, φ) - (f^i, φ_{x^i})] dt - Σ_m (g^k(t_m), φ) dw^k_m`.
///
/// The deterministic integrals use the trapezoid rule on grid values.
pub fn weak_form_residuals(
    u: &SpaceTimeField,
    data: &ProblemData,
    path: u64,
    phi: &crate::geometry::CutoffField,
) -> Result<Vec<f64>> {
    let mesh = &data.mesh;
    let w = mesh.weights();
    let pts = mesh.points();
    let inner = |vals: &dyn Fn(usize) -> f64| -> f64 {
        let terms: Vec<f64> = (0..mesh.len()).map(|n| vals(n) * w[n]).collect();
        pairwise_sum(&terms)
    };
    let times = data.time.times();
    let rate = |m: usize| -> f64 {
        let t = times[m];
        let um = u.at(m).values();
        inner(&|n| {
            let x = pts[n];
            let g = phi.gradient(x);
            let mut v = um[n] * phi.laplacian(x);
            if let Some(f0) = &data.f0 {
                v += f0.eval(t, x) * phi.value(x);
            }
            for (i, f) in data.f_div.iter().enumerate() {
                if let Some(f) = f {
                    v -= f.eval(t, x) * g[i];
                }
            }
            v
        })
    };
    let mut out = Vec::with_capacity(times.len());
    let mut integral = 0.0;
    let mut prev = rate(0);
    out.push(0.0);
    let mut dw = vec![0.0; data.noise.modes()];
    for m in 0..data.time.steps() {
        let dt = data.time.dt(m);
        let next = rate(m + 1);
        integral += 0.5 * dt * (prev + next);
        prev = next;
        data.noise.increments(path, m, dt, &mut dw);
        for (g, &dwk) in data.noise.coefficients().iter().zip(&dw) {
            integral += dwk * inner(&|n| g.eval(times[m], pts[n]) * phi.value(pts[n]));
        }
        let um = u.at(m + 1).values();
        let lhs = inner(&|n| um[n] * phi.value(pts[n]));
        out.push(lhs - integral);
    }
    Ok(out)
}

/// Writes `t,node_id,value` rows.
pub fn write_field_csv(field: &SpaceTimeField, mut out: impl Write) -> Result<()> {
    writeln!(out, "t,node_id,value")?;
    for (t, s) in field.grid().times().iter().zip(field.slices()) {
        for (n, v) in s.values().iter().enumerate() {
            writeln!(out, "{t},{n},{v}")?;
        }
    }
    Ok(())
}

const BINARY_MAGIC: &[u8; 8] = b"SHEFLD01";

/// Columnar little-endian layout: magic, level count, node count, the time
/// column, then values level by level.
pub fn write_field_binary(field: &SpaceTimeField, mut out: impl Write) -> Result<()> {
    let times = field.grid().times();
    let nodes = field.last().mesh().len();
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(times.len() as u64).to_le_bytes())?;
    out.write_all(&(nodes as u64).to_le_bytes())?;
    for t in times {
        out.write_all(&t.to_le_bytes())?;
    }
    for s in field.slices() {
        for v in s.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads the binary layout back as `(times, values per level)`.
pub fn read_field_binary(mut input: impl Read) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse { path: "<binary>".into(), message: "bad magic".into() });
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |input: &mut dyn Read| -> Result<u64> {
        input.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let levels = next_u64(&mut input)? as usize;
    let nodes = next_u64(&mut input)? as usize;
    let read_f64 = |input: &mut dyn Read| -> Result<f64> {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    let times = (0..levels).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>()?;
    let values = (0..levels)
        .map(|_| (0..nodes).map(|_| read_f64(&mut input)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((times, values))
}

/// Relative discrete `L²` distance `‖a - b‖ / ‖b‖` with the mesh weights,
/// optionally restricted to nodes where `mask` holds.
pub fn relative_l2(a: &GridFunction, b: &GridFunction, mask: impl Fn(Point) -> bool) -> f64 {
    let mesh = b.mesh();
    let (mut num, mut den) = (Vec::new(), Vec::new());
    for (n, (&x, &w)) in mesh.points().iter().zip(mesh.weights()).enumerate() {
        if !mask(x) {
            continue;
        }
        let (va, vb) = (a.values()[n], b.values()[n]);
        num.push(w * (va - vb) * (va - vb));
        den.push(w * vb * vb);
    }
    (pairwise_sum(&num) / pairwise_sum(&den)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_polar_mesh, build_polygon_mesh, CutoffField, Polygon};
    use crate::green::{green_images, green_wedge, KernelQuery};

    fn smooth_bump(center: Point, radius: f64) -> impl Fn(f64, Point) -> f64 + Send + Sync + Clone {
        move |_t, x| {
            let d2 = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (radius * radius);
            if d2 < 1.0 {
                (1.0 - 1.0 / (1.0 - d2)).exp()
            } else {
                0.0
            }
        }
    }

    fn ring_bump(_t: f64, x: Point) -> f64 {
        let s = ((x[0] * x[0] + x[1] * x[1]).sqrt() - 1.5) / 0.5;
        if s.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    }

    fn quadrant_mesh(nr: usize, na: usize, r_max: f64) -> Arc<Mesh> {
        let w = AngularDomain::canonical(0.5 * PI).unwrap();
        Arc::new(build_polar_mesh(&w, 1e-3, r_max, nr, na).unwrap())
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }

    #[test]
    fn zero_data_gives_zero() {
        let data = ProblemData::new(quadrant_mesh(16, 8, 4.0), TimeGrid::uniform(0.1, 4).unwrap());
        let out = solve_deterministic_wedge(&data).unwrap();
        assert!(out.u.slices().iter().all(|s| s.values().iter().all(|&v| v == 0.0)));
        let fd = solve_fd_reference(&data).unwrap();
        assert!(fd.u.last().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preconditions_on_noise_modes() {
        let data = ProblemData::new(quadrant_mesh(16, 8, 4.0), TimeGrid::uniform(0.1, 4).unwrap());
        assert!(matches!(solve_stochastic_wedge(&data), Err(Error::Precondition(_))));
        let noisy = data.with_noise(NoiseSpec::new(vec![Coefficient::closed(ring_bump)], 1));
        assert!(matches!(solve_deterministic_wedge(&noisy), Err(Error::Precondition(_))));
    }

    #[test]
    fn non_finite_forcing_reports_slab() {
        let data = ProblemData::new(quadrant_mesh(16, 8, 4.0), TimeGrid::uniform(0.1, 4).unwrap())
            .with_f0(Coefficient::closed(|t, _| if t > 0.05 { f64::NAN } else { 1.0 }));
        match solve_deterministic_wedge(&data) {
            Err(Error::Slab { context, .. }) => assert_eq!(context, "time slab 2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn one_step_matches_image_kernel() {
        let y = [1.0, 0.8];
        let mut errs = Vec::new();
        for nr in [64, 128] {
            let mesh = quadrant_mesh(nr, 48, 8.0);
            let data = ProblemData::new(mesh.clone(), TimeGrid::uniform(0.002, 1).unwrap());
            let s = GreenSolver::new(&data).unwrap();
            let at = |t: f64| -> Vec<f64> {
                mesh.points().iter().map(|&x| green_images(0.5 * PI, t, x, y).unwrap()).collect()
            };
            let (u0, exact) = (at(0.1), at(0.102));
            let got = s.semigroup(0.002, &u0).unwrap();
            let err = got.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            errs.push(err / max_abs(&exact));
        }
        assert!(errs[1] < 1e-5, "{errs:?}");
        assert!(errs[0] / errs[1] > 30.0, "{errs:?}");
    }

    #[test]
    fn linearity() {
        let mesh = quadrant_mesh(24, 12, 6.0);
        let time = TimeGrid::uniform(0.2, 8).unwrap();
        let fa = smooth_bump([1.0, 1.0], 0.6);
        let fb = |t: f64, x: Point| (1.0 + t) * ring_bump(t, x);
        let (a, b) = (0.7, -2.3);
        let run = |f: Coefficient| solve_deterministic_wedge(&ProblemData::new(mesh.clone(), time.clone()).with_f0(f)).unwrap();
        let ua = run(Coefficient::closed(fa.clone()));
        let ub = run(Coefficient::closed(fb));
        let fa2 = fa.clone();
        let uab = run(Coefficient::closed(move |t, x| a * fa2(t, x) + b * fb(t, x)));
        let scale = max_abs(uab.u.last().values());
        for m in 0..=8 {
            for n in 0..mesh.len() {
                let lin = a * ua.u.at(m).values()[n] + b * ub.u.at(m).values()[n];
                assert!((uab.u.at(m).values()[n] - lin).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn green_matches_fd_reference() {
        let mesh = quadrant_mesh(64, 32, 8.1);
        let data = ProblemData::new(mesh, TimeGrid::uniform(0.5, 128).unwrap()).with_f0(Coefficient::closed(ring_bump));
        let g = solve_deterministic_wedge(&data).unwrap();
        let f = solve_fd_reference(&data).unwrap();
        let rel = relative_l2(g.u.last(), f.u.last(), |_| true);
        assert!(rel < 0.03, "{rel}");
        // the solution stays inside the truncated wedge
        let d = &g.diagnostics;
        assert!(d.outer_ring.last().unwrap() < &(1e-5 * d.step_sup.last().unwrap()), "{:?}", d.outer_ring.last());
    }

    #[test]
    fn zero_noise_reduces_to_deterministic() {
        let mesh = quadrant_mesh(24, 12, 6.0);
        let base = ProblemData::new(mesh, TimeGrid::uniform(0.2, 8).unwrap()).with_f0(Coefficient::closed(ring_bump));
        let det = solve_deterministic_wedge(&base).unwrap();
        let noisy = base.clone().with_noise(NoiseSpec::new(vec![Coefficient::closed(|_, _| 0.0)], 3));
        let sto = solve_stochastic_wedge_path(&noisy, 5).unwrap();
        for m in 0..=8 {
            assert_eq!(det.u.at(m).values(), sto.u.at(m).values());
        }
    }

    #[test]
    fn dilation_equivariance() {
        let w = AngularDomain::new([0.3, -0.2], 0.4, 1.5 * PI).unwrap();
        let mesh = Arc::new(build_polar_mesh(&w, 1e-3, 6.0, 32, 24).unwrap());
        let small = Arc::new(mesh.dilated(0.5).unwrap());
        let v = w.vertex();
        let f0 = move |t: f64, x: Point| (1.0 + t) * ring_bump(t, [x[0] - v[0], x[1] - v[1]]);
        let f1 = move |t: f64, x: Point| {
            let y = [x[0] - v[0], x[1] - v[1]];
            (y[1] - 0.2 * t) * smooth_bump([-0.5, 1.2], 0.8)(t, y)
        };
        let steps = 12;
        let big = ProblemData::new(mesh.clone(), TimeGrid::uniform(0.4, steps).unwrap())
            .with_f0(Coefficient::closed(f0))
            .with_f_div(0, Coefficient::closed(f1));
        let scaled = move |x: Point| [v[0] + 2.0 * (x[0] - v[0]), v[1] + 2.0 * (x[1] - v[1])];
        let tilde = ProblemData::new(small.clone(), TimeGrid::uniform(0.1, steps).unwrap())
            .with_f0(Coefficient::closed(move |t, x| 4.0 * f0(4.0 * t, scaled(x))))
            .with_f_div(0, Coefficient::closed(move |t, x| 2.0 * f1(4.0 * t, scaled(x))));
        let u = solve_deterministic_wedge(&big).unwrap();
        let ut = solve_deterministic_wedge(&tilde).unwrap();
        for m in 1..=steps {
            let (a, b) = (u.u.at(m).values(), ut.u.at(m).values());
            let dev = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / max_abs(a);
            assert!(dev < 1e-10, "step {m}: {dev}");
        }
    }

    #[test]
    fn divergence_term_matches_fd() {
        let mesh = quadrant_mesh(64, 32, 8.0);
        let f = smooth_bump([1.2, 0.9], 0.7);
        let data = ProblemData::new(mesh, TimeGrid::uniform(0.3, 96).unwrap())
            .with_f_div(0, Coefficient::closed(f.clone()))
            .with_f_div(1, Coefficient::closed(move |t, x| -0.5 * f(t, x)));
        let g = solve_deterministic_wedge(&data).unwrap();
        let d = solve_fd_reference(&data).unwrap();
        let rel = relative_l2(g.u.last(), d.u.last(), |_| true);
        assert!(rel < 0.03, "{rel}");
    }

    /// `u* = e^{-t} x y b(r)` with `b = (1 - (r/R)²)⁴`.
    fn manufactured_error(n: usize, steps: usize) -> f64 {
        let big_r = 1.5;
        let mesh = quadrant_mesh(n, n / 2, big_r);
        let profile = move |r: f64| {
            let q = r / big_r;
            let a = 1.0 - q * q;
            let b = a.powi(4);
            let b1 = -8.0 * q * a.powi(3) / big_r;
            let b2 = -8.0 * a * a * (1.0 - 7.0 * q * q) / (big_r * big_r);
            (b, b1, b2)
        };
        let exact = move |t: f64, x: Point| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r >= big_r {
                return 0.0;
            }
            (-t).exp() * x[0] * x[1] * profile(r).0
        };
        let f0 = move |t: f64, x: Point| {
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            if r >= big_r {
                return 0.0;
            }
            let (b, b1, b2) = profile(r);
            (-t).exp() * x[0] * x[1] * (-b - (b2 + 5.0 * b1 / r))
        };
        let t_end = 0.2;
        let data = ProblemData::new(mesh.clone(), TimeGrid::uniform(t_end, steps).unwrap()).with_f0(Coefficient::closed(f0));
        let fd = FdSolver::new(&data).unwrap();
        let init: Vec<f64> = mesh.points().iter().map(|&x| exact(0.0, x)).collect();
        let mut last = Vec::new();
        fd.run_from(&init, 0, &mut |_, _, u| last = u.to_vec()).unwrap();
        let reference = GridFunction::from_fn(mesh.clone(), |x| exact(t_end, x));
        let got = GridFunction::from_values(mesh, 1, last).unwrap();
        relative_l2(&got, &reference, |_| true)
    }

    #[test]
    fn fd_manufactured_second_order() {
        let e: Vec<f64> = [(32, 16), (64, 64), (128, 256)].iter().map(|&(n, s)| manufactured_error(n, s)).collect();
        let order = (e[1] / e[2]).log2();
        assert!((order - 2.0).abs() <= 0.3, "{e:?} order {order}");
    }

    #[test]
    fn fd_heat_decay_is_monotone() {
        let mesh = quadrant_mesh(32, 16, 3.0);
        let data = ProblemData::new(mesh.clone(), TimeGrid::uniform(0.5, 20).unwrap());
        let init: Vec<f64> = mesh.points().iter().map(|&x| smooth_bump([1.0, 1.0], 0.8)(0.0, x)).collect();
        let norm = |u: &[f64]| u.iter().zip(mesh.weights()).map(|(v, w)| v * v * w).sum::<f64>().sqrt();
        let mut norms = vec![norm(&init)];
        FdSolver::new(&data).unwrap().run_from(&init, 0, &mut |_, _, u| norms.push(norm(u))).unwrap();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    fn l_shape() -> Polygon {
        Polygon::new(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]], 0.2).unwrap()
    }

    #[test]
    fn polygon_partition_reassembles() {
        let poly = l_shape();
        let mesh = Arc::new(build_polygon_mesh(&poly, 24, 1.5).unwrap());
        let data = ProblemData::new(mesh, TimeGrid::uniform(0.1, 10).unwrap())
            .with_noise(NoiseSpec::new(vec![Coefficient::closed(smooth_bump([-0.35, -0.35], 0.3))], 9));
        let ps = solve_polygon(&data).unwrap();
        assert_eq!(ps.localization.len(), 7);
        assert!(ps.localization.reassembly_error().unwrap() <= 1e-12);
        assert!(max_abs(ps.output.u.last().values()) > 0.0);
    }

    #[test]
    fn localized_forcing_matches_product_rule() {
        // for a static field u, d(ξu) = Δ(ξu) + div f^{j,·} + f^{j,0} - ξ (Δu + f⁰ + div f)
        let poly = l_shape();
        let mesh = Arc::new(build_polygon_mesh(&poly, 8, 1.0).unwrap());
        let u_fn = |x: Point| (x[0] + 1.0) * (1.0 - x[0]) * (x[1] + 1.0) * (1.0 - x[1]) * (x[0] * x[0] + x[1]);
        let values = GridFunction::from_fn(mesh.clone(), u_fn);
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let field = SpaceTimeField::new(grid.clone(), vec![GridFunction::zeros(mesh.clone(), 1), values]).unwrap();
        let f1 = |_t: f64, x: Point| x[0] * x[1];
        let data = ProblemData::new(mesh, grid).with_f_div(0, Coefficient::closed(f1));
        let loc = Localization::new(Arc::new(field), &data).unwrap();
        let xi = loc.partition().vertex_cutoff(4);
        // at a point in the transition annulus of the reentrant corner
        let x = [-0.25, -0.1];
        let h = 1e-4;
        let fx = loc.forcing_div(4, 0);
        let fy = loc.forcing_div(4, 1);
        let div = (fx.eval(1.0, [x[0] + h, x[1]]) - fx.eval(1.0, [x[0] - h, x[1]])) / (2.0 * h)
            + (fy.eval(1.0, [x[0], x[1] + h]) - fy.eval(1.0, [x[0], x[1] - h])) / (2.0 * h);
        let ux = |x: Point| loc.solution().value_at(1.0, x);
        // ξ div f = (ξ f)_x - ξ_x f, all other terms are linear in u
        let g = xi.gradient(x);
        let lhs = fx.eval(1.0, x) + 2.0 * g[0] * ux(x);
        assert!((lhs - xi.value(x) * f1(1.0, x)).abs() < 1e-12);
        let free = loc.forcing_free(4).eval(1.0, x);
        let expected = ux(x) * xi.laplacian(x) - g[0] * f1(1.0, x);
        assert!((free - expected).abs() < 1e-12);
        assert!(div.is_finite());
    }

    #[test]
    fn weak_form_residual_is_small() {
        // the midpoint rule must resolve Δφ, so the residual is a mesh effect
        let phi = CutoffField::new([1.5, 1.5], 0.5);
        let relative = |n: usize| {
            let mesh = quadrant_mesh(n, n / 2, 6.0);
            let data = ProblemData::new(mesh, TimeGrid::uniform(0.3, 64).unwrap()).with_f0(Coefficient::closed(ring_bump));
            let out = solve_deterministic_wedge(&data).unwrap();
            let res = weak_form_residuals(&out.u, &data, 0, &phi).unwrap();
            let m = &data.mesh;
            let scale: f64 = out.u.last().values().iter().zip(m.points()).zip(m.weights()).map(|((u, &x), w)| u * phi.value(x) * w).sum();
            res.iter().fold(0.0_f64, |a, r| a.max(r.abs())) / scale
        };
        let (coarse, fine) = (relative(64), relative(128));
        assert!(fine < 2e-2 && coarse / fine > 3.0, "{coarse} {fine}");
    }

    #[test]
    fn stochastic_mean_is_zero_and_variance_matches_quadrature() {
        let mesh = quadrant_mesh(32, 16, 5.0);
        let g = smooth_bump([0.9, 0.9], 0.6);
        let steps = 32;
        let t_end = 0.25;
        let data = ProblemData::new(mesh.clone(), TimeGrid::uniform(t_end, steps).unwrap())
            .with_noise(NoiseSpec::new(vec![Coefficient::closed(g.clone())], 11));
        let solver = GreenSolver::new(&data).unwrap();
        let probes: Vec<usize> = (0..10).map(|k| mesh.polar().unwrap().index(8 + k, 3 + k % 8)).collect();
        let paths = 200;
        let mut finals = Vec::new();
        for path in 0..paths {
            let mut last = Vec::new();
            solver.run_path(path, &mut |_, _, u| last = u.to_vec()).unwrap();
            finals.push(last);
        }
        for &n in &probes {
            let xs: Vec<f64> = finals.iter().map(|u| u[n]).collect();
            let mean = xs.iter().sum::<f64>() / paths as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (paths as f64 - 1.0);
            assert!(mean.abs() <= 3.0 * (var / paths as f64).sqrt(), "probe {n}");
        }
        // exact variance of the scheme versus a kernel quadrature of the isometry
        let mut variance = vec![0.0; mesh.len()];
        let dt = t_end / steps as f64;
        solver
            .noise_responses(&mut |_, h| {
                for (v, x) in variance.iter_mut().zip(&h[0]) {
                    *v += dt * x * x;
                }
                Ok(())
            })
            .unwrap();
        let n = probes[4];
        let x = mesh.points()[n];
        let gy: Vec<f64> = mesh.points().iter().map(|&y| g(0.0, y)).collect();
        let mut quad = 0.0;
        let (gl_x, gl_w) = (GL_X, GL_W);
        for (sx, sw) in gl_x.iter().zip(gl_w) {
            let s = 0.5 * t_end * (1.0 + sx);
            let lag = t_end - s;
            let mut inner = 0.0;
            for (k, &y) in mesh.points().iter().enumerate() {
                if gy[k] != 0.0 {
                    let q = KernelQuery::new(0.5 * PI, lag, x, y).unwrap();
                    inner += green_wedge(&q).unwrap() * gy[k] * mesh.weights()[k];
                }
            }
            quad += 0.5 * t_end * sw * inner * inner;
        }
        let rel = (variance[n] - quad).abs() / quad;
        assert!(rel < 0.1, "scheme {} quadrature {quad}", variance[n]);
    }

    #[test]
    fn serialization_round_trips() {
        let mesh = quadrant_mesh(8, 4, 2.0);
        let data = ProblemData::new(mesh, TimeGrid::uniform(0.1, 3).unwrap()).with_f0(Coefficient::closed(|_, _| 1.0));
        let out = solve_fd_reference(&data).unwrap();
        let mut bin = Vec::new();
        write_field_binary(&out.u, &mut bin).unwrap();
        let (times, values) = read_field_binary(bin.as_slice()).unwrap();
        assert_eq!(times, out.u.grid().times());
        assert_eq!(values[3], out.u.last().values());
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_field_csv(&out.u, &mut a).unwrap();
        write_field_csv(&solve_fd_reference(&data).unwrap().u, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("t,node_id,value\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 32);
        let json = out.diagnostics.to_json().unwrap();
        assert!(json.contains("\"solver\": \"fd\""));
    }

    #[test]
    fn truncation_radius_bounds_gaussian_tail() {
        let r = truncation_radius(2.0, 0.5, 1e-8);
        assert!(((r - 2.0).powi(2) / (4.0 * 0.5) - (1e8f64).ln()).abs() < 1e-12);
    }
}
