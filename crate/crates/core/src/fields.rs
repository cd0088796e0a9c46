//! Grid functions, noise, discrete derivatives and weighted norms.
//!
//! Norms use the midpoint rule with the mesh's exact cell areas. Sums are
//! pairwise in node order so results do not depend on scheduling.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{smoothstep, Domain, Layout, Mesh, Point};

/// Pairwise summation; the result depends only on the slice order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Multi-index `(alpha_1, alpha_2)`.
pub type MultiIndex = [u8; 2];

/// All multi-indices with `|alpha| <= m`, ordered by degree.
pub fn multi_indices(m: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for k in 0..=m {
        for j in 0..=k {
            out.push([(k - j) as u8, j as u8]);
        }
    }
    out
}

fn factorial(n: u8) -> f64 {
    (1..=n as u32).map(f64::from).product()
}

/// Node values of a real or `l2`-valued function on a mesh.
#[derive(Debug, Clone)]
pub struct GridFunction {
    mesh: Arc<Mesh>,
    components: usize,
    values: Vec<f64>,
    alpha: MultiIndex,
}

impl GridFunction {
    pub fn zeros(mesh: Arc<Mesh>, components: usize) -> Self {
        let n = mesh.len() * components;
        Self { mesh, components, values: vec![0.0; n], alpha: [0, 0] }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(Point) -> f64) -> Self {
        let values = mesh.points().iter().map(|&x| f(x)).collect();
        Self { mesh, components: 1, values, alpha: [0, 0] }
    }

    /// Vector-valued field; `f(x, out)` fills `components` entries.
    pub fn from_vec_fn(mesh: Arc<Mesh>, components: usize, f: impl Fn(Point, &mut [f64])) -> Self {
        let mut values = vec![0.0; mesh.len() * components];
        for (x, chunk) in mesh.points().iter().zip(values.chunks_mut(components.max(1))) {
            if components > 0 {
                f(*x, chunk);
            }
        }
        Self { mesh, components, values, alpha: [0, 0] }
    }

    /// Node-major values (`node * components + k`).
    pub fn from_values(mesh: Arc<Mesh>, components: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() * components {
            return Err(Error::config(format!(
                "expected {} values for {} nodes x {components} components, got {}",
                mesh.len() * components,
                mesh.len(),
                values.len()
            )));
        }
        Ok(Self { mesh, components, values, alpha: [0, 0] })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Derivative this field represents (`[0, 0]` for plain values).
    pub fn alpha(&self) -> MultiIndex {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: MultiIndex) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.components..(i + 1) * self.components]
    }

    /// `|f(x_i)|_{l2}`.
    pub fn l2_at(&self, i: usize) -> f64 {
        let v = self.node(i);
        if v.len() == 1 {
            v[0].abs()
        } else {
            v.iter().map(|a| a * a).sum::<f64>().sqrt()
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh) && self.mesh.id() != other.mesh.id() {
            return Err(Error::config("grid functions live on different meshes"));
        }
        if self.components != other.components {
            return Err(Error::config("component counts differ"));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    /// Value at an arbitrary point by bilinear interpolation (first component).
    ///
    /// Polar meshes interpolate in `(ln r, phi)` with odd reflection across
    /// every face, so the result vanishes on the wedge edges and outside
    /// `[r_min, r_max]`. Tensor meshes interpolate on the grid with zero at
    /// grid points outside the domain.
    pub fn interpolate(&self, x: Point) -> f64 {
        let c = self.components;
        let at = |n: usize| self.values[n * c];
        match (self.mesh.domain(), self.mesh.layout()) {
            (Domain::Wedge(w), Layout::Polar(p)) => {
                let (r, phi) = w.local_polar(x);
                if !(r > p.r_min && r < p.r_max && phi > 0.0 && phi < p.opening) {
                    return 0.0;
                }
                let fi = (r / p.r_min).ln() / p.log_step - 0.5;
                let fj = phi / p.angle_step - 0.5;
                let sample = |i: isize, j: isize| -> f64 {
                    let (nr, na) = (p.n_radial as isize, p.n_angular as isize);
                    let mut sign = 1.0;
                    let i = if i < 0 {
                        sign = -sign;
                        -1 - i
                    } else if i >= nr {
                        sign = -sign;
                        2 * nr - 1 - i
                    } else {
                        i
                    };
                    let j = if j < 0 {
                        sign = -sign;
                        -1 - j
                    } else if j >= na {
                        sign = -sign;
                        2 * na - 1 - j
                    } else {
                        j
                    };
                    sign * at(p.index(i as usize, j as usize))
                };
                let (i0, j0) = (fi.floor(), fj.floor());
                let (a, b) = (fi - i0, fj - j0);
                let (i0, j0) = (i0 as isize, j0 as isize);
                (1.0 - a) * (1.0 - b) * sample(i0, j0)
                    + a * (1.0 - b) * sample(i0 + 1, j0)
                    + (1.0 - a) * b * sample(i0, j0 + 1)
                    + a * b * sample(i0 + 1, j0 + 1)
            }
            (_, Layout::Tensor(t)) => {
                if !self.mesh.domain().contains(x) {
                    return 0.0;
                }
                let find = |v: &[f64], s: f64| match v.partition_point(|&g| g <= s) {
                    0 => None,
                    k if k >= v.len() => None,
                    k => Some(k - 1),
                };
                let (Some(ix), Some(iy)) = (find(&t.xs, x[0]), find(&t.ys, x[1])) else {
                    return 0.0;
                };
                let nx = t.xs.len();
                let val = |ix: usize, iy: usize| t.node_of[iy * nx + ix].map_or(0.0, at);
                let a = (x[0] - t.xs[ix]) / (t.xs[ix + 1] - t.xs[ix]);
                let b = (x[1] - t.ys[iy]) / (t.ys[iy + 1] - t.ys[iy]);
                (1.0 - a) * (1.0 - b) * val(ix, iy)
                    + a * (1.0 - b) * val(ix + 1, iy)
                    + (1.0 - a) * b * val(ix, iy + 1)
                    + a * b * val(ix + 1, iy + 1)
            }
            _ => 0.0,
        }
    }
}

/// Strictly increasing time grid starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::config("time grid needs t_0 = 0 and at least one step"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("time grid must be strictly increasing"));
        }
        Ok(Self { times })
    }

    pub fn uniform(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time > 0.0) || steps == 0 {
            return Err(Error::config("uniform grid needs T > 0 and steps >= 1"));
        }
        Self::new((0..=steps).map(|m| final_time * m as f64 / steps as f64).collect())
    }

    /// Steps growing geometrically by `ratio`, finest near `t = 0`.
    pub fn geometric(final_time: f64, steps: usize, ratio: f64) -> Result<Self> {
        if !(ratio >= 1.0) {
            return Err(Error::config("geometric ratio must be >= 1"));
        }
        if ratio == 1.0 {
            return Self::uniform(final_time, steps);
        }
        let first = final_time * (ratio - 1.0) / (ratio.powi(steps as i32) - 1.0);
        let mut times = vec![0.0];
        let mut t = 0.0;
        for m in 0..steps {
            t += first * ratio.powi(m as i32);
            times.push(t);
        }
        times[steps] = final_time;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self, m: usize) -> f64 {
        self.times[m + 1] - self.times[m]
    }

    /// Common step if the grid is uniform (relative tolerance 1e-12).
    pub fn uniform_step(&self) -> Option<f64> {
        let h = self.dt(0);
        (0..self.steps()).all(|m| (self.dt(m) - h).abs() <= 1e-12 * h).then_some(h)
    }
}

/// One grid function per time level, starting from the zero field.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: TimeGrid,
    slices: Vec<GridFunction>,
}

impl SpaceTimeField {
    pub fn new(grid: TimeGrid, slices: Vec<GridFunction>) -> Result<Self> {
        if slices.len() != grid.times().len() {
            return Err(Error::config("one slice per time level is required"));
        }
        if slices[0].values().iter().any(|&v| v != 0.0) {
            return Err(Error::config("field at t = 0 must vanish"));
        }
        Ok(Self { grid, slices })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn slices(&self) -> &[GridFunction] {
        &self.slices
    }

    pub fn at(&self, m: usize) -> &GridFunction {
        &self.slices[m]
    }

    pub fn last(&self) -> &GridFunction {
        &self.slices[self.slices.len() - 1]
    }

    /// Linear interpolation in time at the point `x`.
    pub fn value_at(&self, t: f64, x: Point) -> f64 {
        let times = self.grid.times();
        if t <= 0.0 {
            return 0.0;
        }
        let k = times.partition_point(|&s| s <= t).min(times.len() - 1).max(1);
        let (t0, t1) = (times[k - 1], times[k]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (1.0 - a) * self.slices[k - 1].interpolate(x) + a * self.slices[k].interpolate(x)
    }
}

/// Space-time coefficient given in closed form.
pub type ScalarFn = Arc<dyn Fn(f64, Point) -> f64 + Send + Sync>;

/// Closed-form or sampled coefficient.
#[derive(Clone)]
pub enum Coefficient {
    Closed(ScalarFn),
    /// Time-independent samples on the solve mesh.
    Grid(GridFunction),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Closed(_) => write!(f, "Coefficient::Closed"),
            Coefficient::Grid(g) => write!(f, "Coefficient::Grid({})", g.mesh().id()),
        }
    }
}

impl Coefficient {
    pub fn closed(f: impl Fn(f64, Point) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Closed(Arc::new(f))
    }

    /// Node values on `mesh` at time `t`.
    pub fn sample(&self, mesh: &Mesh, t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            Coefficient::Closed(f) => {
                for (o, &x) in out.iter_mut().zip(mesh.points()) {
                    *o = f(t, x);
                }
            }
            Coefficient::Grid(g) => {
                if g.mesh().id() != mesh.id() || g.mesh().len() != mesh.len() {
                    return Err(Error::config("sampled coefficient lives on a different mesh"));
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = g.node(i)[0];
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, x: Point) -> f64 {
        match self {
            Coefficient::Closed(f) => f(t, x),
            Coefficient::Grid(g) => g.interpolate(x),
        }
    }

    /// Replaces point values by averages over the log-polar cell of `mesh`
    /// containing the point (3x3 Gauss rule in `(ln r, phi)`).
    ///
    /// Sampling at cell centers under-resolves data with steep, mostly
    /// cancelling lobes such as `u Δξ`. Radii in `radial_breaks` (distance
    /// from the wedge vertex) split the radial panel, so a kink of the data
    /// there costs nothing. Points outside the mesh keep point values.
    pub fn cell_averaged(self, mesh: &Mesh, radial_breaks: &[f64]) -> Result<Coefficient> {
        let (Some(p), Domain::Wedge(w)) = (mesh.polar(), mesh.domain()) else {
            return Err(Error::config("cell averaging needs a log-polar wedge mesh"));
        };
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let (p, w) = (p.clone(), *w);
        let breaks: Vec<f64> = radial_breaks
            .iter()
            .filter(|&&b| b > 0.0)
            .map(|&b| (b / p.r_min).ln() / p.log_step)
            .collect();
        let iso = w.isometry();
        let inner = self;
        Ok(Coefficient::closed(move |t, x| {
            let (r, phi) = w.local_polar(x);
            let s = (r / p.r_min).ln() / p.log_step;
            let a = phi / p.angle_step;
            if !(s >= 0.0 && s < p.n_radial as f64 && a >= 0.0 && a < p.n_angular as f64) {
                return inner.eval(t, x);
            }
            let (i, j) = (s.floor(), a.floor());
            let mut cuts = vec![i];
            cuts.extend(breaks.iter().copied().filter(|&b| b > i && b < i + 1.0));
            cuts.push(i + 1.0);
            cuts.sort_by(f64::total_cmp);
            let (mut num, mut den) = (0.0, 0.0);
            for panel in cuts.windows(2) {
                let (lo, hi) = (panel[0], panel[1]);
                for (&xi, &wi) in NODES.iter().zip(&WEIGHTS) {
                    let rq = p.r_min * ((0.5 * (lo + hi) + 0.5 * (hi - lo) * xi) * p.log_step).exp();
                    for (&xj, &wj) in NODES.iter().zip(&WEIGHTS) {
                        let pq = (j + 0.5 + 0.5 * xj) * p.angle_step;
                        let y = iso.from_canonical([rq * pq.cos(), rq * pq.sin()]);
                        let m = (hi - lo) * wi * wj * rq * rq;
                        num += m * inner.eval(t, y);
                        den += m;
                    }
                }
            }
            num / den
        }))
    }
}

/// Noise coefficients `g^1..g^K` with reproducible Wiener increments.
///
/// The increment `dw^k` over `[t_m, t_{m+1}]` on path `path` is a pure
/// function of `(seed, path, k, m)`: a ChaCha stream keyed by the seed and
/// path is positioned at a word offset derived from `(k, m)`, two words feed
/// a Box–Muller transform.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    coefficients: Vec<Coefficient>,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(coefficients: Vec<Coefficient>, seed: u64) -> Self {
        Self { coefficients, seed }
    }

    pub fn none() -> Self {
        Self { coefficients: Vec::new(), seed: 0 }
    }

    pub fn modes(&self) -> usize {
        self.coefficients.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn coefficients(&self) -> &[Coefficient] {
        &self.coefficients
    }

    fn stream(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        rng
    }

    fn normal_at(rng: &mut ChaCha8Rng, k: usize, m: usize) -> f64 {
        // four 32-bit words per normal; k gets 20 bits
        rng.set_word_pos((((m as u128) << 20) | k as u128) * 4);
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// `dw^k_m` for step length `dt`.
    pub fn increment(&self, path: u64, k: usize, m: usize, dt: f64) -> f64 {
        let mut rng = self.stream(path);
        dt.sqrt() * Self::normal_at(&mut rng, k, m)
    }

    /// All `K` increments of step `m`.
    pub fn increments(&self, path: u64, m: usize, dt: f64, out: &mut [f64]) {
        let mut rng = self.stream(path);
        for (k, o) in out.iter_mut().enumerate() {
            *o = dt.sqrt() * Self::normal_at(&mut rng, k, m);
        }
    }
}

/// Exponents of a weighted norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightParams {
    pub p: f64,
    pub theta: f64,
    /// Boundary exponent for mixed norms.
    pub big_theta: f64,
    pub m: usize,
}

impl WeightParams {
    pub fn new(p: f64, theta: f64, big_theta: f64, m: usize) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::domain(format!("p must be >= 2, got {p}")));
        }
        if !theta.is_finite() || !big_theta.is_finite() {
            return Err(Error::domain("weight exponents must be finite"));
        }
        Ok(Self { p, theta, big_theta, m })
    }

    pub fn check_mixed(&self) -> Result<()> {
        if !(self.big_theta > 1.0 && self.big_theta < self.p + 1.0) {
            return Err(Error::domain(format!(
                "boundary exponent must lie in (1, p+1) = (1, {}), got {}",
                self.p + 1.0,
                self.big_theta
            )));
        }
        Ok(())
    }
}

/// Highest derivative order supported by the least-squares stencils.
pub const MAX_DERIVATIVE_ORDER: usize = 3;
/// Monomials of the local fit (total degree <= 4).
const FIT_DEGREE: usize = 4;
const N_MONO: usize = 15;

/// Per-node least-squares weights: Taylor coefficient `c_beta` of the local
/// quartic fit is `sum_p w[beta][p] u(node_p)`.
#[derive(Debug, Clone)]
pub(crate) struct NodeStencil {
    pub nodes: Vec<usize>,
    pub weights: Vec<[f64; N_MONO]>,
    pub one_sided: bool,
}

fn monomials() -> [MultiIndex; N_MONO] {
    let v = multi_indices(FIT_DEGREE);
    let mut out = [[0u8; 2]; N_MONO];
    out.copy_from_slice(&v);
    out
}

/// Least-squares quartic fit weights for offsets `d` (node itself included).
fn ls_weights(offsets: &[Point]) -> Result<Vec<[f64; N_MONO]>> {
    let scale = offsets.iter().map(|d| d[0].hypot(d[1])).fold(0.0, f64::max);
    if !(scale > 0.0) || offsets.len() < N_MONO {
        return Err(Error::config("derivative stencil has too few distinct points"));
    }
    let monos = monomials();
    let a = DMatrix::from_fn(offsets.len(), N_MONO, |p, b| {
        let (x, y) = (offsets[p][0] / scale, offsets[p][1] / scale);
        x.powi(monos[b][0] as i32) * y.powi(monos[b][1] as i32)
    });
    let qr = a.qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..N_MONO).map(|k| r[(k, k)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|&d| d < 1e-9 * dmax) {
        return Err(Error::config("derivative stencil is degenerate"));
    }
    let pinv = r
        .solve_upper_triangular(&qr.q().transpose())
        .ok_or_else(|| Error::config("derivative stencil is degenerate"))?;
    Ok((0..offsets.len())
        .map(|p| {
            let mut w = [0.0; N_MONO];
            for (b, m) in monos.iter().enumerate() {
                w[b] = pinv[(b, p)] / scale.powi((m[0] + m[1]) as i32);
            }
            w
        })
        .collect())
}

/// Expansion of `xi^beta` with `xi = R^T d / r` into monomials of `d`:
/// `T[beta][alpha]` for `|alpha| = |beta|`.
fn rotation_table(angle: f64, r: f64) -> [[f64; N_MONO]; N_MONO] {
    let (s, c) = angle.sin_cos();
    // xi1 = (c d1 + s d2)/r, xi2 = (-s d1 + c d2)/r; polynomials as coefficient maps
    let monos = monomials();
    let idx = |m: MultiIndex| monos.iter().position(|&q| q == m).unwrap();
    let mut table = [[0.0; N_MONO]; N_MONO];
    for (b, beta) in monos.iter().enumerate() {
        let mut poly = [0.0; N_MONO];
        poly[0] = 1.0;
        let factors = std::iter::repeat_n([c / r, s / r], beta[0] as usize)
            .chain(std::iter::repeat_n([-s / r, c / r], beta[1] as usize));
        for [f1, f2] in factors {
            let mut next = [0.0; N_MONO];
            for (k, &coef) in poly.iter().enumerate() {
                if coef == 0.0 {
                    continue;
                }
                let m = monos[k];
                if (m[0] + m[1]) as usize >= FIT_DEGREE {
                    continue;
                }
                next[idx([m[0] + 1, m[1]])] += coef * f1;
                next[idx([m[0], m[1] + 1])] += coef * f2;
            }
            poly = next;
        }
        table[b] = poly;
    }
    table
}

/// Stencil provider for one mesh.
pub(crate) enum Stencils {
    /// Reference-frame weights per `(radial shift, angular shift)` pattern.
    Polar { patterns: Vec<NodeStencilRef> },
    Tensor { nodes: Vec<NodeStencil> },
}

pub(crate) struct NodeStencilRef {
    offsets: Vec<(isize, isize)>,
    weights: Vec<[f64; N_MONO]>,
}

fn window_start(i: usize, n: usize, half: usize) -> usize {
    let width = 2 * half + 1;
    if n <= width {
        0
    } else {
        i.saturating_sub(half).min(n - width)
    }
}

impl Stencils {
    pub(crate) fn build(mesh: &Mesh) -> Result<Self> {
        match mesh.layout() {
            Layout::Polar(p) => {
                if p.n_radial < 5 || p.n_angular < 5 {
                    return Err(Error::config("derivative stencils need at least 5 nodes per direction"));
                }
                let mut patterns = Vec::with_capacity(25);
                for si in 0..5usize {
                    for sj in 0..5usize {
                        // node sits at position si (sj) inside its 5-wide window
                        let mut offsets = Vec::with_capacity(25);
                        let mut pts = Vec::with_capacity(25);
                        for a in 0..5isize {
                            for b in 0..5isize {
                                let (da, db) = (a - si as isize, b - sj as isize);
                                let rho = (da as f64 * p.log_step).exp();
                                let ang = db as f64 * p.angle_step;
                                offsets.push((da, db));
                                pts.push([rho * ang.cos() - 1.0, rho * ang.sin()]);
                            }
                        }
                        patterns.push(NodeStencilRef { offsets, weights: ls_weights(&pts)? });
                    }
                }
                Ok(Stencils::Polar { patterns })
            }
            Layout::Tensor(t) => {
                let nx = t.xs.len();
                let ny = t.ys.len();
                let mut nodes = Vec::with_capacity(mesh.len());
                for (n, &(ix, iy)) in t.grid_of.iter().enumerate() {
                    let mut result = None;
                    for half in [2usize, 3, 4] {
                        let mut ids = Vec::new();
                        let mut pts = Vec::new();
                        for jy in iy.saturating_sub(half)..=(iy + half).min(ny - 1) {
                            for jx in ix.saturating_sub(half)..=(ix + half).min(nx - 1) {
                                if let Some(m) = t.node_of[jy * nx + jx] {
                                    ids.push(m);
                                    let q = mesh.points()[m];
                                    let x = mesh.points()[n];
                                    pts.push([q[0] - x[0], q[1] - x[1]]);
                                }
                            }
                        }
                        if pts.len() < 20 {
                            continue;
                        }
                        if let Ok(w) = ls_weights(&pts) {
                            let full = half == 2 && pts.len() == 25;
                            result = Some(NodeStencil { nodes: ids, weights: w, one_sided: !full });
                            break;
                        }
                    }
                    nodes.push(result.ok_or_else(|| {
                        Error::config(format!("no usable derivative stencil at node {n}; refine the mesh"))
                    })?);
                }
                Ok(Stencils::Tensor { nodes })
            }
        }
    }

    /// Stencil of node `n` with weights for Cartesian Taylor coefficients.
    pub(crate) fn node(&self, mesh: &Mesh, n: usize) -> NodeStencil {
        match self {
            Stencils::Tensor { nodes } => nodes[n].clone(),
            Stencils::Polar { patterns } => {
                let p = mesh.polar().expect("polar stencils on a polar mesh");
                let (i, j) = (n / p.n_angular, n % p.n_angular);
                let i0 = window_start(i, p.n_radial, 2);
                let j0 = window_start(j, p.n_angular, 2);
                let (si, sj) = (i - i0, j - j0);
                let pat = &patterns[si * 5 + sj];
                let start = match mesh.domain() {
                    Domain::Wedge(w) => w.start_angle(),
                    Domain::Polygon(_) => 0.0,
                };
                let table = rotation_table(start + p.angles[j], p.radii[i]);
                let nodes = pat
                    .offsets
                    .iter()
                    .map(|&(da, db)| p.index((i as isize + da) as usize, (j as isize + db) as usize))
                    .collect();
                let weights = pat
                    .weights
                    .iter()
                    .map(|w| {
                        let mut out = [0.0; N_MONO];
                        for b in 0..N_MONO {
                            if w[b] == 0.0 {
                                continue;
                            }
                            for a in 0..N_MONO {
                                out[a] += table[b][a] * w[b];
                            }
                        }
                        out
                    })
                    .collect();
                NodeStencil { nodes, weights, one_sided: si != 2 || sj != 2 }
            }
        }
    }
}

/// `D^alpha f` for all `|alpha| <= m`.
#[derive(Debug, Clone)]
pub struct Derivatives {
    order: usize,
    fields: Vec<GridFunction>,
    one_sided: Vec<bool>,
}

impl Derivatives {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, alpha: MultiIndex) -> Option<&GridFunction> {
        self.fields.iter().find(|g| g.alpha() == alpha)
    }

    pub fn fields(&self) -> &[GridFunction] {
        &self.fields
    }

    /// Nodes whose stencil is shifted off-center (mesh edges).
    pub fn one_sided(&self) -> &[bool] {
        &self.one_sided
    }

    /// Derivatives of a closed-form function (exact values on the mesh).
    pub fn from_closed_form(
        mesh: Arc<Mesh>,
        order: usize,
        f: impl Fn(MultiIndex, Point) -> f64,
    ) -> Self {
        let fields = multi_indices(order)
            .into_iter()
            .map(|a| GridFunction::from_fn(mesh.clone(), |x| f(a, x)).with_alpha(a))
            .collect();
        Self { order, fields, one_sided: vec![false; mesh.len()] }
    }
}

/// Cartesian derivatives up to order `m` from local least-squares quartic fits
/// on a 5x5 logical stencil (shifted one-sided at mesh edges).
pub fn discrete_derivatives(field: &GridFunction, m: usize) -> Result<Derivatives> {
    let op = DerivativeOperator::new(field.mesh().clone(), m)?;
    op.apply(field)
}

/// Precomputed derivative weights for repeated use on one mesh.
#[derive(Debug, Clone)]
pub struct DerivativeOperator {
    mesh: Arc<Mesh>,
    order: usize,
    alphas: Vec<MultiIndex>,
    /// Stencil node ids, `len`-strided; shorter stencils are padded
    /// with zero weights.
    nodes: Vec<usize>,
    /// `weights[(node * alphas + a) * len + q]`.
    weights: Vec<f64>,
    len: usize,
    one_sided: Vec<bool>,
}

impl DerivativeOperator {
    pub fn new(mesh: Arc<Mesh>, m: usize) -> Result<Self> {
        if m > MAX_DERIVATIVE_ORDER {
            return Err(Error::config(format!(
                "derivative order {m} exceeds the supported maximum {MAX_DERIVATIVE_ORDER}"
            )));
        }
        let stencils = mesh.stencils()?;
        let alphas = multi_indices(m);
        let monos = monomials();
        let n = mesh.len();
        let per_node: Vec<NodeStencil> = (0..n).map(|i| stencils.node(&mesh, i)).collect();
        let len = per_node.iter().map(|s| s.nodes.len()).max().unwrap_or(0);
        let na = alphas.len();
        let mut nodes = vec![0; n * len];
        let mut weights = vec![0.0; n * na * len];
        let mut one_sided = vec![false; n];
        for (i, st) in per_node.iter().enumerate() {
            one_sided[i] = st.one_sided;
            for (q, &id) in st.nodes.iter().enumerate() {
                nodes[i * len + q] = id;
            }
            for (a, alpha) in alphas.iter().enumerate() {
                let base = (i * na + a) * len;
                if *alpha == [0, 0] {
                    continue;
                }
                let b = monos.iter().position(|x| x == alpha).unwrap();
                let fac = factorial(alpha[0]) * factorial(alpha[1]);
                for (q, w) in st.weights.iter().enumerate() {
                    weights[base + q] = fac * w[b];
                }
            }
        }
        Ok(Self { mesh, order: m, alphas, nodes, weights, len, one_sided })
    }

    pub fn alphas(&self) -> &[MultiIndex] {
        &self.alphas
    }

    /// Writes `D^alpha f` for every multi-index into `out[a]` (scalar fields).
    pub fn apply_values(&self, f: &[f64], out: &mut [Vec<f64>]) {
        let na = self.alphas.len();
        for (a, alpha) in self.alphas.iter().enumerate() {
            let o = &mut out[a];
            if *alpha == [0, 0] {
                o.copy_from_slice(f);
                continue;
            }
            for (i, oi) in o.iter_mut().enumerate() {
                let ids = &self.nodes[i * self.len..(i + 1) * self.len];
                let w = &self.weights[(i * na + a) * self.len..(i * na + a + 1) * self.len];
                *oi = ids.iter().zip(w).map(|(&q, &wq)| wq * f[q]).sum();
            }
        }
    }

    pub fn apply(&self, field: &GridFunction) -> Result<Derivatives> {
        if !Arc::ptr_eq(field.mesh(), &self.mesh) && field.mesh().id() != self.mesh.id() {
            return Err(Error::config("derivative operator applied to a field on another mesh"));
        }
        let k = field.components();
        let n = self.mesh.len();
        let mut out: Vec<Vec<f64>> = self.alphas.iter().map(|_| vec![0.0; n * k]).collect();
        let mut comp = vec![0.0; n];
        let mut buf: Vec<Vec<f64>> = self.alphas.iter().map(|_| vec![0.0; n]).collect();
        for c in 0..k {
            for (i, v) in comp.iter_mut().enumerate() {
                *v = field.values()[i * k + c];
            }
            self.apply_values(&comp, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                for (i, v) in b.iter().enumerate() {
                    o[i * k + c] = *v;
                }
            }
        }
        let fields = self
            .alphas
            .iter()
            .zip(out)
            .map(|(&a, v)| GridFunction { mesh: self.mesh.clone(), components: k, values: v, alpha: a })
            .collect();
        Ok(Derivatives { order: self.order, fields, one_sided: self.one_sided.clone() })
    }
}

/// Laplacian from the least-squares second derivatives.
pub fn discrete_laplacian(field: &GridFunction) -> Result<GridFunction> {
    let d = discrete_derivatives(field, 2)?;
    let a = d.get([2, 0]).unwrap();
    let b = d.get([0, 2]).unwrap();
    Ok(a.add(b)?.with_alpha([0, 0]))
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::domain(format!("norm exponent must be >= 1, got {p}")));
    }
    Ok(())
}

/// `sum_i w_i |f_i|^p rho_vertex_i^{theta-2}` (the p-th power of the norm).
pub fn weighted_lp_power(field: &GridFunction, p: f64, theta: f64) -> Result<f64> {
    check_p(p)?;
    let mesh = field.mesh();
    let terms: Vec<f64> = (0..mesh.len())
        .map(|i| {
            let v = field.l2_at(i);
            if v == 0.0 {
                0.0
            } else {
                mesh.weights()[i] * v.powf(p) * mesh.rho_vertex()[i].powf(theta - 2.0)
            }
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `(int |f|^p rho_vertex^{theta-2} dx)^{1/p}`.
pub fn weighted_lp_norm(field: &GridFunction, p: f64, theta: f64) -> Result<f64> {
    Ok(weighted_lp_power(field, p, theta)?.powf(1.0 / p))
}

/// `(sum_{|alpha|<=n} ||rho_vertex^{|alpha|} D^alpha f||^p)^{1/p}`.
pub fn kondratiev_norm(derivs: &Derivatives, n: usize, p: f64, theta: f64) -> Result<f64> {
    check_p(p)?;
    if n > derivs.order() {
        return Err(Error::config(format!(
            "Kondratiev norm of order {n} needs derivatives up to {n}, have {}",
            derivs.order()
        )));
    }
    let mut total = 0.0;
    for alpha in multi_indices(n) {
        let g = derivs.get(alpha).ok_or_else(|| Error::config("missing derivative"))?;
        let k = (alpha[0] + alpha[1]) as f64;
        // rho^{k p} folds into the weight exponent
        total += weighted_lp_power(g, p, theta + k * p)?;
    }
    Ok(total.powf(1.0 / p))
}

/// Mixed norm value plus a count of boundary cells where the weight is not
/// integrable in the normal direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixedNorm {
    pub value: f64,
    pub nonintegrable_cells: usize,
}

/// `(sum_{|alpha|<=m+1} int |rho^{|alpha|-1} D^alpha u|^p rho_o^{theta-2} (rho/rho_o)^{Theta-2} dx)^{1/p}`.
///
/// On cells touching the boundary the factor `rho^e`, with
/// `e = p max(|alpha|-1, 0) + Theta - 2`, is replaced by its exact average
/// over the normal extent `[0, 2 rho_node]`, i.e. scaled by `2^e/(e+1)`.
pub fn mixed_norm(derivs: &Derivatives, params: &WeightParams) -> Result<MixedNorm> {
    params.check_mixed()?;
    let p = params.p;
    if derivs.order() < params.m + 1 {
        return Err(Error::config(format!(
            "mixed norm with m = {} needs derivatives up to {}",
            params.m,
            params.m + 1
        )));
    }
    let mesh = derivs.fields()[0].mesh().clone();
    let mut nonintegrable = 0;
    let mut total = 0.0;
    for alpha in multi_indices(params.m + 1) {
        let g = derivs.get(alpha).ok_or_else(|| Error::config("missing derivative"))?;
        let k = (alpha[0] + alpha[1]) as usize;
        let powers: Vec<f64> = (0..mesh.len()).map(|i| g.l2_at(i).powf(p)).collect();
        let term = mixed_term(&mesh, &powers, k, p, params.theta, params.big_theta);
        nonintegrable += term.nonintegrable_cells;
        total += term.value;
    }
    Ok(MixedNorm { value: total.powf(1.0 / p), nonintegrable_cells: nonintegrable })
}

/// One multi-index term of the mixed norm, to the p-th power:
/// `sum_i w_i a_i rho_i^{p(k-1)} rho_o^{theta-2} (rho/rho_o)^{Theta-2}` for
/// per-node values `a_i >= 0` standing for `|D^alpha u|^p` (or its mean).
///
/// `Theta` is not range-checked, so this also serves refinement probes
/// outside the admissible interval. Boundary cells get the same correction
/// as in [`mixed_norm`] whenever the normal weight is integrable.
pub fn mixed_term(mesh: &Mesh, a: &[f64], k: usize, p: f64, theta: f64, big_theta: f64) -> MixedNorm {
    let kf = k as f64;
    let e = p * (kf - 1.0).max(0.0) + big_theta - 2.0;
    let correction = if e > -1.0 { 2f64.powf(e) / (e + 1.0) } else { 1.0 };
    let terms: Vec<f64> = (0..mesh.len())
        .map(|i| {
            if a[i] == 0.0 {
                return 0.0;
            }
            let rho = mesh.rho()[i];
            let rv = mesh.rho_vertex()[i];
            let mut w = mesh.weights()[i] * a[i] * rho.powf(p * (kf - 1.0)) * rv.powf(theta - 2.0)
                * (rho / rv).powf(big_theta - 2.0);
            if mesh.boundary_adjacent()[i] {
                w *= correction;
            }
            w
        })
        .collect();
    let nonintegrable = if e <= -1.0 { mesh.boundary_adjacent().iter().filter(|&&b| b).count() } else { 0 };
    MixedNorm { value: pairwise_sum(&terms), nonintegrable_cells: nonintegrable }
}

/// `sum_i w_i a_i rho_o^{theta-2}` for per-node values `a_i` (already raised
/// to the p-th power).
pub fn weighted_sum(mesh: &Mesh, a: &[f64], theta: f64) -> f64 {
    let terms: Vec<f64> = (0..mesh.len())
        .map(|i| if a[i] == 0.0 { 0.0 } else { mesh.weights()[i] * a[i] * mesh.rho_vertex()[i].powf(theta - 2.0) })
        .collect();
    pairwise_sum(&terms)
}

/// Transition width exponent of the dyadic cutoff (support `[2^{-1/4}, 2^{9/4}]`).
pub const DYADIC_EPS: f64 = 0.25;

/// Radial cutoff `eta`: 1 on `[1, 4]`, 0 outside `[2^{-eps}, 2^{2+eps}]`, C^2.
pub fn dyadic_cutoff(s: f64) -> f64 {
    let lo = 2f64.powf(-DYADIC_EPS);
    let hi = 2f64.powf(2.0 + DYADIC_EPS);
    if s <= lo || s >= hi {
        0.0
    } else if s < 1.0 {
        smoothstep((s - lo) / (1.0 - lo)).0
    } else if s <= 4.0 {
        1.0
    } else {
        1.0 - smoothstep((s - 4.0) / (hi - 4.0)).0
    }
}

/// `zeta(r) = sum_n e^{n(theta-2)} eta^p(e^{-n} r)`.
pub fn dyadic_weight(r: f64, p: f64, theta: f64) -> f64 {
    if !(r > 0.0) {
        return 0.0;
    }
    let lo = 2f64.powf(-DYADIC_EPS);
    let hi = 2f64.powf(2.0 + DYADIC_EPS);
    let n_min = (r.ln() - hi.ln()).floor() as i64;
    let n_max = (r.ln() - lo.ln()).ceil() as i64;
    (n_min..=n_max)
        .map(|n| {
            let e = dyadic_cutoff((-(n as f64)).exp() * r);
            if e == 0.0 {
                0.0
            } else {
                ((n as f64) * (theta - 2.0)).exp() * e.powf(p)
            }
        })
        .sum()
}

/// Result of [`dyadic_norm`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadicNorm {
    /// `S = sum_n e^{n theta} ||eta(|.|) u(e^n .)||_p^p`.
    pub sum: f64,
    /// `||u||^p` with weight `|x|^{theta-2}` by direct quadrature.
    pub direct: f64,
    pub ratio: f64,
    /// Indices `n` with a nonzero contribution.
    pub active: Vec<i32>,
}

/// Quadrature for [`dyadic_norm`] on a wedge: `u` is evaluated on
/// log-polar midpoint grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicQuadrature {
    pub radial: usize,
    pub angular: usize,
    /// Radial support `[a, b]` of `u`.
    pub support: (f64, f64),
}

/// Dyadic decomposition of the weighted norm on a wedge with opening
/// `kappa0`; `u` is given in the canonical frame.
pub fn dyadic_norm(
    u: impl Fn(Point) -> f64,
    kappa0: f64,
    p: f64,
    theta: f64,
    quad: &DyadicQuadrature,
) -> Result<DyadicNorm> {
    check_p(p)?;
    let (a, b) = quad.support;
    if !(a > 0.0 && b > a) {
        return Err(Error::config("dyadic quadrature needs a support 0 < a < b"));
    }
    let lo = 2f64.powf(-DYADIC_EPS);
    let hi = 2f64.powf(2.0 + DYADIC_EPS);
    let polar_integral = |r0: f64, r1: f64, f: &dyn Fn(f64, f64) -> f64| -> f64 {
        let h = (r1 / r0).ln() / quad.radial as f64;
        let hp = kappa0 / quad.angular as f64;
        let mut terms = Vec::with_capacity(quad.radial * quad.angular);
        for i in 0..quad.radial {
            let r = r0 * ((i as f64 + 0.5) * h).exp();
            for j in 0..quad.angular {
                let phi = (j as f64 + 0.5) * hp;
                // area element r^2 ds dphi in s = ln r
                terms.push(f(r, phi) * r * r * h * hp);
            }
        }
        pairwise_sum(&terms)
    };
    let n_min = ((a / hi).ln()).floor() as i32;
    let n_max = ((b / lo).ln()).ceil() as i32;
    let mut sum = 0.0;
    let mut active = Vec::new();
    for n in n_min..=n_max {
        let s = (n as f64).exp();
        // x ranges over supp eta and e^n x must meet [a, b]
        let r0 = lo.max(a / s);
        let r1 = hi.min(b / s);
        if r1 <= r0 {
            continue;
        }
        let integral = polar_integral(r0, r1, &|r, phi| {
            let v = dyadic_cutoff(r) * u([s * r * phi.cos(), s * r * phi.sin()]);
            v.abs().powf(p)
        });
        if integral > 0.0 {
            active.push(n);
        }
        sum += (n as f64 * theta).exp() * integral;
    }
    let direct = polar_integral(a, b, &|r, phi| u([r * phi.cos(), r * phi.sin()]).abs().powf(p) * r.powf(theta - 2.0));
    let ratio = if direct > 0.0 { sum / direct } else { 0.0 };
    Ok(DyadicNorm { sum, direct, ratio, active })
}

/// `||rho^{-1} f||_p / ||grad f||_p` for a field vanishing on the boundary.
pub fn hardy_check(derivs: &Derivatives, p: f64) -> Result<f64> {
    check_p(p)?;
    let f = derivs.get([0, 0]).ok_or_else(|| Error::config("missing field values"))?;
    let fx = derivs.get([1, 0]).ok_or_else(|| Error::config("Hardy check needs first derivatives"))?;
    let fy = derivs.get([0, 1]).ok_or_else(|| Error::config("Hardy check needs first derivatives"))?;
    let mesh = f.mesh();
    let n = mesh.len();
    let fmax = (0..n).map(|i| f.l2_at(i)).fold(0.0, f64::max);
    if fmax == 0.0 {
        return Ok(0.0);
    }
    let gmax = (0..n).map(|i| fx.l2_at(i).hypot(fy.l2_at(i))).fold(0.0, f64::max);
    for i in 0..n {
        if mesh.boundary_adjacent()[i] && f.l2_at(i) > 2.0 * mesh.rho()[i] * gmax + 1e-12 * fmax {
            return Err(Error::precondition(format!(
                "field does not vanish at the boundary (node {i}, value {})",
                f.l2_at(i)
            )));
        }
    }
    let lhs: Vec<f64> = (0..n).map(|i| mesh.weights()[i] * (f.l2_at(i) / mesh.rho()[i]).powf(p)).collect();
    let rhs: Vec<f64> = (0..n)
        .map(|i| mesh.weights()[i] * fx.l2_at(i).hypot(fy.l2_at(i)).powf(p))
        .collect();
    Ok((pairwise_sum(&lhs) / pairwise_sum(&rhs)).powf(1.0 / p))
}

/// One CSV row of a norm evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRecord {
    pub norm_kind: String,
    pub p: f64,
    pub theta: f64,
    #[serde(rename = "Theta")]
    pub big_theta: Option<f64>,
    pub m: usize,
    pub value: f64,
    pub mesh_id: String,
}

impl NormRecord {
    pub const CSV_HEADER: &'static str = "norm_kind,p,theta,Theta,m,value,mesh_id";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.17e},{}",
            self.norm_kind,
            self.p,
            self.theta,
            self.big_theta.map_or(String::new(), |t| t.to_string()),
            self.m,
            self.value,
            self.mesh_id
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_polar_mesh, build_polygon_mesh, AngularDomain, Polygon};
    use approx::assert_relative_eq;

    fn quadrant_mesh(r0: f64, r1: f64, nr: usize, na: usize) -> Arc<Mesh> {
        let w = AngularDomain::canonical(0.5 * PI).unwrap();
        Arc::new(build_polar_mesh(&w, r0, r1, nr, na).unwrap())
    }

    #[test]
    fn linear_and_bilinear_fields_are_exact() {
        let m = quadrant_mesh(0.1, 2.0, 40, 24);
        let d = discrete_derivatives(&GridFunction::from_fn(m.clone(), |x| x[0]), 1).unwrap();
        for i in 0..m.len() {
            assert!((d.get([1, 0]).unwrap().values()[i] - 1.0).abs() < 1e-10);
            assert!(d.get([0, 1]).unwrap().values()[i].abs() < 1e-10);
        }
        let d = discrete_derivatives(&GridFunction::from_fn(m.clone(), |x| 2.0 * x[0] * x[1]), 2).unwrap();
        for i in 0..m.len() {
            assert!((d.get([1, 1]).unwrap().values()[i] - 2.0).abs() < 1e-8);
        }
        assert!(d.one_sided().iter().any(|&b| b));
        assert!(discrete_derivatives(&GridFunction::from_fn(m, |x| x[0]), 4).is_err());
    }

    #[test]
    fn rotated_wedge_derivatives() {
        let w = AngularDomain::new([0.3, -0.2], 2.0, 1.1).unwrap();
        let m = Arc::new(build_polar_mesh(&w, 0.2, 3.0, 32, 16).unwrap());
        let f = GridFunction::from_fn(m.clone(), |x| x[0] * x[0] * x[1] - 3.0 * x[1]);
        let d = discrete_derivatives(&f, 3).unwrap();
        for (i, x) in m.points().iter().enumerate() {
            assert!((d.get([1, 0]).unwrap().values()[i] - 2.0 * x[0] * x[1]).abs() < 1e-8);
            assert!((d.get([0, 1]).unwrap().values()[i] - (x[0] * x[0] - 3.0)).abs() < 1e-8);
            assert!((d.get([2, 1]).unwrap().values()[i] - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn harmonic_field_has_small_laplacian() {
        let w = AngularDomain::canonical(1.5 * PI).unwrap();
        let m = Arc::new(build_polar_mesh(&w, 1e-2, 2.0, 256, 256).unwrap());
        let beta = 2.0 / 3.0;
        let u = GridFunction::from_fn(m.clone(), |x| {
            let (r, phi) = w.local_polar(x);
            r.powf(beta) * (beta * phi).sin()
        });
        let lap = discrete_laplacian(&u).unwrap();
        let worst = (0..m.len())
            .filter(|&i| m.rho_vertex()[i] > 0.1)
            .map(|i| lap.values()[i].abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "max |lap| = {worst}");
    }

    #[test]
    fn polygon_mesh_derivatives() {
        let l = Polygon::new(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]], 0.1)
            .unwrap();
        let m = Arc::new(build_polygon_mesh(&l, 32, 1.3).unwrap());
        let f = GridFunction::from_fn(m.clone(), |x| x[0] * x[1] + x[1] * x[1] * x[1]);
        let d = discrete_derivatives(&f, 2).unwrap();
        for (i, x) in m.points().iter().enumerate() {
            let e = (d.get([0, 2]).unwrap().values()[i] - 6.0 * x[1]).abs();
            assert!(e < 1e-7, "{e} at {x:?} one-sided {}", d.one_sided()[i]);
            assert!((d.get([1, 1]).unwrap().values()[i] - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn sector_annulus_norms() {
        let m = quadrant_mesh(1.0, 2.0, 64, 64);
        let one = GridFunction::from_fn(m.clone(), |_| 1.0);
        let v = weighted_lp_norm(&one, 2.0, 2.0).unwrap();
        assert_relative_eq!(v, (0.75 * PI).sqrt(), max_relative = 1e-3);
        assert_relative_eq!(v, 1.53499, max_relative = 1e-3);
        let zero = GridFunction::zeros(m, 1);
        assert_eq!(weighted_lp_norm(&zero, 2.0, 2.0).unwrap(), 0.0);
        let eps = (-2.0f64).exp();
        let m = quadrant_mesh(eps, 1.0, 64, 32);
        let f = GridFunction::from_fn(m.clone(), |x| 1.0 / x[0].hypot(x[1]));
        assert_relative_eq!(weighted_lp_norm(&f, 2.0, 2.0).unwrap(), 1.77245, max_relative = 5e-3);
    }

    #[test]
    fn weighted_norm_dilation_scaling() {
        let m = quadrant_mesh(1e-3, 40.0, 200, 32);
        let bump = |x: Point| {
            let r = x[0].hypot(x[1]);
            if r < 2.0 { (1.0 - (r / 2.0).powi(2)).powi(3) * x[0] * x[1] } else { 0.0 }
        };
        let lambda = 2.0;
        for &theta in &[1.0, 2.0, 3.5] {
            let a = weighted_lp_power(&GridFunction::from_fn(m.clone(), bump), 2.0, theta).unwrap();
            let b = weighted_lp_power(&GridFunction::from_fn(m.clone(), |x| bump([lambda * x[0], lambda * x[1]])), 2.0, theta)
                .unwrap();
            assert_relative_eq!(b, lambda.powf(-theta) * a, max_relative = 1e-3);
        }
    }

    #[test]
    fn norms_are_homogeneous() {
        let m = quadrant_mesh(0.1, 2.0, 32, 16);
        let f = GridFunction::from_fn(m.clone(), |x| (x[0] - 0.3).sin() * x[1]);
        let g = GridFunction::from_fn(m, |x| x[0] * x[0] - x[1]);
        let nf = weighted_lp_norm(&f, 3.0, 1.5).unwrap();
        assert_relative_eq!(weighted_lp_norm(&f.scaled(-2.5), 3.0, 1.5).unwrap(), 2.5 * nf, max_relative = 1e-13);
        let ng = weighted_lp_norm(&g, 3.0, 1.5).unwrap();
        assert!(weighted_lp_norm(&f.add(&g).unwrap(), 3.0, 1.5).unwrap() <= nf + ng);
    }

    #[test]
    fn kondratiev_order_zero_is_weighted_lp() {
        let m = quadrant_mesh(0.1, 2.0, 32, 16);
        let f = GridFunction::from_fn(m, |x| x[0] * x[1]);
        let d = discrete_derivatives(&f, 1).unwrap();
        assert_eq!(kondratiev_norm(&d, 0, 2.0, 1.3).unwrap(), weighted_lp_norm(&f, 2.0, 1.3).unwrap());
        assert!(kondratiev_norm(&d, 2, 2.0, 1.3).is_err());
    }

    #[test]
    fn mixed_norm_at_theta_two_matches_direct_quadrature() {
        let m = quadrant_mesh(0.2, 2.0, 48, 24);
        let u = GridFunction::from_fn(m.clone(), |x| x[0] * x[1] * (2.0 - x[0].hypot(x[1])));
        let d = discrete_derivatives(&u, 1).unwrap();
        let params = WeightParams::new(2.0, 1.7, 2.0, 0).unwrap();
        let got = mixed_norm(&d, &params).unwrap().value;
        let mut direct = 0.0;
        for i in 0..m.len() {
            let rho = m.rho()[i];
            let rv = m.rho_vertex()[i];
            let w = m.weights()[i] * rv.powf(-0.3);
            direct += w * (u.values()[i] / rho).powi(2);
            direct += w * (d.get([1, 0]).unwrap().values()[i].powi(2) + d.get([0, 1]).unwrap().values()[i].powi(2));
        }
        assert_relative_eq!(got, direct.sqrt(), max_relative = 1e-10);
        let bad = WeightParams::new(2.0, 1.7, 3.5, 0).unwrap();
        assert!(mixed_norm(&d, &bad).is_err());
    }

    #[test]
    fn mixed_norm_of_distance_function_matches_fine_quadrature() {
        // u = rho on the quadrant annulus 1 < r < 2: |u/rho| = 1, |grad rho| = 1
        let value = |n: usize| {
            let m = quadrant_mesh(1.0, 2.0, n, n);
            let d = Derivatives::from_closed_form(m.clone(), 1, |a, x| {
                let rho = x[0].min(x[1]);
                match a {
                    [0, 0] => rho,
                    [1, 0] => (x[0] < x[1]) as u8 as f64,
                    [0, 1] => (x[1] <= x[0]) as u8 as f64,
                    _ => 0.0,
                }
            });
            mixed_norm(&d, &WeightParams::new(2.0, 2.0, 2.0, 0).unwrap()).unwrap().value
        };
        // exact: 2 * area
        let exact = (2.0 * 0.75 * PI).sqrt();
        assert_relative_eq!(value(32), exact, max_relative = 5e-3);
        assert_relative_eq!(value(512), exact, max_relative = 1e-4);
    }

    #[test]
    fn dyadic_weight_is_log_periodic() {
        for &theta in &[1.0, 2.0, 3.3] {
            for &r in &[0.01, 0.7, 1.3, 25.0] {
                let a = dyadic_weight(r, 2.0, theta);
                let b = dyadic_weight(std::f64::consts::E * r, 2.0, theta);
                assert_relative_eq!(b, (theta - 2.0).exp() * a, max_relative = 1e-12);
            }
        }
        assert_eq!(dyadic_cutoff(2.0), 1.0);
        assert_eq!(dyadic_cutoff(0.8), 0.0);
        assert_eq!(dyadic_cutoff(4.8), 0.0);
    }

    #[test]
    fn dyadic_equivalence_on_bumps() {
        let quad = |c: f64| DyadicQuadrature { radial: 256, angular: 16, support: (0.5 * c, 1.5 * c) };
        let mut ratios = Vec::new();
        for k in -3..=3 {
            let c = 2f64.powi(k);
            let bump = move |x: Point| {
                let r = x[0].hypot(x[1]);
                let s = (r - c) / (0.5 * c);
                if s.abs() < 1.0 { (1.0 - s * s).powi(3) * (2.0 * x[1].atan2(x[0])).sin() } else { 0.0 }
            };
            for &theta in &[1.0, 2.0, 3.0] {
                let d = dyadic_norm(bump, 0.5 * PI, 2.0, theta, &quad(c)).unwrap();
                ratios.push(d.ratio);
            }
        }
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi / lo <= 10.0, "{lo} {hi}");
        let ring = |x: Point| {
            let r = x[0].hypot(x[1]);
            if r > 1.0 && r < 4.0 { 1.0 } else { 0.0 }
        };
        let d = dyadic_norm(ring, 0.5 * PI, 2.0, 2.0, &DyadicQuadrature { radial: 64, angular: 8, support: (1.0, 4.0) })
            .unwrap();
        assert!(d.active.iter().all(|n| n.abs() <= 3));
    }

    #[test]
    fn hardy_ratios() {
        let m = quadrant_mesh(0.5, 2.0, 64, 64);
        let bump = |x: Point| {
            let r = x[0].hypot(x[1]);
            let s = (r - 1.25) / 0.7;
            let b = if s.abs() < 1.0 { (1.0 - s * s).powi(3) } else { 0.0 };
            x[0].min(x[1]) * b
        };
        let d = discrete_derivatives(&GridFunction::from_fn(m.clone(), bump), 1).unwrap();
        let ratio = hardy_check(&d, 2.0).unwrap();
        assert!(ratio > 0.0 && ratio <= 5.0, "{ratio}");
        let d = discrete_derivatives(&GridFunction::from_fn(m.clone(), |_| 1.0), 1).unwrap();
        assert!(matches!(hardy_check(&d, 2.0), Err(Error::Precondition(_))));
        let d = discrete_derivatives(&GridFunction::zeros(m, 1), 1).unwrap();
        assert_eq!(hardy_check(&d, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn quadrature_converges_at_second_order() {
        let f = |x: Point| {
            let r = x[0].hypot(x[1]);
            (-(r - 1.0).powi(2) * 8.0).exp() * x[0]
        };
        let exact = {
            let m = quadrant_mesh(0.05, 4.0, 2048, 1024);
            weighted_lp_power(&GridFunction::from_fn(m, f), 2.0, 2.0).unwrap()
        };
        let err = |n: usize| {
            let m = quadrant_mesh(0.05, 4.0, n, n / 2);
            (weighted_lp_power(&GridFunction::from_fn(m, f), 2.0, 2.0).unwrap() - exact).abs()
        };
        let (e1, e2, e3) = (err(64), err(128), err(256));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn noise_is_reproducible_and_order_independent() {
        let spec = NoiseSpec::new(vec![Coefficient::closed(|_, _| 1.0); 3], 42);
        let a = spec.increment(5, 2, 17, 0.01);
        let mut all = [0.0; 3];
        spec.increments(5, 17, 0.01, &mut all);
        assert_eq!(a, all[2]);
        assert_ne!(spec.increment(6, 2, 17, 0.01), a);
        // sample moments
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|m| spec.increment(0, 0, m, 1.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }

    #[test]
    fn interpolation_reproduces_smooth_fields() {
        let m = quadrant_mesh(0.1, 2.0, 128, 64);
        let g = GridFunction::from_fn(m, |x| x[0] * x[1]);
        let v = g.interpolate([0.7, 0.4]);
        assert!((v - 0.28).abs() < 2e-3, "{v}");
        assert_eq!(g.interpolate([-0.5, 0.5]), 0.0);
    }

    #[test]
    fn time_grids() {
        let g = TimeGrid::geometric(1.0, 10, 1.3).unwrap();
        assert_eq!(g.steps(), 10);
        assert!((g.final_time() - 1.0).abs() < 1e-15);
        assert!(g.dt(0) < g.dt(9));
        assert!(g.uniform_step().is_none());
        assert!(TimeGrid::uniform(1.0, 4).unwrap().uniform_step().is_some());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn cell_averages_integrate_kinked_data() {
        let m = quadrant_mesh(0.1, 3.0, 48, 8);
        let ramp = |_t: f64, x: Point| (norm_of(x) - 1.0).max(0.0);
        let exact = 0.5 * PI * (9.0 - 4.5 - (1.0 / 3.0 - 0.5));
        let integral = |c: Coefficient| {
            let mut buf = vec![0.0; m.len()];
            c.sample(&m, 0.0, &mut buf).unwrap();
            buf.iter().zip(m.weights()).map(|(a, w)| a * w).sum::<f64>()
        };
        let split = integral(Coefficient::closed(ramp).cell_averaged(&m, &[1.0]).unwrap());
        let plain = integral(Coefficient::closed(ramp).cell_averaged(&m, &[]).unwrap());
        assert_relative_eq!(split, exact, max_relative = 1e-9);
        assert!((plain - exact).abs() > 10.0 * (split - exact).abs());
        let poly = build_polygon_mesh(&Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 0.1).unwrap(), 8, 1.0).unwrap();
        assert!(Coefficient::closed(ramp).cell_averaged(&poly, &[]).is_err());
    }

    fn norm_of(x: Point) -> f64 {
        x[0].hypot(x[1])
    }
}
