//! Dirichlet heat kernel of a wedge, its gradient in the second argument,
//! the free kernel, and image-method kernels for the half-plane and quadrant.
//!
//! All points are given in the canonical frame of the wedge
//! `{0 < phi < kappa0}` with the vertex at the origin.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{norm, sub, Point};
use crate::specialfn::scaled_i;

/// Default hard cap on the number of angular modes.
pub const MODE_CAP: usize = 10_000;
/// Default relative truncation tolerance.
pub const DEFAULT_TOL: f64 = 1e-13;

const FALLBACK_Z: f64 = 5e4;
const FALLBACK_SEPARATION: f64 = 50.0;

/// Arguments of the wedge kernel `Gamma(t, x, y)` in polar form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelQuery {
    pub kappa0: f64,
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub r_src: f64,
    pub phi_src: f64,
    pub tol: f64,
    pub mode_cap: usize,
}

fn to_polar(p: Point) -> (f64, f64) {
    let r = norm(p);
    let mut phi = p[1].atan2(p[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    (r, phi)
}

impl KernelQuery {
    /// Query from Cartesian points in the canonical frame.
    ///
    /// Points on an edge or at the vertex are accepted (the kernel vanishes
    /// there); points outside the closed wedge are rejected.
    pub fn new(kappa0: f64, t: f64, x: Point, y: Point) -> Result<Self> {
        let (r, phi) = to_polar(x);
        let (r_src, phi_src) = to_polar(y);
        // the positive x-axis may come back as 2pi after rounding
        let fix = |phi: f64, r: f64| if r == 0.0 || phi > kappa0 && phi > 2.0 * PI - 1e-14 { 0.0 } else { phi };
        Self::from_polar(kappa0, t, (r, fix(phi, r)), (r_src, fix(phi_src, r_src)))
    }

    pub fn from_polar(kappa0: f64, t: f64, x: (f64, f64), y: (f64, f64)) -> Result<Self> {
        if !(kappa0 > 0.0 && kappa0 < 2.0 * PI) {
            return Err(Error::domain(format!("opening angle must lie in (0, 2pi), got {kappa0}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("kernel time must be positive, got {t}")));
        }
        for (r, phi) in [x, y] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::domain(format!("radius must be finite and >= 0, got {r}")));
            }
            let slack = 1e-14 * kappa0;
            if !(phi >= -slack && phi <= kappa0 + slack) {
                return Err(Error::domain(format!("angle {phi} outside the closed wedge [0, {kappa0}]")));
            }
        }
        Ok(Self {
            kappa0,
            t,
            r: x.0,
            phi: x.1.clamp(0.0, kappa0),
            r_src: y.0,
            phi_src: y.1.clamp(0.0, kappa0),
            tol: DEFAULT_TOL,
            mode_cap: MODE_CAP,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_mode_cap(mut self, cap: usize) -> Self {
        self.mode_cap = cap;
        self
    }

    pub fn x(&self) -> Point {
        [self.r * self.phi.cos(), self.r * self.phi.sin()]
    }

    pub fn y(&self) -> Point {
        [self.r_src * self.phi_src.cos(), self.r_src * self.phi_src.sin()]
    }

    fn on_boundary(&self) -> bool {
        self.r == 0.0
            || self.r_src == 0.0
            || self.phi <= 0.0
            || self.phi >= self.kappa0
            || self.phi_src <= 0.0
            || self.phi_src >= self.kappa0
    }

    fn dist_to_boundary(&self, r: f64, phi: f64) -> f64 {
        let edge = |a: f64| if a <= 0.5 * PI { r * a.sin() } else { r };
        edge(phi).min(edge(self.kappa0 - phi))
    }

    /// Whether the small-time flat-boundary approximation is used.
    pub fn uses_fallback(&self) -> bool {
        let z = self.r * self.r_src / (2.0 * self.t);
        z > FALLBACK_Z
            && self.dist_to_boundary(self.r, self.phi) * self.dist_to_boundary(self.r_src, self.phi_src) / self.t
                > FALLBACK_SEPARATION
    }
}

/// Kernel value together with the number of modes summed (0 for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    pub value: f64,
    pub modes: usize,
}

/// Gaussian density `(4 pi t)^{-1} exp(-|x-y|^2 / 4t)`.
pub fn heat_kernel_free(t: f64, x: Point, y: Point) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("kernel time must be positive, got {t}")));
    }
    Ok(free(t, x, y))
}

#[inline]
fn free(t: f64, x: Point, y: Point) -> f64 {
    let d = sub(x, y);
    (-(d[0] * d[0] + d[1] * d[1]) / (4.0 * t)).exp() / (4.0 * PI * t)
}

/// Reflection of `y` across the line through the origin at angle `a`.
fn reflect(y: Point, a: f64) -> Point {
    let (s, c) = (2.0 * a).sin_cos();
    [c * y[0] + s * y[1], s * y[0] - c * y[1]]
}

/// Edge line (angle 0 or kappa0) nearest to the pair of points.
fn nearest_edge(q: &KernelQuery) -> f64 {
    if q.phi + q.phi_src <= 2.0 * q.kappa0 - q.phi - q.phi_src {
        0.0
    } else {
        q.kappa0
    }
}

/// `Gamma(t, x, y)`.
pub fn green_wedge(q: &KernelQuery) -> Result<f64> {
    green_wedge_eval(q).map(|v| v.value)
}

/// `Gamma(t, x, y)` with the number of modes used.
pub fn green_wedge_eval(q: &KernelQuery) -> Result<KernelValue> {
    if q.on_boundary() {
        return Ok(KernelValue { value: 0.0, modes: 0 });
    }
    if q.uses_fallback() {
        let (x, y) = (q.x(), q.y());
        let value = free(q.t, x, y) - free(q.t, x, reflect(y, nearest_edge(q)));
        return Ok(KernelValue { value: value.max(0.0), modes: 0 });
    }
    green_wedge_series(q)
}

/// Eigenfunction series for `Gamma`, never switching to the fallback.
pub fn green_wedge_series(q: &KernelQuery) -> Result<KernelValue> {
    if q.on_boundary() {
        return Ok(KernelValue { value: 0.0, modes: 0 });
    }
    let beta = PI / q.kappa0;
    let t = q.t;
    let z = q.r * q.r_src / (2.0 * t);
    let dr = q.r - q.r_src;
    let pref = (-dr * dr / (4.0 * t)).exp() / (q.kappa0 * t);
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let mut prev = f64::NAN;
    for n in 1..=q.mode_cap {
        let nu = n as f64 * beta;
        let s = scaled_i(nu, z);
        // product of sines first so the sum is exactly symmetric in x and y
        let term = s * ((nu * q.phi).sin() * (nu * q.phi_src).sin());
        sum += term;
        abs_sum += s;
        // Far from the diagonal the sum cancels down to roundoff; the free
        // kernel is an upper bound, so it caps that noise.
        let finish = |sum: f64| (pref * sum).clamp(0.0, free(t, q.x(), q.y()));
        if s == 0.0 {
            return Ok(KernelValue { value: finish(sum), modes: n });
        }
        if n > 1 {
            let ratio = s / prev;
            if ratio < 1.0 {
                let tail = s * ratio / (1.0 - ratio);
                if tail <= q.tol * sum.abs() || tail <= 1e-16 * abs_sum {
                    return Ok(KernelValue { value: finish(sum), modes: n });
                }
            }
        }
        prev = s;
    }
    Err(Error::Truncation { modes: q.mode_cap, tail: prev })
}

/// `nabla_y Gamma(t, x, y)` in Cartesian components of the canonical frame.
pub fn green_wedge_grad_y(q: &KernelQuery) -> Result<Point> {
    green_wedge_grad_y_eval(q).map(|(g, _)| g)
}

/// Gradient with the number of modes used.
pub fn green_wedge_grad_y_eval(q: &KernelQuery) -> Result<(Point, usize)> {
    if q.r == 0.0 || q.phi <= 0.0 || q.phi >= q.kappa0 {
        return Ok(([0.0, 0.0], 0));
    }
    if q.r_src == 0.0 {
        return Err(Error::domain("kernel gradient is not defined at the vertex"));
    }
    if q.uses_fallback() {
        let (x, y) = (q.x(), q.y());
        let a = nearest_edge(q);
        let g_direct = free_grad_y(q.t, x, y);
        let yb = reflect(y, a);
        // d/dy of p(x - R y) = R^T (grad wrt the image point), R symmetric
        let gi = free_grad_y(q.t, x, yb);
        let gi = reflect(gi, a);
        return Ok(([g_direct[0] - gi[0], g_direct[1] - gi[1]], 0));
    }
    let beta = PI / q.kappa0;
    let t = q.t;
    let (r, rs) = (q.r, q.r_src);
    let z = r * rs / (2.0 * t);
    let dr = r - rs;
    let pref = (-dr * dr / (4.0 * t)).exp() / (q.kappa0 * t);
    let (mut d_r, mut d_phi) = (0.0, 0.0);
    let mut abs_sum = 0.0;
    let mut prev = f64::NAN;
    for n in 1..=q.mode_cap {
        let nu = n as f64 * beta;
        let s = scaled_i(nu, z);
        let s1 = scaled_i(nu + 1.0, z);
        let sx = (nu * q.phi).sin();
        let (sy, cy) = (nu * q.phi_src).sin_cos();
        let radial = (r / (2.0 * t)) * s1 + (nu / rs - rs / (2.0 * t)) * s;
        d_r += radial * sx * sy;
        d_phi += s * nu / rs * sx * cy;
        let bound = (r / (2.0 * t) + 2.0 * nu / rs + rs / (2.0 * t)) * s;
        abs_sum += bound;
        if s == 0.0 {
            break;
        }
        if n > 1 {
            let ratio = s / prev * (n as f64 + 1.0) / n as f64;
            if ratio < 1.0 {
                let tail = bound * ratio / (1.0 - ratio);
                let size = d_r.hypot(d_phi);
                if tail <= q.tol * size || tail <= 1e-16 * abs_sum {
                    return Ok((polar_to_cartesian(pref * d_r, pref * d_phi, q.phi_src), n));
                }
            }
        }
        prev = s;
        if n == q.mode_cap {
            return Err(Error::Truncation { modes: n, tail: bound });
        }
    }
    Ok((polar_to_cartesian(pref * d_r, pref * d_phi, q.phi_src), 0))
}

#[inline]
fn polar_to_cartesian(d_r: f64, d_phi: f64, phi: f64) -> Point {
    let (s, c) = phi.sin_cos();
    [c * d_r - s * d_phi, s * d_r + c * d_phi]
}

#[inline]
fn free_grad_y(t: f64, x: Point, y: Point) -> Point {
    let p = free(t, x, y);
    [p * (x[0] - y[0]) / (2.0 * t), p * (x[1] - y[1]) / (2.0 * t)]
}

fn image_terms(kappa0: f64) -> Result<&'static [(f64, f64, f64)]> {
    // (sign, sx, sy): image point (sx*y1, sy*y2)
    const HALF: [(f64, f64, f64); 2] = [(1.0, 1.0, 1.0), (-1.0, 1.0, -1.0)];
    const QUAD: [(f64, f64, f64); 4] =
        [(1.0, 1.0, 1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0), (1.0, -1.0, -1.0)];
    if kappa0 == PI {
        Ok(&HALF)
    } else if kappa0 == 0.5 * PI {
        Ok(&QUAD)
    } else {
        Err(Error::domain(format!("image formula only for kappa0 = pi or pi/2, got {kappa0}")))
    }
}

/// Image-method kernel for the upper half-plane (`kappa0 = pi`) or the
/// first quadrant (`kappa0 = pi/2`).
pub fn green_images(kappa0: f64, t: f64, x: Point, y: Point) -> Result<f64> {
    let terms = image_terms(kappa0)?;
    if !(t > 0.0) {
        return Err(Error::domain(format!("kernel time must be positive, got {t}")));
    }
    Ok(terms.iter().map(|&(s, a, b)| s * free(t, x, [a * y[0], b * y[1]])).sum())
}

/// `nabla_y` of [`green_images`].
pub fn green_images_grad_y(kappa0: f64, t: f64, x: Point, y: Point) -> Result<Point> {
    let terms = image_terms(kappa0)?;
    if !(t > 0.0) {
        return Err(Error::domain(format!("kernel time must be positive, got {t}")));
    }
    let mut g = [0.0, 0.0];
    for &(s, a, b) in terms {
        let gi = free_grad_y(t, x, [a * y[0], b * y[1]]);
        g[0] += s * a * gi[0];
        g[1] += s * b * gi[1];
    }
    Ok(g)
}

/// Sampling ranges for [`check_gradient_bound`]: `t`, `|x|`, `|y|` are
/// log-uniform, angles uniform in the open wedge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
    pub t_range: (f64, f64),
    pub r_range: (f64, f64),
    /// Multiply every sample by the parabolic dilation `(t, x, y) -> (c^2 t, c x, c y)`.
    pub dilation: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            count: 10_000,
            seed: 7,
            t_range: (1e-2, 10.0),
            r_range: (1e-3, 10.0),
            dilation: 1.0,
        }
    }
}

/// Candidate Gaussian rates for the gradient bound.
pub const SIGMA_GRID: [f64; 4] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 12.0, 1.0 / 8.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kappa0: f64,
    pub lambda: f64,
    pub sigma: f64,
    /// Fitted constant on the first half of the samples.
    pub n_const: f64,
    /// Largest ratio / N on the held-out half.
    pub max_violation: f64,
    pub samples: usize,
    /// Fitted N for every candidate sigma.
    pub per_sigma: Vec<(f64, f64)>,
}

/// Empirical constant `N` in
/// `|grad_y Gamma| <= N (|x|/(|x|+sqrt t))^lambda (|y|/(|y|+sqrt t))^(lambda-1) t^(-3/2) exp(-sigma |x-y|^2/t)`.
pub fn check_gradient_bound(kappa0: f64, lambda: f64, spec: &SampleSpec) -> Result<BoundReport> {
    if !(lambda > 0.0 && lambda < PI / kappa0) {
        return Err(Error::domain(format!(
            "lambda must lie in (0, pi/kappa0) = (0, {}), got {lambda}",
            PI / kappa0
        )));
    }
    if spec.count < 2 {
        return Err(Error::config("need at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let log_uniform = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| (a.ln() + rng.random::<f64>() * (b / a).ln()).exp();
    let c = spec.dilation;
    let mut ratios: Vec<[f64; 4]> = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let t = log_uniform(&mut rng, spec.t_range);
        let r = log_uniform(&mut rng, spec.r_range);
        let rs = log_uniform(&mut rng, spec.r_range);
        let phi = kappa0 * (0.001 + 0.998 * rng.random::<f64>());
        let phis = kappa0 * (0.001 + 0.998 * rng.random::<f64>());
        let q = KernelQuery::from_polar(kappa0, c * c * t, (c * r, phi), (c * rs, phis))?;
        let g = green_wedge_grad_y(&q)?;
        let (x, y) = (q.x(), q.y());
        let st = q.t.sqrt();
        let d2 = {
            let d = sub(x, y);
            d[0] * d[0] + d[1] * d[1]
        };
        let base = (q.r / (q.r + st)).powf(lambda) * (q.r_src / (q.r_src + st)).powf(lambda - 1.0) * q.t.powf(-1.5);
        let gn = g[0].hypot(g[1]);
        let mut row = [0.0; 4];
        for (k, &sigma) in SIGMA_GRID.iter().enumerate() {
            let lhs_log = gn.ln() - base.ln() + sigma * d2 / q.t;
            row[k] = if gn == 0.0 { 0.0 } else { lhs_log.exp() };
        }
        ratios.push(row);
    }
    let half = spec.count / 2;
    let (fit, held) = ratios.split_at(half);
    let per_sigma: Vec<(f64, f64)> = SIGMA_GRID
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, fit.iter().map(|r| r[k]).fold(0.0, f64::max)))
        .collect();
    let (k, &(sigma, n_const)) = per_sigma
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .unwrap();
    let max_violation = held.iter().map(|r| r[k]).fold(0.0, f64::max) / n_const;
    Ok(BoundReport {
        kappa0,
        lambda,
        sigma,
        n_const,
        max_violation,
        samples: spec.count,
        per_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q(kappa0: f64, t: f64, x: Point, y: Point) -> KernelQuery {
        KernelQuery::new(kappa0, t, x, y).unwrap()
    }

    #[test]
    fn free_kernel_values() {
        assert_relative_eq!(heat_kernel_free(1.0, [0.3, 0.2], [0.3, 0.2]).unwrap(), 0.0795775, max_relative = 1e-6);
        let far = heat_kernel_free(1.0, [0.0, 0.0], [2.0, 0.0]).unwrap();
        assert_relative_eq!(far, (-1.0f64).exp() / (4.0 * PI), max_relative = 1e-15);
        assert_relative_eq!(far, 0.0292764, max_relative = 1e-4);
        assert!(heat_kernel_free(0.0, [0.0, 0.0], [1.0, 0.0]).is_err());
        // plane integral on a fine grid
        let h = 0.02;
        let mut s = 0.0;
        for i in -500..500 {
            for j in -500..500 {
                s += heat_kernel_free(0.7, [0.1, 0.0], [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]).unwrap();
            }
        }
        assert_relative_eq!(s * h * h, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn spot_values() {
        let half = 1.0 / (4.0 * PI) * (1.0 - (-1.0f64).exp());
        assert_relative_eq!(half, 0.050303, max_relative = 1e-5);
        assert_relative_eq!(green_wedge(&q(PI, 1.0, [0.0, 1.0], [0.0, 1.0])).unwrap(), half, max_relative = 1e-10);
        assert_relative_eq!(green_images(PI, 1.0, [0.0, 1.0], [0.0, 1.0]).unwrap(), half, max_relative = 1e-14);
        let e = (-1.0f64).exp();
        let quad = 1.0 / (4.0 * PI) * (1.0 - 2.0 * e + e * e);
        assert_relative_eq!(quad, 0.031797, max_relative = 1e-5);
        assert_relative_eq!(green_wedge(&q(0.5 * PI, 1.0, [1.0, 1.0], [1.0, 1.0])).unwrap(), quad, max_relative = 1e-10);
        assert_relative_eq!(green_images(0.5 * PI, 1.0, [1.0, 1.0], [1.0, 1.0]).unwrap(), quad, max_relative = 1e-14);
    }

    #[test]
    fn vanishes_on_edges() {
        assert_eq!(green_wedge(&q(PI, 1.0, [0.3, 0.4], [2.0, 0.0])).unwrap(), 0.0);
        assert_eq!(green_wedge(&q(0.5 * PI, 1.0, [0.3, 0.4], [0.0, 2.0])).unwrap(), 0.0);
        assert_eq!(green_images(PI, 1.0, [0.3, 0.4], [2.0, 0.0]).unwrap(), 0.0);
        assert!(KernelQuery::new(0.5 * PI, 1.0, [0.3, 0.4], [-1.0, 1.0]).is_err());
        assert!(green_images(1.0, 1.0, [0.3, 0.4], [1.0, 1.0]).is_err());
    }

    #[test]
    fn image_oracles_agree_with_series() {
        for &kappa in &[PI, 0.5 * PI] {
            for &t in &[0.05, 0.3, 2.0] {
                for i in 0..6 {
                    for j in 0..6 {
                        let x = [0.2 + 0.3 * i as f64, 0.15 + 0.25 * j as f64];
                        let y = [0.9 - 0.1 * j as f64, 0.4 + 0.2 * i as f64];
                        let want = green_images(kappa, t, x, y).unwrap();
                        let got = green_wedge(&q(kappa, t, x, y)).unwrap();
                        if want > 1e-30 {
                            assert_relative_eq!(got, want, max_relative = 1e-8);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_image_oracle() {
        let got = green_wedge_grad_y(&q(PI, 1.0, [0.0, 1.0], [0.0, 1.0])).unwrap();
        let want = green_images_grad_y(PI, 1.0, [0.0, 1.0], [0.0, 1.0]).unwrap();
        assert!(got[0].abs() < 1e-14);
        assert_relative_eq!(got[1], want[1], max_relative = 1e-8);
        let got = green_wedge_grad_y(&q(0.5 * PI, 0.4, [0.7, 0.3], [0.2, 0.5])).unwrap();
        let want = green_images_grad_y(0.5 * PI, 0.4, [0.7, 0.3], [0.2, 0.5]).unwrap();
        assert_relative_eq!(got[0], want[0], max_relative = 1e-8);
        assert_relative_eq!(got[1], want[1], max_relative = 1e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let kappa = 1.5 * PI;
        let x = [1.0, 1.0];
        let y = [0.8, 0.6];
        let g = green_wedge_grad_y(&q(kappa, 0.5, x, y)).unwrap();
        let h = 1e-5;
        let f = |y: Point| green_wedge(&q(kappa, 0.5, x, y)).unwrap();
        let fd = [
            (f([y[0] + h, y[1]]) - f([y[0] - h, y[1]])) / (2.0 * h),
            (f([y[0], y[1] + h]) - f([y[0], y[1] - h])) / (2.0 * h),
        ];
        let scale = fd[0].hypot(fd[1]);
        assert!((g[0] - fd[0]).hypot(g[1] - fd[1]) <= 1e-6 * scale, "{g:?} vs {fd:?}");
    }

    #[test]
    fn gradient_tangential_symmetry() {
        let kappa: f64 = 1.2;
        let phi = 0.5 * kappa;
        let x = [0.8 * phi.cos(), 0.8 * phi.sin()];
        let g = green_wedge_grad_y(&q(kappa, 0.3, x, x)).unwrap();
        let tangential = -phi.sin() * g[0] + phi.cos() * g[1];
        assert!(tangential.abs() <= 1e-12 * g[0].hypot(g[1]).max(1e-300));
    }

    #[test]
    fn symmetry_and_domination() {
        let kappa = 1.5 * PI;
        for k in 0..40 {
            let a = 0.05 + 4.6 * ((k * 7) % 40) as f64 / 40.0;
            let b = 0.05 + 4.6 * ((k * 13) % 40) as f64 / 40.0;
            let x = [(0.3 + k as f64 * 0.05) * a.cos(), (0.3 + k as f64 * 0.05) * a.sin()];
            let y = [(1.7 - k as f64 * 0.03) * b.cos(), (1.7 - k as f64 * 0.03) * b.sin()];
            for &t in &[0.01, 0.2, 3.0] {
                let g1 = green_wedge(&q(kappa, t, x, y)).unwrap();
                let g2 = green_wedge(&q(kappa, t, y, x)).unwrap();
                assert_eq!(g1, g2);
                assert!(g1 <= free(t, x, y) * (1.0 + 1e-12), "{g1} {} t={t} x={x:?} y={y:?}", free(t, x, y));
                assert!(g1 >= 0.0);
            }
        }
    }

    #[test]
    fn parabolic_dilation() {
        for &kappa in &[0.7, PI, 4.0] {
            let x = [0.4 * (0.3 * kappa).cos(), 0.4 * (0.3 * kappa).sin()];
            let y = [0.9 * (0.6 * kappa).cos(), 0.9 * (0.6 * kappa).sin()];
            let a = green_wedge(&q(kappa, 0.3, x, y)).unwrap();
            let b = green_wedge(&q(kappa, 1.2, [2.0 * x[0], 2.0 * x[1]], [2.0 * y[0], 2.0 * y[1]])).unwrap();
            assert_relative_eq!(b, 0.25 * a, max_relative = 1e-12);
        }
    }

    #[test]
    fn fallback_is_continuous_with_series() {
        let kappa = 2.0;
        let t = 1e-5;
        // z just above the switch, points far from the edges
        let r = (2.0 * t * FALLBACK_Z * 1.01).sqrt();
        let x = (r, 1.0);
        let y = (r * 1.0001, 1.0 + 1e-4);
        let qq = KernelQuery::from_polar(kappa, t, x, y).unwrap();
        assert!(qq.uses_fallback());
        let series = green_wedge_series(&qq).unwrap().value;
        let fb = green_wedge(&qq).unwrap();
        assert_relative_eq!(series, fb, max_relative = 1e-8);
    }

    #[test]
    fn near_vertex_slope() {
        for &kappa in &[0.5 * PI, 1.5 * PI] {
            let y = [0.5 * (0.4 * kappa).cos(), 0.5 * (0.4 * kappa).sin()];
            let g = |r: f64| {
                let phi = 0.5 * kappa;
                green_wedge(&q(kappa, 0.5, [r * phi.cos(), r * phi.sin()], y)).unwrap()
            };
            let slope = (g(1e-2).ln() - g(1e-4).ln()) / (1e-2f64.ln() - 1e-4f64.ln());
            assert_relative_eq!(slope, PI / kappa, max_relative = 0.02);
        }
    }

    #[test]
    fn bound_checker_rejects_large_lambda() {
        assert!(check_gradient_bound(0.5 * PI, 2.5, &SampleSpec::default()).is_err());
        assert!(check_gradient_bound(0.5 * PI, 0.0, &SampleSpec::default()).is_err());
    }

    #[test]
    fn bound_checker_is_dilation_invariant() {
        let spec = SampleSpec { count: 400, ..SampleSpec::default() };
        let a = check_gradient_bound(0.5 * PI, 1.9, &spec).unwrap();
        let b = check_gradient_bound(0.5 * PI, 1.9, &SampleSpec { dilation: 2.0, ..spec }).unwrap();
        assert!(a.n_const.is_finite() && a.n_const > 0.0);
        assert_relative_eq!(a.n_const, b.n_const, max_relative = 1e-2);
    }
}
