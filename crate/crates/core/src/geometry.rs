//! Angular domains, polygons, distance functions, meshes and cutoffs.
//!
//! Wedges are stored with an arbitrary vertex and start angle; every
//! computation happens in the canonical frame (vertex at the origin, first
//! edge on the positive x-axis) reached through [`normalize_wedge`].

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Relative tolerance for rejecting points on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

/// Infinite planar sector `{x0 + Q (r cos phi, r sin phi) : r > 0, 0 < phi < kappa0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularDomain {
    vertex: Point,
    start_angle: f64,
    opening: f64,
}

impl AngularDomain {
    pub fn new(vertex: Point, start_angle: f64, opening: f64) -> Result<Self> {
        if !(opening > 0.0 && opening < 2.0 * PI) {
            return Err(Error::domain(format!("wedge opening must lie in (0, 2pi), got {opening}")));
        }
        if !(start_angle > -PI && start_angle <= PI) {
            return Err(Error::domain(format!(
                "wedge start angle must lie in (-pi, pi], got {start_angle}"
            )));
        }
        if !vertex.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("wedge vertex must be finite"));
        }
        Ok(Self { vertex, start_angle, opening })
    }

    /// Wedge with vertex at the origin and first edge on the positive x-axis.
    pub fn canonical(opening: f64) -> Result<Self> {
        Self::new([0.0, 0.0], 0.0, opening)
    }

    pub fn vertex(&self) -> Point {
        self.vertex
    }

    pub fn start_angle(&self) -> f64 {
        self.start_angle
    }

    pub fn opening(&self) -> f64 {
        self.opening
    }

    pub fn is_canonical(&self) -> bool {
        self.vertex == [0.0, 0.0] && self.start_angle == 0.0
    }

    /// Leading singular exponent `pi / kappa0` of the Dirichlet problem.
    pub fn critical_exponent(&self) -> f64 {
        PI / self.opening
    }

    pub fn isometry(&self) -> Isometry {
        Isometry::new(self.vertex, self.start_angle)
    }

    /// Polar coordinates `(r, phi)` in the canonical frame, `phi` in `[0, 2pi)`.
    pub fn local_polar(&self, x: Point) -> (f64, f64) {
        let y = self.isometry().to_canonical(x);
        let r = norm(y);
        let mut phi = y[1].atan2(y[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        (r, phi)
    }

    fn raw_dist(&self, r: f64, phi: f64) -> f64 {
        let to_edge = |angle: f64| if angle <= 0.5 * PI { r * angle.sin() } else { r };
        if phi <= 0.0 || phi >= self.opening {
            return 0.0;
        }
        to_edge(phi).min(to_edge(self.opening - phi))
    }

    pub fn contains(&self, x: Point) -> bool {
        let (r, phi) = self.local_polar(x);
        if !(phi > 0.0 && phi < self.opening) {
            return false;
        }
        self.raw_dist(r, phi) > BOUNDARY_TOL * r.max(1.0)
    }

    pub fn dist_to_boundary(&self, x: Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::domain(format!("point {x:?} is not strictly inside the wedge")));
        }
        let (r, phi) = self.local_polar(x);
        Ok(self.raw_dist(r, phi))
    }

    pub fn dist_to_vertex(&self, x: Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::domain(format!("point {x:?} is not strictly inside the wedge")));
        }
        Ok(norm(sub(x, self.vertex)))
    }

    pub fn dyadic_annulus(&self, n: i32) -> DyadicAnnulus {
        DyadicAnnulus { domain: *self, n }
    }
}

/// Rigid motion `x = x0 + Q y` carrying the canonical wedge onto a general one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isometry {
    translation: Point,
    /// Row-major rotation matrix `Q`.
    rotation: [[f64; 2]; 2],
}

impl Isometry {
    pub fn new(translation: Point, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { translation, rotation: [[c, -s], [s, c]] }
    }

    pub fn identity() -> Self {
        Self::new([0.0, 0.0], 0.0)
    }

    pub fn rotation(&self) -> [[f64; 2]; 2] {
        self.rotation
    }

    pub fn translation(&self) -> Point {
        self.translation
    }

    /// `x0 + Q y`.
    pub fn from_canonical(&self, y: Point) -> Point {
        let q = &self.rotation;
        [
            self.translation[0] + q[0][0] * y[0] + q[0][1] * y[1],
            self.translation[1] + q[1][0] * y[0] + q[1][1] * y[1],
        ]
    }

    /// `Q^T (x - x0)`.
    pub fn to_canonical(&self, x: Point) -> Point {
        let q = &self.rotation;
        let d = sub(x, self.translation);
        [q[0][0] * d[0] + q[1][0] * d[1], q[0][1] * d[0] + q[1][1] * d[1]]
    }

    /// Components of a vector field in the canonical frame:
    /// `f~^i = q_{1i} f^1 + q_{2i} f^2`.
    pub fn vector_to_canonical(&self, f: Point) -> Point {
        let q = &self.rotation;
        [q[0][0] * f[0] + q[1][0] * f[1], q[0][1] * f[0] + q[1][1] * f[1]]
    }

    pub fn vector_from_canonical(&self, f: Point) -> Point {
        let q = &self.rotation;
        [q[0][0] * f[0] + q[0][1] * f[1], q[1][0] * f[0] + q[1][1] * f[1]]
    }
}

/// Canonical wedge plus the isometry mapping it onto `general`.
pub fn normalize_wedge(general: &AngularDomain) -> (AngularDomain, Isometry) {
    let canonical = AngularDomain {
        vertex: [0.0, 0.0],
        start_angle: 0.0,
        opening: general.opening,
    };
    (canonical, general.isometry())
}

/// Dyadic annuli `U_n = {2^{n-1} < |x| < 2^{n+1}}` and
/// `V_n = {2^{n-2} < |x| < 2^{n+2}}` intersected with a wedge.
#[derive(Debug, Clone, Copy)]
pub struct DyadicAnnulus {
    domain: AngularDomain,
    n: i32,
}

impl DyadicAnnulus {
    pub fn index(&self) -> i32 {
        self.n
    }

    fn radius(&self, x: Point) -> f64 {
        norm(sub(x, self.domain.vertex))
    }

    pub fn in_inner(&self, x: Point) -> bool {
        let r = self.radius(x);
        let lo = 2f64.powi(self.n - 1);
        self.domain.contains(x) && r > lo && r < 4.0 * lo
    }

    pub fn in_outer(&self, x: Point) -> bool {
        let r = self.radius(x);
        let lo = 2f64.powi(self.n - 2);
        self.domain.contains(x) && r > lo && r < 16.0 * lo
    }

    /// Radial bounds of `U_n`.
    pub fn inner_bounds(&self) -> (f64, f64) {
        let lo = 2f64.powi(self.n - 1);
        (lo, 4.0 * lo)
    }

    /// Radial bounds of `V_n`.
    pub fn outer_bounds(&self) -> (f64, f64) {
        let lo = 2f64.powi(self.n - 2);
        (lo, 16.0 * lo)
    }
}

/// Simple polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
    angles: Vec<f64>,
    radius: f64,
    diameter: f64,
}

impl Polygon {
    /// Builds a polygon; vertex order may be either orientation.
    ///
    /// `radius` is the localization radius used by the partition of unity; it
    /// is validated by [`Polygon::validate_radius`], not here.
    pub fn new(mut vertices: Vec<Point>, radius: f64) -> Result<Self> {
        let m = vertices.len();
        if m < 3 {
            return Err(Error::domain(format!("polygon needs at least 3 vertices, got {m}")));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::domain("polygon vertices must be finite"));
        }
        let area2: f64 = (0..m).map(|i| cross(vertices[i], vertices[(i + 1) % m])).sum();
        if area2.abs() < 1e-300 {
            return Err(Error::domain("polygon has zero area"));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        for i in 0..m {
            if norm(sub(vertices[(i + 1) % m], vertices[i])) == 0.0 {
                return Err(Error::domain(format!("polygon has a repeated vertex at index {i}")));
            }
        }
        if !is_simple(&vertices) {
            return Err(Error::domain("polygon boundary self-intersects"));
        }
        let angles = (0..m)
            .map(|j| {
                let v = vertices[j];
                let out = sub(vertices[(j + 1) % m], v);
                let inc = sub(vertices[(j + m - 1) % m], v);
                let mut a = cross(out, inc).atan2(dot(out, inc));
                if a <= 0.0 {
                    a += 2.0 * PI;
                }
                a
            })
            .collect();
        let mut diameter: f64 = 0.0;
        for a in &vertices {
            for b in &vertices {
                diameter = diameter.max(norm(sub(*a, *b)));
            }
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::config(format!("localization radius must be positive, got {radius}")));
        }
        Ok(Self { vertices, angles, radius, diameter })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Interior angles `kappa_j`.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// Largest interior angle.
    pub fn max_angle(&self) -> f64 {
        self.angles.iter().cloned().fold(0.0, f64::max)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let m = self.vertices.len();
        (0..m).map(move |i| (self.vertices[i], self.vertices[(i + 1) % m]))
    }

    /// Wedge `D_j` at vertex `j` that agrees with the polygon near `v_j`.
    pub fn vertex_wedge(&self, j: usize) -> AngularDomain {
        let m = self.vertices.len();
        let v = self.vertices[j];
        let out = sub(self.vertices[(j + 1) % m], v);
        let a = out[1].atan2(out[0]);
        let a = if a <= -PI { a + 2.0 * PI } else { a };
        AngularDomain { vertex: v, start_angle: a, opening: self.angles[j] }
    }

    fn winding_contains(&self, x: Point) -> bool {
        let mut inside = false;
        let m = self.vertices.len();
        let mut j = m - 1;
        for i in 0..m {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a[1] > x[1]) != (b[1] > x[1]) {
                let xc = a[0] + (x[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if x[0] < xc {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    fn raw_dist(&self, x: Point) -> f64 {
        self.edges().map(|(a, b)| dist_to_segment(x, a, b)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: Point) -> bool {
        self.winding_contains(x) && self.raw_dist(x) > BOUNDARY_TOL * self.diameter
    }

    pub fn dist_to_boundary(&self, x: Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::domain(format!("point {x:?} is not strictly inside the polygon")));
        }
        Ok(self.raw_dist(x))
    }

    /// `min_j |x - v_j|`.
    pub fn dist_to_vertex(&self, x: Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::domain(format!("point {x:?} is not strictly inside the polygon")));
        }
        Ok(self.raw_vertex_dist(x))
    }

    fn raw_vertex_dist(&self, x: Point) -> f64 {
        self.vertices.iter().map(|v| norm(sub(x, *v))).fold(f64::INFINITY, f64::min)
    }

    /// Checks the ball conditions on the localization radius `r`:
    /// `B_{3r}(v_j)` holds only `v_j` and meets only its two edges, and the
    /// cutoff supports `B_{2r}(v_j)` are pairwise disjoint.
    pub fn validate_radius(&self) -> Result<()> {
        let r = self.radius;
        let m = self.vertices.len();
        for j in 0..m {
            let v = self.vertices[j];
            for k in 0..m {
                if k == j {
                    continue;
                }
                let d = norm(sub(self.vertices[k], v));
                if d <= 4.0 * r {
                    return Err(Error::config(format!(
                        "localization radius {r} too large: vertices {j} and {k} are {d} apart"
                    )));
                }
            }
            for (e, (a, b)) in self.edges().enumerate() {
                let incident = e == j || (e + 1) % m == j;
                if !incident && dist_to_segment(v, a, b) <= 3.0 * r {
                    return Err(Error::config(format!(
                        "localization radius {r} too large: B_3r(v_{j}) meets edge {e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(q2, q1), sub(p1, q1));
    let d2 = cross(sub(q2, q1), sub(p2, q1));
    let d3 = cross(sub(p2, p1), sub(q1, p1));
    let d4 = cross(sub(p2, p1), sub(q2, p1));
    ((d1 > 0.0) != (d2 > 0.0) && d1 != 0.0 && d2 != 0.0)
        && ((d3 > 0.0) != (d4 > 0.0) && d3 != 0.0 && d4 != 0.0)
}

fn is_simple(v: &[Point]) -> bool {
    let m = v.len();
    for i in 0..m {
        for j in (i + 1)..m {
            if j == i + 1 || (i == 0 && j == m - 1) {
                continue;
            }
            let (a1, a2) = (v[i], v[(i + 1) % m]);
            let (b1, b2) = (v[j], v[(j + 1) % m]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
            // touching (collinear overlap or vertex on edge)
            if dist_to_segment(b1, a1, a2) == 0.0 || dist_to_segment(a1, b1, b2) == 0.0 {
                return false;
            }
        }
    }
    true
}

/// A domain the solvers and norms understand.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Wedge(AngularDomain),
    Polygon(Polygon),
}

impl Domain {
    pub fn contains(&self, x: Point) -> bool {
        match self {
            Domain::Wedge(w) => w.contains(x),
            Domain::Polygon(p) => p.contains(x),
        }
    }

    /// `rho(x) = dist(x, boundary)`.
    pub fn dist_to_boundary(&self, x: Point) -> Result<f64> {
        match self {
            Domain::Wedge(w) => w.dist_to_boundary(x),
            Domain::Polygon(p) => p.dist_to_boundary(x),
        }
    }

    /// Distance to the vertex set (`|x - x0|` for a wedge, `min_j |x - v_j|` for a polygon).
    pub fn dist_to_vertex(&self, x: Point) -> Result<f64> {
        match self {
            Domain::Wedge(w) => w.dist_to_vertex(x),
            Domain::Polygon(p) => p.dist_to_vertex(x),
        }
    }

    /// Largest vertex angle.
    pub fn max_angle(&self) -> f64 {
        match self {
            Domain::Wedge(w) => w.opening(),
            Domain::Polygon(p) => p.max_angle(),
        }
    }
}

/// Quintic smoothstep `s^3 (10 - 15 s + 6 s^2)` with its first two derivatives.
#[inline]
pub(crate) fn smoothstep(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let v = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
    let d1 = 30.0 * s * s * (1.0 - s) * (1.0 - s);
    let d2 = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    (v, d1, d2)
}

/// Radial cutoff `xi(|x - v|)`: 1 on `B_r(v)`, 0 off `B_{2r}(v)`, C^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffField {
    center: Point,
    radius: f64,
}

impl CutoffField {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn center(&self) -> Point {
        self.center
    }

    /// Profile and its radial derivatives at distance `d`.
    fn profile(&self, d: f64) -> (f64, f64, f64) {
        let r = self.radius;
        let (v, d1, d2) = smoothstep((d - r) / r);
        (1.0 - v, -d1 / r, -d2 / (r * r))
    }

    pub fn value(&self, x: Point) -> f64 {
        self.profile(norm(sub(x, self.center))).0
    }

    pub fn gradient(&self, x: Point) -> Point {
        let dx = sub(x, self.center);
        let d = norm(dx);
        if d == 0.0 {
            return [0.0, 0.0];
        }
        let (_, d1, _) = self.profile(d);
        [d1 * dx[0] / d, d1 * dx[1] / d]
    }

    pub fn laplacian(&self, x: Point) -> f64 {
        let d = norm(sub(x, self.center));
        if d == 0.0 {
            return 0.0;
        }
        let (_, d1, d2) = self.profile(d);
        d2 + d1 / d
    }
}

/// `xi_0 = 1 - sum_j xi_j` together with the vertex cutoffs `xi_1..xi_M`.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    cutoffs: Vec<CutoffField>,
}

impl PartitionOfUnity {
    /// Number of pieces including `xi_0`.
    pub fn len(&self) -> usize {
        self.cutoffs.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vertex_cutoff(&self, j: usize) -> &CutoffField {
        &self.cutoffs[j - 1]
    }

    /// `xi_j(x)` for `j = 0..=M`.
    pub fn value(&self, j: usize, x: Point) -> f64 {
        if j == 0 {
            1.0 - self.cutoffs.iter().map(|c| c.value(x)).sum::<f64>()
        } else {
            self.cutoffs[j - 1].value(x)
        }
    }

    pub fn gradient(&self, j: usize, x: Point) -> Point {
        if j == 0 {
            let mut g = [0.0, 0.0];
            for c in &self.cutoffs {
                let gc = c.gradient(x);
                g[0] -= gc[0];
                g[1] -= gc[1];
            }
            g
        } else {
            self.cutoffs[j - 1].gradient(x)
        }
    }

    pub fn laplacian(&self, j: usize, x: Point) -> f64 {
        if j == 0 {
            -self.cutoffs.iter().map(|c| c.laplacian(x)).sum::<f64>()
        } else {
            self.cutoffs[j - 1].laplacian(x)
        }
    }
}

pub fn partition_of_unity(polygon: &Polygon) -> Result<PartitionOfUnity> {
    polygon.validate_radius()?;
    let cutoffs = polygon
        .vertices()
        .iter()
        .map(|&v| CutoffField::new(v, polygon.radius()))
        .collect();
    Ok(PartitionOfUnity { cutoffs })
}

/// Structure of a log-polar tensor mesh on a wedge (canonical frame).
#[derive(Debug, Clone)]
pub struct PolarLayout {
    pub opening: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    /// Step in `ln r`.
    pub log_step: f64,
    pub angle_step: f64,
    /// Cell-center radii (geometric centers).
    pub radii: Vec<f64>,
    /// Cell-center angles.
    pub angles: Vec<f64>,
}

impl PolarLayout {
    #[inline]
    pub fn index(&self, i_radial: usize, j_angular: usize) -> usize {
        i_radial * self.n_angular + j_angular
    }

    /// Radial face `r_k = r_min e^{k h}`, `k = 0..=n_radial`.
    pub fn face(&self, k: usize) -> f64 {
        self.r_min * (k as f64 * self.log_step).exp()
    }
}

/// Arm of a five-point stencil on a tensor grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    Node(usize, f64),
    /// Boundary crossing at the given distance (zero Dirichlet value there).
    Boundary(f64),
}

impl Arm {
    pub fn length(&self) -> f64 {
        match *self {
            Arm::Node(_, h) | Arm::Boundary(h) => h,
        }
    }
}

/// Graded tensor-product grid restricted to a polygon.
#[derive(Debug, Clone)]
pub struct TensorLayout {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Grid index `(ix, iy)` of each node.
    pub grid_of: Vec<(usize, usize)>,
    /// Node at grid index `iy * xs.len() + ix`, if inside.
    pub node_of: Vec<Option<usize>>,
    /// Stencil arms in the order east, west, north, south.
    pub arms: Vec<[Arm; 4]>,
}

#[derive(Debug, Clone)]
pub enum Layout {
    Polar(PolarLayout),
    Tensor(TensorLayout),
}

/// Nodes, quadrature weights and cached distances for one domain.
#[derive(Debug, Clone)]
pub struct Mesh {
    id: String,
    domain: Domain,
    points: Vec<Point>,
    weights: Vec<f64>,
    rho: Vec<f64>,
    rho_vertex: Vec<f64>,
    boundary_adjacent: Vec<bool>,
    layout: Layout,
    stencils: StencilCache,
}

/// Lazily built derivative stencils, shared between clones of a mesh.
#[derive(Clone, Default)]
struct StencilCache(Arc<OnceLock<Arc<crate::fields::Stencils>>>);

impl std::fmt::Debug for StencilCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "StencilCache({})", if self.0.get().is_some() { "built" } else { "empty" })
    }
}

impl Mesh {
    pub(crate) fn stencils(&self) -> Result<Arc<crate::fields::Stencils>> {
        if let Some(s) = self.stencils.0.get() {
            return Ok(s.clone());
        }
        let built = Arc::new(crate::fields::Stencils::build(self)?);
        Ok(self.stencils.0.get_or_init(|| built).clone())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Distance to the boundary at each node.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Distance to the vertex set at each node.
    pub fn rho_vertex(&self) -> &[f64] {
        &self.rho_vertex
    }

    /// Nodes whose cell touches the physical boundary.
    pub fn boundary_adjacent(&self) -> &[bool] {
        &self.boundary_adjacent
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn polar(&self) -> Option<&PolarLayout> {
        match &self.layout {
            Layout::Polar(p) => Some(p),
            Layout::Tensor(_) => None,
        }
    }

    pub fn tensor(&self) -> Option<&TensorLayout> {
        match &self.layout {
            Layout::Tensor(t) => Some(t),
            Layout::Polar(_) => None,
        }
    }

    pub fn total_weight(&self) -> f64 {
        crate::fields::pairwise_sum(&self.weights)
    }

    /// Same mesh with every node scaled by `factor` about the wedge vertex.
    ///
    /// Used for dilation experiments on matched meshes.
    pub fn dilated(&self, factor: f64) -> Result<Mesh> {
        match (&self.domain, &self.layout) {
            (Domain::Wedge(w), Layout::Polar(p)) => build_polar_mesh(
                w,
                p.r_min * factor,
                p.r_max * factor,
                p.n_radial,
                p.n_angular,
            ),
            _ => Err(Error::config("dilation is only defined for wedge meshes")),
        }
    }
}

/// Log-uniform radial times uniform angular cell-centered mesh on the wedge
/// truncated to `r_min <= |x| <= r_max`.
///
/// Quadrature weights are exact cell areas, so piecewise-constant integrands
/// are integrated exactly.
pub fn build_polar_mesh(
    domain: &AngularDomain,
    r_min: f64,
    r_max: f64,
    n_radial: usize,
    n_angular: usize,
) -> Result<Mesh> {
    if !(r_min > 0.0 && r_max > r_min && r_max.is_finite()) {
        return Err(Error::config(format!("need 0 < r_min < r_max, got {r_min}, {r_max}")));
    }
    if n_radial < 1 || n_angular < 2 {
        return Err(Error::config(format!(
            "need n_radial >= 1 and n_angular >= 2, got {n_radial}, {n_angular}"
        )));
    }
    let kappa = domain.opening();
    let log_step = (r_max / r_min).ln() / n_radial as f64;
    let angle_step = kappa / n_angular as f64;
    let radii: Vec<f64> = (0..n_radial)
        .map(|i| r_min * ((i as f64 + 0.5) * log_step).exp())
        .collect();
    let angles: Vec<f64> = (0..n_angular).map(|j| (j as f64 + 0.5) * angle_step).collect();
    let iso = domain.isometry();
    let n = n_radial * n_angular;
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    let mut rho_vertex = Vec::with_capacity(n);
    let mut boundary_adjacent = Vec::with_capacity(n);
    let canonical = AngularDomain::canonical(kappa)?;
    for i in 0..n_radial {
        let lo = r_min * (i as f64 * log_step).exp();
        let hi = r_min * ((i + 1) as f64 * log_step).exp();
        let area = 0.5 * angle_step * (hi * hi - lo * lo);
        let r = radii[i];
        for (j, &phi) in angles.iter().enumerate() {
            let y = [r * phi.cos(), r * phi.sin()];
            points.push(iso.from_canonical(y));
            weights.push(area);
            rho.push(canonical.raw_dist(r, phi));
            rho_vertex.push(r);
            boundary_adjacent.push(j == 0 || j + 1 == n_angular);
        }
    }
    let layout = PolarLayout {
        opening: kappa,
        r_min,
        r_max,
        n_radial,
        n_angular,
        log_step,
        angle_step,
        radii,
        angles,
    };
    Ok(Mesh {
        id: format!("polar-k{kappa:.6}-r{r_min:e}-{r_max:e}-{n_radial}x{n_angular}"),
        domain: Domain::Wedge(*domain),
        points,
        weights,
        rho,
        rho_vertex,
        boundary_adjacent,
        layout: Layout::Polar(layout),
        stencils: StencilCache::default(),
    })
}

/// Grid coordinates on `[a, b]` clustered toward both ends with exponent `grading`.
fn graded_segment(a: f64, b: f64, cells: usize, grading: f64) -> Vec<f64> {
    (0..=cells)
        .map(|k| {
            let s = k as f64 / cells as f64;
            let g = if grading == 1.0 {
                s
            } else {
                let p = s.powf(grading);
                p / (p + (1.0 - s).powf(grading))
            };
            a + (b - a) * g
        })
        .collect()
}

fn graded_axis(mut breaks: Vec<f64>, total_cells: usize, grading: f64) -> Vec<f64> {
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let span = breaks[breaks.len() - 1] - breaks[0];
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let cells = (((w[1] - w[0]) / span) * total_cells as f64).round().max(2.0) as usize;
        let seg = graded_segment(w[0], w[1], cells, grading);
        out.extend_from_slice(&seg[1..]);
    }
    out
}

/// First boundary crossing along the axis-aligned segment `p -> q` as a
/// fraction of its length, if any.
fn first_crossing(polygon: &Polygon, p: Point, q: Point) -> Option<f64> {
    let d = sub(q, p);
    let mut best: Option<f64> = None;
    for (a, b) in polygon.edges() {
        let e = sub(b, a);
        let denom = cross(d, e);
        let ap = sub(a, p);
        let (t, s) = if denom.abs() < 1e-300 {
            // parallel: only relevant if collinear and overlapping
            if cross(ap, d).abs() > 1e-14 * norm(d) * norm(e).max(1.0) {
                continue;
            }
            let len2 = dot(d, d);
            let ta = dot(sub(a, p), d) / len2;
            let tb = dot(sub(b, p), d) / len2;
            let t = ta.min(tb).max(0.0);
            if t > ta.max(tb) {
                continue;
            }
            (t, 0.0)
        } else {
            (cross(ap, e) / denom, cross(ap, d) / denom)
        };
        if t > 1e-14 && t <= 1.0 + 1e-14 && (-1e-14..=1.0 + 1e-14).contains(&s) {
            best = Some(best.map_or(t, |bt: f64| bt.min(t)));
        }
    }
    best
}

/// Area of `polygon ∩ [x0,x1]×[y0,y1]` (Sutherland–Hodgman clip, shoelace).
fn clipped_area(polygon: &Polygon, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let mut poly: Vec<Point> = polygon.vertices().to_vec();
    let planes: [(usize, f64, bool); 4] = [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)];
    for &(axis, c, keep_greater) in &planes {
        if poly.is_empty() {
            return 0.0;
        }
        let inside = |p: &Point| if keep_greater { p[axis] >= c } else { p[axis] <= c };
        let mut out = Vec::with_capacity(poly.len() + 4);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let (ci, pi) = (inside(&cur), inside(&prev));
            if ci != pi {
                let t = (c - prev[axis]) / (cur[axis] - prev[axis]);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if ci {
                out.push(cur);
            }
        }
        poly = out;
    }
    let m = poly.len();
    if m < 3 {
        return 0.0;
    }
    0.5 * (0..m).map(|i| cross(poly[i], poly[(i + 1) % m])).sum::<f64>().abs()
}

/// Dual-cell areas: grid cells bounded by coordinate midpoints are clipped to
/// the polygon; cells of grid points outside the domain hand their area to
/// the nearest interior neighbour so the weights partition the polygon.
fn tensor_cell_weights(
    polygon: &Polygon,
    xs: &[f64],
    ys: &[f64],
    node_of: &[Option<usize>],
    n_nodes: usize,
) -> Result<Vec<f64>> {
    let (nx, ny) = (xs.len(), ys.len());
    let half = |v: &[f64], i: usize| {
        let lo = if i == 0 { v[0] } else { 0.5 * (v[i - 1] + v[i]) };
        let hi = if i + 1 == v.len() { v[i] } else { 0.5 * (v[i] + v[i + 1]) };
        (lo, hi)
    };
    let mut weights = vec![0.0; n_nodes];
    for iy in 0..ny {
        let (y0, y1) = half(ys, iy);
        for ix in 0..nx {
            let (x0, x1) = half(xs, ix);
            let area = clipped_area(polygon, x0, x1, y0, y1);
            if area <= 0.0 {
                continue;
            }
            let target = match node_of[iy * nx + ix] {
                Some(n) => Some(n),
                None => {
                    let p = [xs[ix], ys[iy]];
                    let mut best: Option<(f64, usize)> = None;
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                            if jx < 0 || jy < 0 || jx >= nx as isize || jy >= ny as isize {
                                continue;
                            }
                            if let Some(m) = node_of[jy as usize * nx + jx as usize] {
                                let d = norm(sub([xs[jx as usize], ys[jy as usize]], p));
                                if best.is_none_or(|(bd, _)| d < bd) {
                                    best = Some((d, m));
                                }
                            }
                        }
                    }
                    best.map(|(_, m)| m)
                }
            };
            if let Some(n) = target {
                weights[n] += area;
            }
        }
    }
    if let Some(n) = weights.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::config(format!("non-positive cell area at node {n}")));
    }
    Ok(weights)
}

/// Graded tensor grid restricted to a polygon with cut stencil arms at the
/// boundary.
///
/// Grid lines pass through every vertex coordinate and cluster toward them
/// with the power-law `grading` exponent (1 = uniform).
pub fn build_polygon_mesh(polygon: &Polygon, cells_per_axis: usize, grading: f64) -> Result<Mesh> {
    if cells_per_axis < 4 {
        return Err(Error::config("polygon mesh needs at least 4 cells per axis"));
    }
    if !(grading >= 1.0) {
        return Err(Error::config(format!("grading exponent must be >= 1, got {grading}")));
    }
    let xs = graded_axis(polygon.vertices().iter().map(|v| v[0]).collect(), cells_per_axis, grading);
    let ys = graded_axis(polygon.vertices().iter().map(|v| v[1]).collect(), cells_per_axis, grading);
    let (nx, ny) = (xs.len(), ys.len());
    let mut node_of = vec![None; nx * ny];
    let mut grid_of = Vec::new();
    let mut points = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [xs[ix], ys[iy]];
            if polygon.contains(p) {
                node_of[iy * nx + ix] = Some(points.len());
                grid_of.push((ix, iy));
                points.push(p);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::config("polygon mesh has no interior nodes"));
    }
    let mut arms = Vec::with_capacity(points.len());
    let mut boundary_adjacent = Vec::with_capacity(points.len());
    for (n, &(ix, iy)) in grid_of.iter().enumerate() {
        let p = points[n];
        let dirs: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        let mut node_arms = [Arm::Boundary(0.0); 4];
        let mut touches = false;
        for (a, &(dx, dy)) in dirs.iter().enumerate() {
            let jx = ix as isize + dx;
            let jy = iy as isize + dy;
            let arm = if jx < 0 || jy < 0 || jx >= nx as isize || jy >= ny as isize {
                return Err(Error::config("polygon node on the grid edge"));
            } else {
                let q = [xs[jx as usize], ys[jy as usize]];
                let len = norm(sub(q, p));
                match first_crossing(polygon, p, q) {
                    Some(t) if t < 1.0 - 1e-12 || node_of[jy as usize * nx + jx as usize].is_none() => {
                        Arm::Boundary(t.min(1.0) * len)
                    }
                    _ => match node_of[jy as usize * nx + jx as usize] {
                        Some(m) => Arm::Node(m, len),
                        None => Arm::Boundary(len),
                    },
                }
            };
            touches |= matches!(arm, Arm::Boundary(_));
            node_arms[a] = arm;
        }
        let ext = |arm: &Arm| match arm {
            Arm::Node(_, h) => 0.5 * h,
            Arm::Boundary(h) => *h,
        };
        let (x0, x1) = (p[0] - ext(&node_arms[1]), p[0] + ext(&node_arms[0]));
        let (y0, y1) = (p[1] - ext(&node_arms[3]), p[1] + ext(&node_arms[2]));
        let area = clipped_area(polygon, x0, x1, y0, y1);
        if !(area > 0.0) {
            return Err(Error::config(format!("non-positive cell area at node {n}")));
        }
        arms.push(node_arms);
        boundary_adjacent.push(touches);
    }
    let weights = tensor_cell_weights(polygon, &xs, &ys, &node_of, points.len())?;
    let rho = points.iter().map(|&p| polygon.raw_dist(p)).collect();
    let rho_vertex = points.iter().map(|&p| polygon.raw_vertex_dist(p)).collect();
    let layout = TensorLayout { xs, ys, grid_of, node_of, arms };
    Ok(Mesh {
        id: format!("polygon-m{}-{cells_per_axis}-g{grading}", polygon.vertices().len()),
        domain: Domain::Polygon(polygon.clone()),
        points,
        weights,
        rho,
        rho_vertex,
        boundary_adjacent,
        layout: Layout::Tensor(layout),
        stencils: StencilCache::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_square(r: f64) -> Polygon {
        Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], r).unwrap()
    }

    pub(crate) fn l_shape(r: f64) -> Polygon {
        Polygon::new(
            vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]],
            r,
        )
        .unwrap()
    }

    #[test]
    fn wedge_distances() {
        let half = AngularDomain::canonical(PI).unwrap();
        assert_abs_diff_eq!(half.dist_to_boundary([0.0, 1.0]).unwrap(), 1.0, epsilon = 1e-15);
        let quad = AngularDomain::canonical(0.5 * PI).unwrap();
        assert_abs_diff_eq!(quad.dist_to_boundary([1.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(quad.dist_to_vertex([1.0, 2.0]).unwrap(), 5f64.sqrt(), epsilon = 1e-15);
        let eps = 1e-7;
        let b = [eps * (0.25 * PI).cos(), eps * (0.25 * PI).sin()];
        assert_abs_diff_eq!(quad.dist_to_vertex(b).unwrap(), eps, epsilon = 1e-20);
        assert!(quad.dist_to_boundary([-1.0, 1.0]).is_err());
        assert!(quad.dist_to_boundary([1.0, 0.0]).is_err());
    }

    #[test]
    fn reentrant_wedge_distance_uses_vertex() {
        let w = AngularDomain::canonical(1.5 * PI).unwrap();
        // phi = 3pi/4 is more than pi/2 from both edges: nearest point is the vertex
        let x = [-1.0, 1.0];
        let d = w.dist_to_boundary(x).unwrap();
        assert_abs_diff_eq!(d, 2f64.sqrt(), epsilon = 1e-15);
        // close to the second edge (negative y-axis)
        let y = [-1.0, -0.1];
        let d = w.dist_to_boundary(y).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn square_distances() {
        let sq = unit_square(0.1);
        assert_abs_diff_eq!(sq.dist_to_boundary([0.5, 0.5]).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sq.dist_to_vertex([0.5, 0.5]).unwrap(), 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(sq.dist_to_boundary([0.5, 0.0]).is_err());
        assert!(sq.dist_to_boundary([1.5, 0.5]).is_err());
        for a in sq.angles() {
            assert_abs_diff_eq!(*a, 0.5 * PI, epsilon = 1e-15);
        }
    }

    #[test]
    fn l_shape_angles_and_wedges() {
        let l = l_shape(0.1);
        assert_abs_diff_eq!(l.max_angle(), 1.5 * PI, epsilon = 1e-14);
        let j = l.angles().iter().position(|a| (a - 1.5 * PI).abs() < 1e-12).unwrap();
        assert_eq!(l.vertices()[j], [0.0, 0.0]);
        let w = l.vertex_wedge(j);
        // wedge agrees with the polygon near the reentrant vertex
        for k in 0..64 {
            let phi = 2.0 * PI * (k as f64 + 0.5) / 64.0;
            let x = [0.2 * phi.cos(), 0.2 * phi.sin()];
            assert_eq!(w.contains(x), l.contains(x), "phi={phi}");
        }
    }

    #[test]
    fn rejects_bad_polygons() {
        assert!(Polygon::new(vec![[0.0, 0.0], [1.0, 0.0]], 0.1).is_err());
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(Polygon::new(bowtie, 0.1).is_err());
        assert!(unit_square(0.3).validate_radius().is_err());
        assert!(unit_square(0.2).validate_radius().is_ok());
    }

    #[test]
    fn dyadic_annuli() {
        let quad = AngularDomain::canonical(0.5 * PI).unwrap();
        let a = quad.dyadic_annulus(1);
        assert_eq!(a.inner_bounds(), (1.0, 4.0));
        assert_eq!(a.outer_bounds(), (0.5, 8.0));
        assert!(a.in_inner([2.0, 0.1]));
        assert!(!a.in_inner([2.0, -0.1]));
        assert!(!a.in_inner([0.5, 0.5]));
        assert!(a.in_outer([0.5, 0.5]));
    }

    #[test]
    fn normalization_examples() {
        let w = AngularDomain::new([0.0, 0.0], 0.0, 1.0).unwrap();
        let (_, iso) = normalize_wedge(&w);
        assert_eq!(iso.rotation(), [[1.0, 0.0], [0.0, 1.0]]);
        let w = AngularDomain::new([0.0, 0.0], 0.5 * PI, 0.5 * PI).unwrap();
        let (c, iso) = normalize_wedge(&w);
        assert!(c.is_canonical());
        let y = iso.to_canonical([0.0, 1.0]);
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn polar_mesh_area_and_containment() {
        let quad = AngularDomain::canonical(0.5 * PI).unwrap();
        let m = build_polar_mesh(&quad, 1.0, 2.0, 64, 64).unwrap();
        assert_abs_diff_eq!(m.total_weight(), 0.75 * PI, epsilon = 0.75 * PI * 1e-3);
        assert!(m.points().iter().all(|&p| quad.contains(p)));
        let one = build_polar_mesh(&quad, 1.0, std::f64::consts::E, 1, 4).unwrap();
        let p = one.polar().unwrap();
        assert_abs_diff_eq!(p.face(1) / p.face(0), std::f64::consts::E, epsilon = 1e-14);
        assert!(build_polar_mesh(&quad, 2.0, 1.0, 4, 4).is_err());
        assert!(build_polar_mesh(&quad, 1.0, 2.0, 0, 4).is_err());
    }

    #[test]
    fn polygon_mesh_covers_area() {
        let l = l_shape(0.1);
        for grading in [1.0, 1.6] {
            let m = build_polygon_mesh(&l, 24, grading).unwrap();
            assert_abs_diff_eq!(m.total_weight(), 3.0, epsilon = 1e-10);
            assert!(m.points().iter().all(|&p| l.contains(p)));
            assert!(m.weights().iter().all(|&w| w > 0.0));
        }
        let tri = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]], 0.05).unwrap();
        let m = build_polygon_mesh(&tri, 32, 1.0).unwrap();
        assert_abs_diff_eq!(m.total_weight(), 0.4, epsilon = 1e-10);
    }

    #[test]
    fn partition_sums_to_one() {
        let l = l_shape(0.1);
        let pu = partition_of_unity(&l).unwrap();
        for k in 0..400 {
            let x = [-0.99 + 1.98 * ((k * 37) % 400) as f64 / 400.0, -0.99 + 1.98 * (k as f64) / 400.0];
            if !l.contains(x) {
                continue;
            }
            let s: f64 = (0..pu.len()).map(|j| pu.value(j, x)).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            for j in 0..pu.len() {
                let v = pu.value(j, x);
                assert!((-1e-15..=1.0 + 1e-15).contains(&v));
            }
        }
        let v = l.vertices()[0];
        let x = [v[0] + 0.05, v[1] + 0.03];
        assert_eq!(pu.value(1, x), 1.0);
        for j in 2..pu.len() {
            assert_eq!(pu.value(j, x), 0.0);
        }
        assert_eq!(pu.value(0, x), 0.0);
        assert_eq!(pu.gradient(1, x), [0.0, 0.0]);
        assert_eq!(pu.laplacian(1, x), 0.0);
    }

    #[test]
    fn cutoff_derivatives_match_finite_differences() {
        let c = CutoffField::new([0.1, -0.2], 0.3);
        let h = 1e-5;
        for &x in &[[0.5, 0.1], [0.3, 0.2], [-0.25, -0.45]] {
            let g = c.gradient(x);
            let fx = (c.value([x[0] + h, x[1]]) - c.value([x[0] - h, x[1]])) / (2.0 * h);
            let fy = (c.value([x[0], x[1] + h]) - c.value([x[0], x[1] - h])) / (2.0 * h);
            assert_abs_diff_eq!(g[0], fx, epsilon = 1e-7);
            assert_abs_diff_eq!(g[1], fy, epsilon = 1e-7);
            let lap = (c.value([x[0] + h, x[1]]) + c.value([x[0] - h, x[1]]) + c.value([x[0], x[1] + h])
                + c.value([x[0], x[1] - h])
                - 4.0 * c.value(x))
                / (h * h);
            assert_abs_diff_eq!(c.laplacian(x), lap, epsilon = 1e-3);
        }
    }

    proptest::proptest! {
        #[test]
        fn wedge_distance_properties(
            kappa in 0.2f64..6.2,
            r in 1e-3f64..10.0,
            frac in 0.01f64..0.99,
            start in -3.0f64..3.0,
            vx in -2.0f64..2.0,
            vy in -2.0f64..2.0,
        ) {
            let w = AngularDomain::new([vx, vy], start, kappa).unwrap();
            let phi = frac * kappa;
            let (canon, iso) = normalize_wedge(&w);
            let x = iso.from_canonical([r * phi.cos(), r * phi.sin()]);
            proptest::prop_assume!(w.contains(x));
            let rho = w.dist_to_boundary(x).unwrap();
            let rho_v = w.dist_to_vertex(x).unwrap();
            proptest::prop_assert!(rho <= rho_v * (1.0 + 1e-12));
            let m = phi.min(kappa - phi);
            if m <= 0.5 * PI {
                proptest::prop_assert!((rho - rho_v * m.sin()).abs() <= 1e-9 * rho_v);
            }
            // dilation about the vertex
            let x2 = iso.from_canonical([2.0 * r * phi.cos(), 2.0 * r * phi.sin()]);
            let rho2 = w.dist_to_boundary(x2).unwrap();
            proptest::prop_assert!((rho2 - 2.0 * rho).abs() <= 1e-9 * rho.max(1e-12));
            // round trip
            let y = iso.to_canonical(x);
            let back = iso.from_canonical(y);
            proptest::prop_assert!((back[0] - x[0]).abs() < 1e-14 * (1.0 + x[0].abs()) + 1e-14);
            proptest::prop_assert!((back[1] - x[1]).abs() < 1e-14 * (1.0 + x[1].abs()) + 1e-14);
            proptest::prop_assert!(canon.is_canonical());
        }

        #[test]
        fn annuli_cover_each_point_at_most_twice(r in 1e-4f64..1e4, frac in 0.01f64..0.99) {
            let w = AngularDomain::canonical(2.0).unwrap();
            let x = [r * (frac * 2.0f64).cos(), r * (frac * 2.0f64).sin()];
            let count = (-20..=20).filter(|&n| w.dyadic_annulus(n).in_inner(x)).count();
            proptest::prop_assert!((1..=2).contains(&count));
        }

        #[test]
        fn polygon_rho_below_rho_tilde(x in -0.99f64..0.99, y in -0.99f64..0.99) {
            let l = l_shape(0.1);
            proptest::prop_assume!(l.contains([x, y]));
            proptest::prop_assert!(l.dist_to_boundary([x, y]).unwrap() <= l.dist_to_vertex([x, y]).unwrap());
        }
    }
}
