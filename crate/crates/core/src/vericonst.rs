//! Numerical checks of the decomposition theory: the distance-quotient partition
//! of unity, singular point detection, local polar partitions, harmonic
//! extensions on the L-shape overlap and the equivalence constant estimate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DfrError, Result};
use crate::geometry::{BoxDomain, Cover, Points};

type P2 = [f64; 2];

const AREA_TOL: f64 = 1e-14;

fn check_2d(cover: &Cover) -> Result<()> {
    match cover.dim() {
        2 => Ok(()),
        n => Err(DfrError::UnsupportedDimension(n)),
    }
}

fn polygon(b: &BoxDomain) -> Vec<P2> {
    b.vertices().iter().map(|v| [v[0], v[1]]).collect()
}

fn area(poly: &[P2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for k in 0..n {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s.abs()
}

/// Keeps the part of a convex polygon with `a . x <= c`.
fn clip(poly: &[P2], a: P2, c: f64) -> Vec<P2> {
    let f = |p: P2| a[0] * p[0] + a[1] * p[1] - c;
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..n {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        let (fp, fq) = (f(p), f(q));
        if fp <= 0.0 {
            out.push(p);
        }
        if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
            let t = fp / (fp - fq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

fn segment_distance(x: P2, p: P2, q: P2) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 { (((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (ex, ey) = (x[0] - p[0] - t * d[0], x[1] - p[1] - t * d[1]);
    (ex * ex + ey * ey).sqrt()
}

/// Distance from `x` to a closed convex polygon.
fn polygon_distance(x: P2, poly: &[P2]) -> f64 {
    let n = poly.len();
    let mut sign = 0.0;
    let mut inside = true;
    for k in 0..n {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        let cr = (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]);
        if cr != 0.0 {
            if sign == 0.0 {
                sign = cr.signum();
            } else if cr.signum() != sign {
                inside = false;
                break;
            }
        }
    }
    if inside {
        return 0.0;
    }
    (0..n).map(|k| segment_distance(x, poly[k], poly[(k + 1) % n])).fold(f64::INFINITY, f64::min)
}

/// Convex pieces whose union is the closure of `Omega \ Omega_i`.
fn complement_pieces(cover: &Cover, i: usize) -> Vec<Vec<P2>> {
    let bi = &cover.boxes[i];
    let mut half_planes = Vec::new();
    for e in &bi.edges {
        let a = [e[0], e[1]];
        let c0 = a[0] * bi.corner[0] + a[1] * bi.corner[1];
        let len2 = a[0] * a[0] + a[1] * a[1];
        // outside the low face: a.x <= c0; outside the high face: -a.x <= -(c0 + |a|^2)
        half_planes.push((a, c0));
        half_planes.push(([-a[0], -a[1]], -(c0 + len2)));
    }
    let mut pieces = Vec::new();
    for bj in cover.base_boxes() {
        let pj = polygon(bj);
        for &(a, c) in &half_planes {
            let piece = clip(&pj, a, c);
            if piece.len() >= 3 && area(&piece) > AREA_TOL {
                pieces.push(piece);
            }
        }
    }
    pieces
}

/// `p_i(x) = d(x, Omega \ Omega_i)` for box `i` of the cover.
pub fn p_dist(cover: &Cover, i: usize, x: &[f64]) -> Result<f64> {
    check_2d(cover)?;
    let pieces = complement_pieces(cover, i);
    Ok(min_distance(&pieces, [x[0], x[1]]))
}

fn min_distance(pieces: &[Vec<P2>], x: P2) -> f64 {
    pieces.iter().map(|p| polygon_distance(x, p)).fold(f64::INFINITY, f64::min)
}

/// Distance-quotient partition of unity `rho_i = p_i / sum_j p_j` over a 2D cover.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    cover: Cover,
    pieces: Vec<Vec<Vec<P2>>>,
}

impl PartitionOfUnity {
    pub fn new(cover: &Cover) -> Result<Self> {
        check_2d(cover)?;
        let pieces = (0..cover.len()).map(|i| complement_pieces(cover, i)).collect();
        Ok(Self { cover: cover.clone(), pieces })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn cover(&self) -> &Cover {
        &self.cover
    }

    /// All distances `p_i(x)`.
    pub fn p(&self, x: &[f64]) -> Vec<f64> {
        self.pieces.iter().map(|ps| min_distance(ps, [x[0], x[1]])).collect()
    }

    /// `rho(x)`, or `None` at a singular point where every `p_i` vanishes.
    pub fn rho(&self, x: &[f64]) -> Option<Vec<f64>> {
        let p = self.p(x);
        let s: f64 = p.iter().sum();
        (s > 0.0).then(|| p.iter().map(|v| v / s).collect())
    }

    /// Gradient bound `(m + 1) / sum_j p_j` with `m` the number of boxes.
    pub fn gradient_bound(&self, x: &[f64]) -> f64 {
        let s: f64 = self.p(x).iter().sum();
        (self.len() as f64 + 1.0) / s
    }
}

fn segment_intersection(p: P2, q: P2, r: P2, s: P2) -> Option<P2> {
    let d1 = [q[0] - p[0], q[1] - p[1]];
    let d2 = [s[0] - r[0], s[1] - r[1]];
    let den = d1[0] * d2[1] - d1[1] * d2[0];
    if den.abs() < 1e-14 {
        return None;
    }
    let w = [r[0] - p[0], r[1] - p[1]];
    let t = (w[0] * d2[1] - w[1] * d2[0]) / den;
    let u = (w[0] * d1[1] - w[1] * d1[0]) / den;
    ((-1e-12..=1.0 + 1e-12).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&u))
        .then(|| [p[0] + t * d1[0], p[1] + t * d1[1]])
}

/// Vertices of every box plus pairwise edge crossings (which include the vertices of the domain).
fn candidate_vertices(cover: &Cover) -> Vec<P2> {
    let polys: Vec<Vec<P2>> = cover.boxes.iter().map(polygon).collect();
    let mut out: Vec<P2> = polys.iter().flatten().copied().collect();
    for (a, pa) in polys.iter().enumerate() {
        for pb in polys.iter().skip(a + 1) {
            for k in 0..4 {
                for l in 0..4 {
                    if let Some(x) = segment_intersection(pa[k], pa[(k + 1) % 4], pb[l], pb[(l + 1) % 4]) {
                        out.push(x);
                    }
                }
            }
        }
    }
    let mut uniq: Vec<P2> = Vec::new();
    for x in out {
        let in_closure = cover.base_boxes().any(|b| b.contains_closed(&x, 1e-12));
        if in_closure && !uniq.iter().any(|u| (u[0] - x[0]).abs() < 1e-9 && (u[1] - x[1]).abs() < 1e-9) {
            uniq.push(x);
        }
    }
    uniq
}

/// True when some box agrees with the domain on sampled points of the ball `B_delta(x)`.
fn is_regular(cover: &Cover, x: P2, delta: f64) -> bool {
    const ANGLES: usize = 720;
    let samples: Vec<[f64; 2]> = [1.0 / 3.0, 2.0 / 3.0, 1.0]
        .iter()
        .flat_map(|f| {
            (0..ANGLES).map(move |k| {
                let phi = (k as f64 + 0.5) * 2.0 * PI / ANGLES as f64;
                [x[0] + f * delta * phi.cos(), x[1] + f * delta * phi.sin()]
            })
        })
        .collect();
    cover.boxes.iter().any(|b| samples.iter().all(|y| cover.contains(y) == b.contains(y)))
}

/// Points of the closed domain at which `rho` is singular, found by the local-ball test
/// at radius `delta` over the vertices of the domain and of every box.
pub fn find_singular_points(cover: &Cover, delta: f64) -> Result<Vec<P2>> {
    check_2d(cover)?;
    let mut pts: Vec<P2> = candidate_vertices(cover).into_iter().filter(|&x| !is_regular(cover, x, delta)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite vertices"));
    Ok(pts)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradBoundReport {
    pub samples: usize,
    pub passed: usize,
    pub pass_rate: f64,
    /// Largest observed `|grad rho_i| / bound`.
    pub max_ratio: f64,
}

/// Central-difference `|grad rho_i|` against `(m + 1) / sum p` with 5% slack.
pub fn grad_bound_check(pou: &PartitionOfUnity, samples: &Points, h: f64) -> GradBoundReport {
    let mut passed = 0;
    let mut max_ratio: f64 = 0.0;
    for x in samples.iter() {
        let bound = pou.gradient_bound(x);
        let shifted = |dx: f64, dy: f64| pou.rho(&[x[0] + dx, x[1] + dy]);
        let ok = match (shifted(h, 0.0), shifted(-h, 0.0), shifted(0.0, h), shifted(0.0, -h)) {
            (Some(xp), Some(xm), Some(yp), Some(ym)) => {
                let worst = (0..pou.len())
                    .map(|i| {
                        let gx = (xp[i] - xm[i]) / (2.0 * h);
                        let gy = (yp[i] - ym[i]) / (2.0 * h);
                        (gx * gx + gy * gy).sqrt()
                    })
                    .fold(0.0, f64::max);
                max_ratio = max_ratio.max(worst / bound);
                worst <= 1.05 * bound
            }
            _ => false,
        };
        passed += ok as usize;
    }
    let n = samples.len();
    GradBoundReport { samples: n, passed, pass_rate: if n == 0 { 1.0 } else { passed as f64 / n as f64 }, max_ratio }
}

/// Uniform samples of the domain kept at least `margin` from its boundary and
/// at least `avoid_radius` from each point in `avoid`.
pub fn sample_domain(cover: &Cover, count: usize, seed: u64, margin: f64, avoid: &[P2], avoid_radius: f64) -> Points {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for b in cover.base_boxes() {
        for v in b.vertices() {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Points::empty(2);
    let inside = |x: [f64; 2]| cover.contains(&x);
    while pts.len() < count {
        let x = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
        let clear = inside(x)
            && [[margin, 0.0], [-margin, 0.0], [0.0, margin], [0.0, -margin]]
                .iter()
                .all(|d| inside([x[0] + d[0], x[1] + d[1]]))
            && avoid.iter().all(|s| ((x[0] - s[0]).powi(2) + (x[1] - s[1]).powi(2)).sqrt() >= avoid_radius);
        if clear {
            pts.push(&x);
        }
    }
    pts
}

/// Geometries with a hand-built partition near their singular points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CornerGeometry {
    LShape,
    Pentagon,
}

/// Local angular partition `(rho_1, rho_2)` at polar angle `theta` around a singular point.
///
/// L-shape: `theta = atan2(y, x)` at the re-entrant corner, with `Omega_1` the upper half
/// and `Omega_2` the right half. Pentagon: the displayed ramp `3/2 - 2 theta / pi`.
pub fn local_polar_partition(geometry: CornerGeometry, theta: f64) -> (f64, f64) {
    let r1 = match geometry {
        CornerGeometry::LShape => {
            if theta <= 0.0 {
                0.0
            } else if theta < PI / 2.0 {
                2.0 * theta / PI
            } else {
                1.0
            }
        }
        CornerGeometry::Pentagon => {
            if theta <= PI / 4.0 {
                1.0
            } else if theta < 3.0 * PI / 4.0 {
                1.5 - 2.0 * theta / PI
            } else {
                0.0
            }
        }
    };
    (r1, 1.0 - r1)
}

/// Nodal field on the `(N+1) x (N+1)` grid of the unit square, `h = 1/N`.
/// Index `(i, j)` is `x = i h`, `y = j h`.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareGrid {
    pub n: usize,
    pub values: Vec<f64>,
}

impl SquareGrid {
    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; (n + 1) * (n + 1)] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.n + 1) + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * (self.n + 1) + j] = v;
    }

    /// Discrete Dirichlet energy (sum of squared edge differences; equals the
    /// piecewise-linear `int |grad v|^2` in 2D).
    pub fn energy(&self) -> f64 {
        self.inner(self)
    }

    /// Bilinear form associated with [`SquareGrid::energy`].
    pub fn inner(&self, other: &SquareGrid) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                if i < n {
                    s += (self.at(i + 1, j) - self.at(i, j)) * (other.at(i + 1, j) - other.at(i, j));
                }
                if j < n {
                    s += (self.at(i, j + 1) - self.at(i, j)) * (other.at(i, j + 1) - other.at(i, j));
                }
            }
        }
        s
    }

    /// Max over interior nodes of the 5-point Laplacian (unscaled).
    pub fn max_laplacian(&self) -> f64 {
        let n = self.n;
        let mut m: f64 = 0.0;
        for i in 1..n {
            for j in 1..n {
                let l = self.at(i + 1, j) + self.at(i - 1, j) + self.at(i, j + 1) + self.at(i, j - 1) - 4.0 * self.at(i, j);
                m = m.max(l.abs());
            }
        }
        m
    }
}

/// Which edge of the unit square carries the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edge {
    /// `x = 0`, data indexed by `j`.
    Left,
    /// `y = 0`, data indexed by `i`.
    Bottom,
}

/// Discrete harmonic function with data `g` (length `N+1`, zero at both ends) on one edge
/// and zero on the other three. Exact solve of the 5-point system by a sine transform
/// along the edge and the closed-form decaying solution across it.
fn harmonic_from_edge(g: &[f64], edge: Edge) -> Result<SquareGrid> {
    let n = g.len() - 1;
    if n < 2 {
        return Err(DfrError::InvalidConfig("grid too coarse".into()));
    }
    let nf = n as f64;
    let sines: Vec<Vec<f64>> =
        (1..n).map(|k| (0..=n).map(|j| (k as f64 * PI * j as f64 / nf).sin()).collect()).collect();
    let coef: Vec<f64> =
        sines.iter().map(|s| 2.0 / nf * (1..n).map(|j| g[j] * s[j]).sum::<f64>()).collect();
    let scale = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut out = SquareGrid::zeros(n);
    if scale == 0.0 {
        return Ok(out);
    }
    for (k, (c, s)) in coef.iter().zip(&sines).enumerate() {
        if c.abs() <= 1e-15 * scale {
            continue;
        }
        let lam = 4.0 * (((k + 1) as f64) * PI / (2.0 * nf)).sin().powi(2);
        let mu = (1.0 + 0.5 * lam).acosh();
        let den = 1.0 - (-2.0 * mu * nf).exp();
        for a in 0..=n {
            // sinh(mu (N - a)) / sinh(mu N)
            let decay = (-mu * a as f64).exp() * (1.0 - (-2.0 * mu * (nf - a as f64)).exp()) / den;
            for b in 1..n {
                let v = c * decay * s[b];
                match edge {
                    Edge::Left => out.values[a * (n + 1) + b] += v,
                    Edge::Bottom => out.values[b * (n + 1) + a] += v,
                }
            }
        }
    }
    if out.values.iter().any(|v| !v.is_finite()) {
        return Err(DfrError::NoConvergence("harmonic extension produced non-finite values".into()));
    }
    Ok(out)
}

/// The two harmonic extensions on the overlap `U_12 = (0,1)^2` of the L-shape cover.
#[derive(Clone, Debug)]
pub struct HarmonicPair {
    /// Carries the trace on `x = 0` (the side shared with `Omega_1 \ Omega_2`).
    pub v1: SquareGrid,
    /// Carries the trace on `y = 0` (the side shared with `Omega_2 \ Omega_1`).
    pub v2: SquareGrid,
}

impl HarmonicPair {
    pub fn energies(&self) -> (f64, f64, f64) {
        (self.v1.energy(), self.v2.energy(), self.v1.inner(&self.v2))
    }

    /// `(E1 + E2) / (E1 + E2 + C12)`.
    pub fn ratio(&self) -> f64 {
        let (e1, e2, c) = self.energies();
        let den = e1 + e2 + c;
        if den > 0.0 {
            (e1 + e2) / den
        } else {
            1.0
        }
    }
}

/// Solves both extension problems given the traces on the two interior sides of `U_12`.
/// `left[j]` is `v(0, j h)` and `bottom[i]` is `v(i h, 0)`; the outer sides carry zero.
pub fn harmonic_extensions(left: &[f64], bottom: &[f64]) -> Result<HarmonicPair> {
    let n = left.len().saturating_sub(1);
    if bottom.len() != left.len() {
        return Err(DfrError::InvalidConfig("trace lengths differ".into()));
    }
    if n < 32 {
        return Err(DfrError::InvalidConfig(format!("grid N = {n} below 32")));
    }
    for g in [left, bottom] {
        if g[0].abs() > 1e-12 || g[n].abs() > 1e-12 {
            return Err(DfrError::InvalidConfig("trace must vanish at the ends of each side".into()));
        }
    }
    Ok(HarmonicPair { v1: harmonic_from_edge(left, Edge::Left)?, v2: harmonic_from_edge(bottom, Edge::Bottom)? })
}

/// Truncated sine series traces on the two interior sides of `U_12`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDatum {
    pub left: Vec<f64>,
    pub bottom: Vec<f64>,
}

impl BoundaryDatum {
    fn sample(coefs: &[f64], n: usize) -> Vec<f64> {
        (0..=n)
            .map(|j| {
                if j == 0 || j == n {
                    return 0.0;
                }
                let t = j as f64 / n as f64;
                coefs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * t).sin()).sum()
            })
            .collect()
    }

    pub fn traces(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        (Self::sample(&self.left, n), Self::sample(&self.bottom, n))
    }
}

/// `count` data with `terms` sine coefficients per side, uniform in `[-1, 1]`.
pub fn random_data(count: usize, terms: usize, seed: u64) -> Vec<BoundaryDatum> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let left = (0..terms).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let bottom = (0..terms).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            BoundaryDatum { left, bottom }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct XiReport {
    pub grid_n: usize,
    pub data: usize,
    pub max_ratio: f64,
    pub xi_sq_estimate: f64,
}

/// Estimate of `xi^2` for the L-shape cover: `max(1, max_d R_d)` over the data family.
pub fn xi_estimate(n: usize, data: &[BoundaryDatum]) -> Result<XiReport> {
    let mut max_ratio = f64::NEG_INFINITY;
    for d in data {
        let (l, b) = d.traces(n);
        max_ratio = max_ratio.max(harmonic_extensions(&l, &b)?.ratio());
    }
    Ok(XiReport { grid_n: n, data: data.len(), max_ratio, xi_sq_estimate: max_ratio.max(1.0) })
}

/// Nodal field on the `(2N+1)^2` grid of `(-1,1)^2` restricted to the L-shape
/// `(-1,1)x(0,1) u (0,1)x(-1,1)`. Index `(a, b)` is `x = -1 + a/N`, `y = -1 + b/N`;
/// nodes of the missing quadrant hold zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LGrid {
    pub n: usize,
    pub values: Vec<f64>,
}

impl LGrid {
    pub fn zeros(n: usize) -> Self {
        Self { n, values: vec![0.0; (2 * n + 1) * (2 * n + 1)] }
    }

    fn idx(&self, a: usize, b: usize) -> usize {
        a * (2 * self.n + 1) + b
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[self.idx(a, b)]
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        let k = self.idx(a, b);
        self.values[k] = v;
    }

    /// Node strictly inside the L-shape.
    pub fn is_interior(&self, a: usize, b: usize) -> bool {
        let m = 2 * self.n;
        a > 0 && b > 0 && a < m && b < m && !(a <= self.n && b <= self.n)
    }

    /// Random values at interior nodes, zero elsewhere.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Self::zeros(n);
        for a in 0..=2 * n {
            for b in 0..=2 * n {
                if g.is_interior(a, b) {
                    g.set(a, b, rng.gen_range(-1.0..1.0));
                }
            }
        }
        g
    }

    /// Discrete Dirichlet energy over all grid edges.
    pub fn energy(&self) -> f64 {
        self.energy_where(|_, _| true)
    }

    /// Energy over edges whose endpoints satisfy `keep`.
    fn energy_where(&self, keep: impl Fn(usize, usize) -> bool) -> f64 {
        let m = 2 * self.n;
        let mut s = 0.0;
        for a in 0..=m {
            for b in 0..=m {
                if a < m && keep(a, b) && keep(a + 1, b) {
                    s += (self.at(a + 1, b) - self.at(a, b)).powi(2);
                }
                if b < m && keep(a, b) && keep(a, b + 1) {
                    s += (self.at(a, b + 1) - self.at(a, b)).powi(2);
                }
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub v1: LGrid,
    pub v2: LGrid,
    /// `|v1|^2 + |v2|^2`.
    pub energy: f64,
    /// `int |grad v|^2 + 1/2 int_{U_12} (|grad(v1h - v2h)|^2 - |grad v|^2)`.
    pub closed_form: f64,
}

/// Minimal-energy split `v = v1 + v2` with `v_i` vanishing outside `Omega_i`.
pub fn min_energy_decompose(v: &LGrid) -> Result<Decomposition> {
    let n = v.n;
    let m = 2 * n;
    for a in 0..=m {
        for b in 0..=m {
            if !v.is_interior(a, b) && v.at(a, b) != 0.0 {
                return Err(DfrError::InvalidConfig("field must vanish on and outside the boundary".into()));
            }
        }
    }
    let left: Vec<f64> = (0..=n).map(|j| v.at(n, n + j)).collect();
    let bottom: Vec<f64> = (0..=n).map(|i| v.at(n + i, n)).collect();
    let pair = harmonic_extensions(&left, &bottom)?;
    let mut w = SquareGrid::zeros(n);
    for (k, x) in w.values.iter_mut().enumerate() {
        *x = pair.v1.values[k] - pair.v2.values[k];
    }
    let mut v1 = LGrid::zeros(n);
    let mut v2 = LGrid::zeros(n);
    for a in 0..=m {
        for b in 0..=m {
            let x = v.at(a, b);
            let (p, q) = if a < n {
                (x, 0.0)
            } else if b < n {
                (0.0, x)
            } else {
                let wv = w.at(a - n, b - n);
                (0.5 * (x + wv), 0.5 * (x - wv))
            };
            v1.set(a, b, p);
            v2.set(a, b, q);
        }
    }
    let energy = v1.energy() + v2.energy();
    let in_overlap = |a: usize, b: usize| a >= n && b >= n;
    let closed_form = v.energy() + 0.5 * (w.energy() - v.energy_where(in_overlap));
    Ok(Decomposition { v1, v2, energy, closed_form })
}

/// Summary written by the verification command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub singular_points: Vec<[f64; 2]>,
    pub grad_bound_pass_rate: f64,
    pub xi_sq_estimate: f64,
    #[serde(rename = "grid_N")]
    pub grid_n: usize,
}

/// Singular points and gradient bound pass rate of a cover, plus the L-shape `xi^2` estimate.
pub fn verification_report(cover: &Cover, samples: usize, grid_n: usize, data: usize, seed: u64) -> Result<VerificationReport> {
    let singular_points = find_singular_points(cover, 1e-3)?;
    let pou = PartitionOfUnity::new(cover)?;
    let pts = sample_domain(cover, samples, seed, 1e-6, &singular_points, 1e-3);
    let grad = grad_bound_check(&pou, &pts, 1e-7);
    let xi = xi_estimate(grid_n, &random_data(data, 8, seed))?;
    Ok(VerificationReport {
        singular_points,
        grad_bound_pass_rate: grad.pass_rate,
        xi_sq_estimate: xi.xi_sq_estimate,
        grid_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::FaceBc;

    fn lshape() -> Cover {
        Cover::new(vec![
            BoxDomain::axis_aligned(0, &[-1.0, 0.0], &[1.0, 1.0]).unwrap(),
            BoxDomain::axis_aligned(1, &[0.0, -1.0], &[1.0, 1.0]).unwrap(),
        ])
    }

    fn pentagon() -> Cover {
        Cover::new(vec![
            BoxDomain::axis_aligned(0, &[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
            BoxDomain::new(1, vec![0.0, 0.0], vec![vec![1.0, -1.0], vec![1.0, 1.0]], vec![FaceBc::Dirichlet; 4])
                .unwrap(),
        ])
    }

    #[test]
    fn lshape_distances() {
        let c = lshape();
        assert!((p_dist(&c, 0, &[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-14);
        assert!((p_dist(&c, 1, &[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(p_dist(&c, 1, &[-0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(p_dist(&c, 0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(p_dist(&c, 1, &[0.0, 0.0]).unwrap(), 0.0);
        let pou = PartitionOfUnity::new(&c).unwrap();
        let r = pou.rho(&[-0.5, 0.5]).unwrap();
        assert_eq!(r, vec![1.0, 0.0]);
        assert!(pou.rho(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn pentagon_distance_to_triangle() {
        let c = pentagon();
        // (0.5, 0) is 0.5 from the triangle with vertices (1,-1), (2,0), (1,1)
        assert!((p_dist(&c, 0, &[0.5, 0.0]).unwrap() - 0.5).abs() < 1e-14);
        // nearest point of the square minus the diamond to (1, 0) is on x + y = 1
        let d = p_dist(&c, 1, &[1.0, 0.0]).unwrap();
        assert!((d - (0.5f64).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn singular_points_of_catalog_covers() {
        assert_eq!(find_singular_points(&lshape(), 1e-3).unwrap(), vec![[0.0, 0.0]]);
        let p = find_singular_points(&pentagon(), 1e-3).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p[0][0] - 1.0).abs() < 1e-12 && (p[0][1] + 1.0).abs() < 1e-12);
        assert!((p[1][0] - 1.0).abs() < 1e-12 && (p[1][1] - 1.0).abs() < 1e-12);
        let single = Cover::new(vec![BoxDomain::axis_aligned(0, &[0.0, 0.0], &[1.0, 1.0]).unwrap()]);
        assert!(find_singular_points(&single, 1e-3).unwrap().is_empty());
    }

    #[test]
    fn partition_identity() {
        for c in [lshape(), pentagon()] {
            let pou = PartitionOfUnity::new(&c).unwrap();
            let pts = sample_domain(&c, 10_000, 3, 0.0, &[], 0.0);
            for x in pts.iter() {
                let r = pou.rho(x).unwrap();
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(r.iter().all(|&v| v >= 0.0));
                for (b, rv) in c.boxes.iter().zip(&r) {
                    if !b.contains(x) {
                        assert_eq!(*rv, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_bound_holds() {
        let c = lshape();
        let pou = PartitionOfUnity::new(&c).unwrap();
        let pts = sample_domain(&c, 1000, 5, 1e-6, &[[0.0, 0.0]], 1e-3);
        let rep = grad_bound_check(&pou, &pts, 1e-7);
        assert_eq!(rep.passed, 1000);
        // deep inside Omega_1 \ Omega_2 rho_1 is locally constant
        let flat = grad_bound_check(&pou, &Points::from_rows(2, &[vec![-0.5, 0.5]]), 1e-7);
        assert_eq!(flat.max_ratio, 0.0);
    }

    #[test]
    fn gradient_grows_towards_corner() {
        let pou = PartitionOfUnity::new(&lshape()).unwrap();
        let h = 1e-9;
        let mut prev = 0.0;
        for t in [1e-1, 1e-2, 1e-3] {
            let x = [t, t];
            let gx = (pou.rho(&[x[0] + h, x[1]]).unwrap()[0] - pou.rho(&[x[0] - h, x[1]]).unwrap()[0]) / (2.0 * h);
            let gy = (pou.rho(&[x[0], x[1] + h]).unwrap()[0] - pou.rho(&[x[0], x[1] - h]).unwrap()[0]) / (2.0 * h);
            let g = (gx * gx + gy * gy).sqrt();
            let s: f64 = pou.p(&x).iter().sum();
            // rho_1 = y / (x + y) near the diagonal, so |grad| * sum p = 1/sqrt 2
            assert!((g * s - 0.5f64.sqrt()).abs() < 1e-5, "{}", g * s);
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn polar_partitions() {
        let l = |t| local_polar_partition(CornerGeometry::LShape, t);
        assert_eq!(l(PI / 4.0).0, 0.5);
        assert_eq!(l(PI / 2.0).0, 1.0);
        assert_eq!(l(0.8 * PI).0, 1.0);
        assert_eq!(l(-0.25 * PI).0, 0.0);
        let p = local_polar_partition(CornerGeometry::Pentagon, PI / 2.0);
        assert!((p.0 - 0.5).abs() < 1e-15);
        for k in 0..50 {
            let t = -PI + k as f64 * 2.0 * PI / 50.0;
            for g in [CornerGeometry::LShape, CornerGeometry::Pentagon] {
                let (a, b) = local_polar_partition(g, t);
                assert_eq!(a + b, 1.0);
            }
        }
    }

    fn symmetric_datum() -> BoundaryDatum {
        let c = vec![1.0, -0.3, 0.2, 0.0, 0.1, 0.0, 0.0, 0.05];
        BoundaryDatum { left: c.clone(), bottom: c }
    }

    #[test]
    fn zero_data_give_zero_extensions() {
        let z = vec![0.0; 65];
        let p = harmonic_extensions(&z, &z).unwrap();
        assert!(p.v1.values.iter().chain(&p.v2.values).all(|&v| v == 0.0));
    }

    #[test]
    fn extensions_are_discrete_harmonic_and_symmetric() {
        let n = 64;
        let (l, b) = symmetric_datum().traces(n);
        let p = harmonic_extensions(&l, &b).unwrap();
        assert!(p.v1.max_laplacian() < 1e-12);
        assert!(p.v2.max_laplacian() < 1e-12);
        for i in 0..=n {
            for j in 0..=n {
                assert!((p.v2.at(i, j) - p.v1.at(j, i)).abs() <= 1e-10);
            }
            assert!((p.v1.at(0, i) - l[i]).abs() < 1e-12);
            assert_eq!(p.v1.at(n, i), 0.0);
            assert_eq!(p.v1.at(i, 0), 0.0);
        }
        // C12 = -int_{x=0} g d_x v2 and d_x v2 > 0 there for a positive trace
        let (_, _, c12) = p.energies();
        assert!(c12 < 0.0);
        assert!(p.ratio() > 1.0);
    }

    #[test]
    fn extension_minimises_energy() {
        let n = 40;
        let (l, _) = symmetric_datum().traces(n);
        let p = harmonic_extensions(&l, &vec![0.0; n + 1]).unwrap();
        let e0 = p.v1.energy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mut q = p.v1.clone();
            for i in 1..n {
                for j in 1..n {
                    let v = q.at(i, j) + 1e-3 * rng.gen_range(-1.0..1.0);
                    q.set(i, j, v);
                }
            }
            assert!(q.energy() > e0);
        }
    }

    #[test]
    fn rejects_coarse_grid_and_bad_traces() {
        assert!(harmonic_extensions(&[0.0; 10], &[0.0; 10]).is_err());
        let mut g = vec![0.0; 65];
        g[0] = 1.0;
        assert!(harmonic_extensions(&g, &vec![0.0; 65]).is_err());
    }

    #[test]
    fn xi_estimate_bounds_and_monotonicity() {
        let data = random_data(40, 8, 1);
        let small = xi_estimate(64, &data[..20]).unwrap();
        let all = xi_estimate(64, &data).unwrap();
        assert!(small.xi_sq_estimate >= 1.0);
        assert!(all.xi_sq_estimate >= small.xi_sq_estimate);
        assert!(all.xi_sq_estimate <= 2.02);
        let one = BoundaryDatum { left: vec![1.0], bottom: vec![0.0] };
        assert_eq!(xi_estimate(64, &[one]).unwrap().xi_sq_estimate, 1.0);
    }

    #[test]
    fn decomposition_of_field_in_u1() {
        let n = 32;
        let mut v = LGrid::zeros(n);
        for a in 1..n {
            for b in n + 1..2 * n {
                v.set(a, b, ((a * b) as f64).sin());
            }
        }
        let d = min_energy_decompose(&v).unwrap();
        assert_eq!(d.v1, v);
        assert!(d.v2.values.iter().all(|&x| x == 0.0));
        assert!((d.energy - v.energy()).abs() <= 1e-12 * v.energy());
    }

    #[test]
    fn decomposition_identities_on_random_fields() {
        let n = 32;
        let xi2 = xi_estimate(n, &random_data(20, 8, 2)).unwrap().xi_sq_estimate;
        for seed in 0..5 {
            let v = LGrid::random(n, seed);
            let d = min_energy_decompose(&v).unwrap();
            for k in 0..v.values.len() {
                assert!((d.v1.values[k] + d.v2.values[k] - v.values[k]).abs() <= 1e-10);
            }
            assert!((d.energy - d.closed_form).abs() <= 1e-6 * d.energy);
            assert!(d.energy <= 2.0 * xi2 * v.energy());
        }
    }

    #[test]
    fn decomposition_rejects_boundary_values() {
        let mut v = LGrid::zeros(32);
        v.set(0, 40, 1.0);
        assert!(min_energy_decompose(&v).is_err());
    }

    #[test]
    fn report_serialises_grid_key() {
        let r = VerificationReport { singular_points: vec![[0.0, 0.0]], grad_bound_pass_rate: 1.0, xi_sq_estimate: 1.5, grid_n: 128 };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"grid_N\":128"));
    }
}
