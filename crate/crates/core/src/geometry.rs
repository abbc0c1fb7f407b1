//! Rectangular subdomains, overlapping covers and 1D refinement candidates.
//!
//! A [`BoxDomain`] is an open n-rectangle (n = 1 or 2) stored as a corner plus
//! mutually orthogonal edge vectors, so rotated squares and axis-aligned boxes
//! share one representation. A [`Cover`] is a list of boxes whose designated
//! base members define the physical domain as their union.

use serde::{Deserialize, Serialize};

use crate::error::{DfrError, Result};

const ORTHO_TOL: f64 = 1e-12;

/// Boundary tag of one face of a box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceBc {
    Dirichlet,
    Free,
}

/// A batch of points in R^dim stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len() % dim == 0, "coordinate buffer does not match dimension");
        Self { dim, coords }
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Self {
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim);
            coords.extend_from_slice(r);
        }
        Self { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim);
        self.coords.extend_from_slice(x);
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Subset of points selected by index.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.get(i));
        }
        Points { dim: self.dim, coords }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// An open n-rectangle, possibly rotated, with per-face boundary tags.
///
/// `face_bc` holds two tags per axis: `[axis0 low, axis0 high, axis1 low, ...]`,
/// where "low" is the face through `corner`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub id: usize,
    pub level: u32,
    pub parent: Option<usize>,
    pub corner: Vec<f64>,
    pub edges: Vec<Vec<f64>>,
    pub face_bc: Vec<FaceBc>,
}

impl BoxDomain {
    pub fn new(id: usize, corner: Vec<f64>, edges: Vec<Vec<f64>>, face_bc: Vec<FaceBc>) -> Result<Self> {
        let b = Self { id, level: 0, parent: None, corner, edges, face_bc };
        b.validate()?;
        Ok(b)
    }

    /// Axis-aligned box `(lo_0, hi_0) x ... ` with every face Dirichlet.
    pub fn axis_aligned(id: usize, lo: &[f64], hi: &[f64]) -> Result<Self> {
        let n = lo.len();
        if hi.len() != n {
            return Err(DfrError::InvalidBox("bound lengths differ".into()));
        }
        let edges = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = hi[j] - lo[j];
                e
            })
            .collect();
        Self::new(id, lo.to_vec(), edges, vec![FaceBc::Dirichlet; 2 * n])
    }

    /// The interval `(a, b)` with Dirichlet ends.
    pub fn interval(id: usize, a: f64, b: f64) -> Result<Self> {
        Self::axis_aligned(id, &[a], &[b])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.corner.len();
        if !(1..=2).contains(&n) {
            return Err(DfrError::UnsupportedDimension(n));
        }
        if self.edges.len() != n || self.edges.iter().any(|e| e.len() != n) {
            return Err(DfrError::InvalidBox("edge vectors do not match dimension".into()));
        }
        if self.face_bc.len() != 2 * n {
            return Err(DfrError::InvalidBox("need two face tags per axis".into()));
        }
        for e in &self.edges {
            let l = norm(e);
            if !(l > 0.0) || !l.is_finite() {
                return Err(DfrError::InvalidBox("side lengths must be positive".into()));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dot(&self.edges[i], &self.edges[j]).abs();
                if d > ORTHO_TOL * norm(&self.edges[i]) * norm(&self.edges[j]) {
                    return Err(DfrError::InvalidBox("edge vectors are not orthogonal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        self.edges.iter().map(|e| norm(e)).collect()
    }

    pub fn measure(&self) -> f64 {
        self.side_lengths().iter().product()
    }

    pub fn is_axis_aligned(&self) -> bool {
        self.edges.iter().enumerate().all(|(j, e)| {
            e.iter().enumerate().all(|(i, &c)| i == j || c == 0.0) && e[j] > 0.0
        })
    }

    /// Unit cube coordinates of `x`, and whether `x` lies in the open box.
    pub fn local_coords(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let rel: Vec<f64> = x.iter().zip(&self.corner).map(|(a, c)| a - c).collect();
        let t: Vec<f64> = self.edges.iter().map(|e| dot(&rel, e) / dot(e, e)).collect();
        let inside = t.iter().all(|&tj| tj > 0.0 && tj < 1.0);
        (t, inside)
    }

    pub fn from_local(&self, t: &[f64]) -> Vec<f64> {
        let mut x = self.corner.clone();
        for (tj, e) in t.iter().zip(&self.edges) {
            for (xi, ei) in x.iter_mut().zip(e) {
                *xi += tj * ei;
            }
        }
        x
    }

    /// Membership in the open box.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.local_coords(x).1
    }

    /// Membership in the closed box, with slack `tol` in unit coordinates.
    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        self.local_coords(x).0.iter().all(|&t| t >= -tol && t <= 1.0 + tol)
    }

    /// Corners of the box (2 in 1D, 4 in 2D listed counter-clockwise from `corner`).
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self.dim() {
            1 => vec![self.from_local(&[0.0]), self.from_local(&[1.0])],
            _ => [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
                .iter()
                .map(|t| self.from_local(t))
                .collect(),
        }
    }

    /// Bounds of a 1D box.
    pub fn interval_bounds(&self) -> Option<(f64, f64)> {
        if self.dim() != 1 {
            return None;
        }
        let a = self.corner[0];
        let b = a + self.edges[0][0];
        Some((a.min(b), a.max(b)))
    }

    /// Geometric equality up to `tol` (ids and tags ignored).
    pub fn same_region(&self, other: &BoxDomain, tol: f64) -> bool {
        self.dim() == other.dim()
            && self.corner.iter().zip(&other.corner).all(|(a, b)| (a - b).abs() <= tol)
            && self
                .edges
                .iter()
                .zip(&other.edges)
                .all(|(e, f)| e.iter().zip(f).all(|(a, b)| (a - b).abs() <= tol))
    }
}

/// Overlapping cover of a domain by boxes. The domain is the union of the base boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct Cover {
    pub boxes: Vec<BoxDomain>,
    base: Vec<usize>,
}

impl Cover {
    /// Cover whose base set is every supplied box.
    pub fn new(boxes: Vec<BoxDomain>) -> Self {
        let base = (0..boxes.len()).collect();
        Self { boxes, base }
    }

    pub fn with_base(boxes: Vec<BoxDomain>, base: Vec<usize>) -> Result<Self> {
        if base.iter().any(|&i| i >= boxes.len()) || base.is_empty() {
            return Err(DfrError::InvalidBox("base set must index existing boxes".into()));
        }
        Ok(Self { boxes, base })
    }

    pub fn base_boxes(&self) -> impl Iterator<Item = &BoxDomain> {
        self.base.iter().map(|&i| &self.boxes[i])
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn next_id(&self) -> usize {
        self.boxes.iter().map(|b| b.id + 1).max().unwrap_or(0)
    }

    /// Appends a box, assigning it a fresh id which is returned.
    pub fn push(&mut self, mut b: BoxDomain) -> usize {
        b.id = self.next_id();
        let id = b.id;
        self.boxes.push(b);
        id
    }

    pub fn get(&self, id: usize) -> Option<&BoxDomain> {
        self.boxes.iter().find(|b| b.id == id)
    }

    /// Membership in the open domain (union of base boxes); boundary points are outside.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.base_boxes().any(|b| b.contains(x))
    }

    /// Number of boxes containing `x`.
    pub fn overlap_count(&self, x: &[f64]) -> usize {
        self.boxes.iter().filter(|b| b.contains(x)).count()
    }

    /// Maximum overlap count over the given samples.
    pub fn overlap_constant(&self, samples: &Points) -> usize {
        samples.iter().map(|x| self.overlap_count(x)).max().unwrap_or(0)
    }

    /// Checks by sampling that every box lies inside the domain.
    pub fn boxes_inside_domain(&self, per_axis: usize) -> bool {
        self.boxes.iter().all(|b| {
            let n = b.dim();
            let h = 1.0 / per_axis as f64;
            let idx = |i: usize| (i as f64 + 0.5) * h;
            if n == 1 {
                (0..per_axis).all(|i| self.contains(&b.from_local(&[idx(i)])))
            } else {
                (0..per_axis)
                    .all(|i| (0..per_axis).all(|j| self.contains(&b.from_local(&[idx(i), idx(j)]))))
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.boxes)?)
    }

    /// Parses a JSON box array; the base set is every box of level 0.
    pub fn from_json(s: &str) -> Result<Self> {
        let boxes: Vec<BoxDomain> = serde_json::from_str(s)?;
        for b in &boxes {
            b.validate()?;
        }
        let base: Vec<usize> = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.level == 0)
            .map(|(i, _)| i)
            .collect();
        Self::with_base(boxes, base)
    }
}

/// Cover of `(knots[0], knots[last])` by the supports of the interior-knot hat functions.
///
/// `bc` tags the two domain endpoints; faces interior to the domain are Dirichlet.
pub fn make_hat_cover(knots: &[f64], bc: [FaceBc; 2]) -> Result<Cover> {
    if knots.len() < 3 {
        return Err(DfrError::DegeneratePartition(format!("{} knots, need at least 3", knots.len())));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DfrError::DegeneratePartition("knots must be strictly increasing".into()));
    }
    let last = knots.len() - 1;
    let boxes = (1..last)
        .map(|i| {
            let mut b = BoxDomain::interval(i - 1, knots[i - 1], knots[i + 1])?;
            if i == 1 {
                b.face_bc[0] = bc[0];
            }
            if i + 1 == last {
                b.face_bc[1] = bc[1];
            }
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Cover::new(boxes))
}

/// Three overlapping half-width children `(a,m)`, `(q1,q3)`, `(m,b)` of a 1D box.
///
/// Children carry id 0; ids are assigned when they join a [`Cover`].
pub fn subdivide(parent: &BoxDomain) -> Result<Vec<BoxDomain>> {
    let (a, b) = parent.interval_bounds().ok_or(DfrError::UnsupportedDimension(parent.dim()))?;
    let m = 0.5 * (a + b);
    let q1 = 0.25 * (3.0 * a + b);
    let q3 = 0.25 * (a + 3.0 * b);
    [(a, m), (q1, q3), (m, b)]
        .iter()
        .map(|&(lo, hi)| {
            let mut c = BoxDomain::interval(0, lo, hi)?;
            c.level = parent.level + 1;
            c.parent = Some(parent.id);
            Ok(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn local_coords_axis_midpoint() {
        let b = BoxDomain::interval(0, 0.0, PI).unwrap();
        let (t, inside) = b.local_coords(&[PI / 2.0]);
        assert!((t[0] - 0.5).abs() < 1e-15);
        assert!(inside);
    }

    #[test]
    fn local_coords_rotated_square() {
        let b = BoxDomain::new(
            1,
            vec![0.0, 0.0],
            vec![vec![1.0, -1.0], vec![1.0, 1.0]],
            vec![FaceBc::Dirichlet; 4],
        )
        .unwrap();
        let (t, inside) = b.local_coords(&[1.0, 0.0]);
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] - 0.5).abs() < 1e-15);
        assert!(inside);
        let back = b.from_local(&t);
        assert!((back[0] - 1.0).abs() < 1e-15 && back[1].abs() < 1e-15);
    }

    #[test]
    fn local_coords_outside() {
        let b = BoxDomain::axis_aligned(0, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(!b.local_coords(&[2.0, 0.5]).1);
        // boundary points are outside the open box
        assert!(!b.contains(&[0.0, 0.5]));
    }

    #[test]
    fn rejects_non_orthogonal_edges() {
        let r = BoxDomain::new(0, vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec![FaceBc::Dirichlet; 4]);
        assert!(r.is_err());
        assert!(BoxDomain::interval(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn hat_cover_quarter_pi() {
        let knots: Vec<f64> = (0..5).map(|i| i as f64 * PI / 4.0).collect();
        let c = make_hat_cover(&knots, [FaceBc::Dirichlet; 2]).unwrap();
        assert_eq!(c.len(), 3);
        for (i, b) in c.boxes.iter().enumerate() {
            let (a, bb) = b.interval_bounds().unwrap();
            assert!((a - i as f64 * PI / 4.0).abs() < 1e-15);
            assert!((bb - (i as f64 + 2.0) * PI / 4.0).abs() < 1e-15);
            assert_eq!(b.level, 0);
            assert!(b.face_bc.iter().all(|&f| f == FaceBc::Dirichlet));
        }
    }

    #[test]
    fn hat_cover_small_cases() {
        let c = make_hat_cover(&[0.0, 0.5, 1.0], [FaceBc::Dirichlet; 2]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.boxes[0].interval_bounds(), Some((0.0, 1.0)));

        let c = make_hat_cover(&[0.0, 1.0, 2.0, 3.0], [FaceBc::Dirichlet; 2]).unwrap();
        assert_eq!(c.boxes[0].interval_bounds(), Some((0.0, 2.0)));
        assert_eq!(c.boxes[1].interval_bounds(), Some((1.0, 3.0)));
        assert_eq!(c.overlap_count(&[1.5]), 2);

        match make_hat_cover(&[0.0, 1.0], [FaceBc::Dirichlet; 2]) {
            Err(DfrError::DegeneratePartition(_)) => {}
            other => panic!("expected degenerate partition, got {other:?}"),
        }
    }

    #[test]
    fn hat_cover_free_endpoint() {
        let c = make_hat_cover(&[0.0, 1.0, 2.0, 3.0], [FaceBc::Free, FaceBc::Dirichlet]).unwrap();
        assert_eq!(c.boxes[0].face_bc, vec![FaceBc::Free, FaceBc::Dirichlet]);
        assert_eq!(c.boxes[1].face_bc, vec![FaceBc::Dirichlet, FaceBc::Dirichlet]);
    }

    #[test]
    fn subdivide_examples() {
        let b = BoxDomain::interval(7, PI / 2.0, PI).unwrap();
        let ch = subdivide(&b).unwrap();
        let expect = [(PI / 2.0, 3.0 * PI / 4.0), (5.0 * PI / 8.0, 7.0 * PI / 8.0), (3.0 * PI / 4.0, PI)];
        for (c, (a, bb)) in ch.iter().zip(expect) {
            let (ca, cb) = c.interval_bounds().unwrap();
            assert!((ca - a).abs() < 1e-14 && (cb - bb).abs() < 1e-14);
            assert_eq!(c.level, 1);
            assert_eq!(c.parent, Some(7));
        }

        let unit = BoxDomain::interval(0, 0.0, 1.0).unwrap();
        let ch = subdivide(&unit).unwrap();
        let grand = subdivide(&ch[0]).unwrap();
        let bounds: Vec<_> = grand.iter().map(|g| g.interval_bounds().unwrap()).collect();
        assert_eq!(bounds, vec![(0.0, 0.25), (0.125, 0.375), (0.25, 0.5)]);
        assert!(grand.iter().all(|g| g.level == 2));
    }

    #[test]
    fn subdivide_rejects_2d() {
        let b = BoxDomain::axis_aligned(0, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(matches!(subdivide(&b), Err(DfrError::UnsupportedDimension(2))));
    }

    #[test]
    fn cover_json_field_order() {
        let c = make_hat_cover(&[0.0, 0.5, 1.0], [FaceBc::Dirichlet; 2]).unwrap();
        let s = serde_json::to_string(&c.boxes).unwrap();
        assert_eq!(
            s,
            r#"[{"id":0,"level":0,"parent":null,"corner":[0.0],"edges":[[1.0]],"face_bc":["dirichlet","dirichlet"]}]"#
        );
        let back = Cover::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn pentagon_membership_ties_are_outside() {
        let sq = BoxDomain::axis_aligned(0, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let rot = BoxDomain::new(
            1,
            vec![0.0, 0.0],
            vec![vec![1.0, -1.0], vec![1.0, 1.0]],
            vec![FaceBc::Dirichlet; 4],
        )
        .unwrap();
        let c = Cover::new(vec![sq, rot]);
        assert!(c.contains(&[1.5, 0.0]));
        assert!(!c.contains(&[2.0, 0.0]));
        assert!(!c.contains(&[1.5, 0.5]));
        assert!(c.contains(&[0.9, 0.9]));
        assert!(c.boxes_inside_domain(20));
        assert_eq!(c.overlap_count(&[0.5, 0.0]), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn children_cover_parent(a in -10.0f64..10.0, w in 1e-3f64..10.0, s in 0.0f64..1.0) {
                let b = BoxDomain::interval(0, a, a + w).unwrap();
                let ch = subdivide(&b).unwrap();
                let (ca, _) = ch[0].interval_bounds().unwrap();
                let (_, cb) = ch[2].interval_bounds().unwrap();
                prop_assert!((ca - a).abs() <= 1e-14 * (1.0 + a.abs()));
                prop_assert!((cb - (a + w)).abs() <= 1e-14 * (1.0 + (a + w).abs()));
                for c in &ch {
                    let (l, r) = c.interval_bounds().unwrap();
                    prop_assert!(((r - l) - w / 2.0).abs() <= 1e-12 * (1.0 + w));
                }
                let x = a + w * (0.001 + 0.998 * s);
                let count = ch.iter().filter(|c| c.contains(&[x])).count();
                let on_knot = ch.iter().any(|c| {
                    let (l, r) = c.interval_bounds().unwrap();
                    x == l || x == r
                });
                prop_assert!(count >= 1 || on_knot);
                prop_assert!(count <= 2);
            }

            #[test]
            fn hat_cover_overlap_at_most_two(n in 3usize..12, s in 0.0f64..1.0) {
                let knots: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 + (i * i) as f64 * 0.01).collect();
                let c = make_hat_cover(&knots, [FaceBc::Dirichlet; 2]).unwrap();
                let x = knots[0] + (knots[n - 1] - knots[0]) * (0.0005 + 0.999 * s);
                let k = c.overlap_count(&[x]);
                prop_assert!(k <= 2);
                prop_assert!(k >= 1 || knots.contains(&x));
            }
        }
    }
}
