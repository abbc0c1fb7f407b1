//! Midpoint quadrature rules: uniform or geometrically graded toward a focus,
//! tensorised over the axes of a box, and restrictable to sub-boxes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DfrError, Result};
use crate::geometry::{BoxDomain, Points};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Training,
    Validation,
    Overkill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradingKind {
    Uniform,
    Geometric,
}

/// How cells are laid out along each axis of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradingSpec {
    pub kind: GradingKind,
    /// Focus point in global coordinates (geometric only).
    pub focus: Option<Vec<f64>>,
    /// Ratio between consecutive cell widths, toward the focus (geometric only).
    pub ratio: f64,
    pub counts: Vec<usize>,
}

impl GradingSpec {
    pub fn uniform(counts: Vec<usize>) -> Self {
        Self { kind: GradingKind::Uniform, focus: None, ratio: 1.0, counts }
    }

    pub fn geometric(counts: Vec<usize>, focus: Vec<f64>, ratio: f64) -> Self {
        Self { kind: GradingKind::Geometric, focus: Some(focus), ratio, counts }
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.counts.iter().any(|&c| c == 0) {
            return Err(DfrError::InvalidQuadrature("cell counts must be at least 1".into()));
        }
        if self.kind == GradingKind::Geometric {
            if !(self.ratio > 0.0 && self.ratio < 1.0) {
                return Err(DfrError::InvalidQuadrature(format!("ratio {} not in (0,1)", self.ratio)));
            }
            match &self.focus {
                Some(f) if f.len() == self.counts.len() => {}
                _ => return Err(DfrError::InvalidQuadrature("geometric grading needs a focus per axis".into())),
            }
        }
        Ok(())
    }
}

/// Same grading with `ceil(2.17 * count)` cells per axis.
pub fn validation_counterpart(spec: &GradingSpec) -> GradingSpec {
    GradingSpec { counts: spec.counts.iter().map(|&c| (217 * c + 99) / 100).collect(), ..spec.clone() }
}

/// A 1D midpoint rule in a scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1D {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn from_widths(start: f64, widths: impl IntoIterator<Item = f64>) -> Self {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut left = start;
        for w in widths {
            nodes.push(left + 0.5 * w);
            weights.push(w);
            left += w;
        }
        Self { nodes, weights }
    }
}

/// Uniform midpoint rule on `(a, b)` with `n` cells.
pub fn uniform_1d(a: f64, b: f64, n: usize) -> Rule1D {
    let h = (b - a) / n as f64;
    Rule1D {
        nodes: (0..n).map(|i| a + (i as f64 + 0.5) * h).collect(),
        weights: vec![h; n],
    }
}

/// Cell widths `L (1-r) r^(N-1-i) / (1-r^N)`, smallest first.
fn geometric_widths(len: f64, n: usize, ratio: f64) -> Vec<f64> {
    let denom = 1.0 - ratio.powi(n as i32);
    (0..n).map(|i| len * (1.0 - ratio) * ratio.powi((n - 1 - i) as i32) / denom).collect()
}

/// Midpoint rule on `(a, b)` whose cells shrink geometrically toward `focus`.
///
/// A focus at an endpoint grades that side; an interior focus splits the
/// interval and grades both sides toward it, dividing the cells by length.
pub fn geometric_1d(a: f64, b: f64, n: usize, focus: f64, ratio: f64) -> Result<Rule1D> {
    if n == 0 {
        return Err(DfrError::InvalidQuadrature("cell count must be at least 1".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DfrError::InvalidQuadrature(format!("ratio {ratio} not in (0,1)")));
    }
    let len = b - a;
    let tol = 1e-12 * len.abs().max(1.0);
    if focus <= a + tol {
        return Ok(Rule1D::from_widths(a, geometric_widths(len, n, ratio)));
    }
    if focus >= b - tol {
        let mut w = geometric_widths(len, n, ratio);
        w.reverse();
        return Ok(Rule1D::from_widths(a, w));
    }
    if n < 2 {
        return Err(DfrError::InvalidQuadrature("interior focus needs at least 2 cells".into()));
    }
    let left_len = focus - a;
    let n_left = ((n as f64 * left_len / len).round() as usize).clamp(1, n - 1);
    let n_right = n - n_left;
    let mut lw = geometric_widths(left_len, n_left, ratio);
    lw.reverse();
    let rw = geometric_widths(b - focus, n_right, ratio);
    let mut r = Rule1D::from_widths(a, lw);
    let right = Rule1D::from_widths(focus, rw);
    r.nodes.extend(right.nodes);
    r.weights.extend(right.weights);
    Ok(r)
}

/// Tensor structure of a rule: nodes `origin + sum_j s_j u_j` over per-axis 1D rules
/// in the parameters `s_j` along unit directions `u_j`. Node order is row-major
/// (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorLayout {
    pub origin: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
    pub axes: Vec<Rule1D>,
}

impl TensorLayout {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    /// Offsets and lengths of `b` along this layout's axes, if its edges are
    /// parallel to the layout directions (same order, same orientation).
    pub fn box_extent(&self, b: &BoxDomain) -> Option<Vec<(f64, f64)>> {
        if b.dim() != self.directions.len() {
            return None;
        }
        let lengths = b.side_lengths();
        let mut out = Vec::with_capacity(b.dim());
        for (j, u) in self.directions.iter().enumerate() {
            let e = &b.edges[j];
            let along: f64 = e.iter().zip(u).map(|(a, c)| a * c).sum();
            if (along - lengths[j]).abs() > 1e-12 * lengths[j] {
                return None;
            }
            let off: f64 = b.corner.iter().zip(&self.origin).zip(u).map(|((c, o), d)| (c - o) * d).sum();
            out.push((off, lengths[j]));
        }
        Some(out)
    }
}

/// Nodes and positive weights of a quadrature over some region.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Points,
    pub weights: Vec<f64>,
    pub role: Role,
    pub layout: Option<TensorLayout>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.nodes.dim()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * g(x)).sum()
    }

    /// Builds the rule from a tensor layout.
    pub fn from_layout(layout: TensorLayout, role: Role) -> Self {
        let n = layout.axes.len();
        let mut nodes = Points::empty(n);
        let mut weights = Vec::new();
        let point = |s: &[f64]| -> Vec<f64> {
            let mut x = layout.origin.clone();
            for (sj, u) in s.iter().zip(&layout.directions) {
                for (xi, ui) in x.iter_mut().zip(u) {
                    *xi += sj * ui;
                }
            }
            x
        };
        match n {
            1 => {
                for (s, w) in layout.axes[0].nodes.iter().zip(&layout.axes[0].weights) {
                    nodes.push(&point(&[*s]));
                    weights.push(*w);
                }
            }
            _ => {
                let (a0, a1) = (&layout.axes[0], &layout.axes[1]);
                for (s0, w0) in a0.nodes.iter().zip(&a0.weights) {
                    for (s1, w1) in a1.nodes.iter().zip(&a1.weights) {
                        nodes.push(&point(&[*s0, *s1]));
                        weights.push(w0 * w1);
                    }
                }
            }
        }
        Self { nodes, weights, role, layout: Some(layout) }
    }

    /// Drops the nodes for which `keep` is false; the tensor layout is lost.
    pub fn filter(&self, keep: impl Fn(&[f64]) -> bool) -> QuadratureRule {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.nodes.get(i))).collect();
        QuadratureRule {
            nodes: self.nodes.select(&idx),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            role: self.role,
            layout: None,
        }
    }

    /// Writes `x[,y],weight` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header = if self.dim() == 1 { "x,weight" } else { "x,y,weight" };
        writeln!(w, "{header}")?;
        for (x, wt) in self.nodes.iter().zip(&self.weights) {
            let coords: Vec<String> = x.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(w, "{},{wt:.17e}", coords.join(","))?;
        }
        Ok(())
    }
}

/// Tensor midpoint rule over a (possibly rotated) box.
pub fn build_rule(region: &BoxDomain, spec: &GradingSpec, role: Role) -> Result<QuadratureRule> {
    spec.validate()?;
    let n = region.dim();
    if spec.counts.len() != n {
        return Err(DfrError::InvalidQuadrature("one cell count per axis required".into()));
    }
    let lengths = region.side_lengths();
    let directions: Vec<Vec<f64>> =
        region.edges.iter().zip(&lengths).map(|(e, l)| e.iter().map(|c| c / l).collect()).collect();
    let (focus_t, _) = match &spec.focus {
        Some(f) => {
            let (t, inside) = region.local_coords(f);
            (Some(t), inside)
        }
        None => (None, false),
    };
    let axes = (0..n)
        .map(|j| match spec.kind {
            GradingKind::Uniform => Ok(uniform_1d(0.0, lengths[j], spec.counts[j])),
            GradingKind::Geometric => {
                let tf = focus_t.as_ref().map(|t| t[j]).unwrap_or(0.0);
                if !(-1e-12..=1.0 + 1e-12).contains(&tf) {
                    return Err(DfrError::InvalidQuadrature("focus lies outside the region".into()));
                }
                geometric_1d(0.0, lengths[j], spec.counts[j], tf * lengths[j], spec.ratio)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let layout = TensorLayout { origin: region.corner.clone(), directions, axes };
    Ok(QuadratureRule::from_layout(layout, role))
}

/// Indices of the nodes of `rule` strictly inside `b`.
pub fn restrict_indices(rule: &QuadratureRule, b: &BoxDomain) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..rule.len()).filter(|&i| b.contains(rule.nodes.get(i))).collect();
    if idx.is_empty() {
        return Err(DfrError::EmptyRestriction(b.id));
    }
    Ok(idx)
}

/// Nodes strictly inside `b` with unchanged weights.
///
/// When the rule is a tensor rule aligned with `b` the restriction keeps a tensor layout.
pub fn restrict(rule: &QuadratureRule, b: &BoxDomain) -> Result<QuadratureRule> {
    let idx = restrict_indices(rule, b)?;
    let layout = rule.layout.as_ref().and_then(|l| {
        let ext = l.box_extent(b)?;
        let axes: Vec<Rule1D> = l
            .axes
            .iter()
            .zip(&ext)
            .map(|(ax, &(off, len))| {
                let keep: Vec<usize> = (0..ax.len())
                    .filter(|&i| {
                        let t = (ax.nodes[i] - off) / len;
                        t > 0.0 && t < 1.0
                    })
                    .collect();
                Rule1D {
                    nodes: keep.iter().map(|&i| ax.nodes[i]).collect(),
                    weights: keep.iter().map(|&i| ax.weights[i]).collect(),
                }
            })
            .collect();
        let count: usize = axes.iter().map(|a| a.len()).product();
        // box_contains and the per-axis test can disagree only on round-off at faces
        (count == idx.len()).then(|| TensorLayout { origin: l.origin.clone(), directions: l.directions.clone(), axes })
    });
    match layout {
        Some(layout) => Ok(QuadratureRule::from_layout(layout, rule.role)),
        None => Ok(QuadratureRule {
            nodes: rule.nodes.select(&idx),
            weights: idx.iter().map(|&i| rule.weights[i]).collect(),
            role: rule.role,
            layout: None,
        }),
    }
}
