//! Residual pairings `r_k = b(u, Phi_k) - l(Phi_k)` against the orthonormal
//! test functions of every box, and the resulting star-norm loss.
//!
//! Quadrature nodes live in *patches* (global rules). Each box owns a subset of
//! one patch, so the network is evaluated once per patch and shared by all
//! boxes that integrate on it.
//!
//! The source enters as `r_k = sum_q w_q (grad u . grad Phi_k + s Phi_k) - sum_{Gamma_N} w g Phi_k`.
//! For `-Laplace u = f` the source is `s = -f`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{axis_unit, eval_mode, mode_norm, mode_set, ModeIndex};
use crate::error::{DfrError, Result};
use crate::geometry::BoxDomain;
use crate::model::{Features, FieldEval};
use crate::quadrature::{restrict, restrict_indices, QuadratureRule, Role};

enum Pairing {
    /// `g[j]` is `K x Q` with entries `w_q d_j Phi_k(x_q)`.
    Dense { g: Vec<DMatrix<f64>> },
    /// Separable 2D form on an aligned tensor sub-grid of shape `n0 x n1`.
    ///
    /// `t[a]`/`d[a]` hold weighted 1D values/derivatives (`K_a x n_a`),
    /// `inv_norm` is `K1 x K0` (transposed mode grid).
    Tensor { dirs: [Vec<f64>; 2], t: [DMatrix<f64>; 2], d: [DMatrix<f64>; 2], inv_norm: DMatrix<f64> },
}

/// Test functions of one box together with their quadrature tables.
pub struct BoxOperator {
    pub box_id: usize,
    pub domain: BoxDomain,
    pub modes: Vec<ModeIndex>,
    pub patch: usize,
    /// Patch node indices strictly inside the box.
    pub indices: Vec<usize>,
    /// `l(Phi_k)`; `r = pair(grad u) - rhs`.
    pub rhs: Vec<f64>,
    dim: usize,
    pairing: Pairing,
}

impl std::fmt::Debug for BoxOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoxOperator")
            .field("box_id", &self.box_id)
            .field("modes", &self.modes.len())
            .field("patch", &self.patch)
            .field("nodes", &self.indices.len())
            .field("separable", &matches!(self.pairing, Pairing::Tensor { .. }))
            .finish()
    }
}

/// Mode counts per axis if `modes` is exactly the rectangular set of `b`.
fn rectangular_counts(b: &BoxDomain, modes: &[ModeIndex]) -> Option<Vec<usize>> {
    let counts: Vec<usize> = (0..b.dim()).map(|j| modes.iter().map(|m| m.k[j] as usize).max().unwrap_or(0)).collect();
    let full = mode_set(b, &counts).ok()?;
    (full.as_slice() == modes).then_some(counts)
}

impl BoxOperator {
    /// Builds the tables for `modes` on `domain`, integrating with the nodes of
    /// `rule` (patch number `patch`) strictly inside the box.
    pub fn new(
        domain: &BoxDomain,
        modes: Vec<ModeIndex>,
        patch: usize,
        rule: &QuadratureRule,
        source: &dyn Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        if modes.is_empty() {
            return Err(DfrError::InvalidBasis(format!("box {} has no modes", domain.id)));
        }
        let n = domain.dim();
        let indices = restrict_indices(rule, domain)?;
        let sub = restrict(rule, domain)?;
        let k = modes.len();
        let tensor = if n == 2 { Self::tensor_tables(domain, &modes, &sub) } else { None };
        let src: Vec<f64> = sub.nodes.iter().map(source).collect();
        let (pairing, rhs) = match tensor {
            Some(Pairing::Tensor { dirs, t, d, inv_norm }) => {
                let s = DMatrix::from_column_slice(t[1].ncols(), t[0].ncols(), &src);
                let rt = (&t[1] * s * t[0].transpose()).component_mul(&inv_norm);
                let rhs = flatten_transposed(&rt).into_iter().map(|v| -v).collect();
                (Pairing::Tensor { dirs, t, d, inv_norm }, rhs)
            }
            _ => {
                let q = sub.len();
                let mut g = vec![DMatrix::zeros(k, q); n];
                let mut rhs = vec![0.0; k];
                for (qq, (x, w)) in sub.nodes.iter().zip(&sub.weights).enumerate() {
                    for (kk, m) in modes.iter().enumerate() {
                        let e = eval_mode(m, domain, x);
                        rhs[kk] -= w * src[qq] * e.value;
                        for j in 0..n {
                            g[j][(kk, qq)] = w * e.gradient[j];
                        }
                    }
                }
                (Pairing::Dense { g }, rhs)
            }
        };
        Ok(Self { box_id: domain.id, domain: domain.clone(), modes, patch, indices, rhs, dim: n, pairing })
    }

    fn tensor_tables(domain: &BoxDomain, modes: &[ModeIndex], sub: &QuadratureRule) -> Option<Pairing> {
        let layout = sub.layout.as_ref()?;
        let ext = layout.box_extent(domain)?;
        let counts = rectangular_counts(domain, modes)?;
        let variants = &modes[0].variants;
        let mut t: Vec<DMatrix<f64>> = Vec::with_capacity(2);
        let mut d: Vec<DMatrix<f64>> = Vec::with_capacity(2);
        for a in 0..2 {
            let ax = &layout.axes[a];
            let (off, len) = ext[a];
            let mut ta = DMatrix::zeros(counts[a], ax.len());
            let mut da = DMatrix::zeros(counts[a], ax.len());
            for (i, (s, w)) in ax.nodes.iter().zip(&ax.weights).enumerate() {
                let tt = (s - off) / len;
                for kk in 0..counts[a] {
                    let (v, dv, _) = axis_unit(variants[a], kk as u32 + 1, len, tt);
                    ta[(kk, i)] = w * v;
                    da[(kk, i)] = w * dv;
                }
            }
            t.push(ta);
            d.push(da);
        }
        let lengths = domain.side_lengths();
        let mut inv_norm = DMatrix::zeros(counts[1], counts[0]);
        for m in modes {
            inv_norm[(m.k[1] as usize - 1, m.k[0] as usize - 1)] = 1.0 / mode_norm(m, &lengths);
        }
        let d1 = d.pop().unwrap();
        let d0 = d.pop().unwrap();
        let t1 = t.pop().unwrap();
        let t0 = t.pop().unwrap();
        Some(Pairing::Tensor {
            dirs: [layout.directions[0].clone(), layout.directions[1].clone()],
            t: [t0, t1],
            d: [d0, d1],
            inv_norm,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.pairing, Pairing::Tensor { .. })
    }

    /// `sum_q w_q grad v(x_q) . grad Phi_k(x_q)` for a field given by its gradient at the box nodes
    /// (`n` entries per node, in `indices` order).
    pub fn pair_gradient(&self, grad: &[f64]) -> Vec<f64> {
        let n = self.dim;
        match &self.pairing {
            Pairing::Dense { g } => {
                let q = self.indices.len();
                let mut out = DVector::zeros(self.modes.len());
                for (j, gj) in g.iter().enumerate() {
                    let col = DVector::from_iterator(q, (0..q).map(|qq| grad[qq * n + j]));
                    out.gemv(1.0, gj, &col, 1.0);
                }
                out.as_slice().to_vec()
            }
            Pairing::Tensor { dirs, t, d, inv_norm } => {
                let (n0, n1) = (t[0].ncols(), t[1].ncols());
                let m: Vec<DMatrix<f64>> = (0..2)
                    .map(|a| {
                        let u = &dirs[a];
                        DMatrix::from_iterator(n1, n0, (0..n0 * n1).map(|q| grad[2 * q] * u[0] + grad[2 * q + 1] * u[1]))
                    })
                    .collect();
                let rt = (&t[1] * &m[0]) * d[0].transpose() + (&d[1] * &m[1]) * t[0].transpose();
                flatten_transposed(&rt.component_mul(inv_norm))
            }
        }
    }

    /// Adjoint of [`BoxOperator::pair_gradient`]: the gradient field whose
    /// pairing with any `grad v` equals `rbar . pair_gradient(grad v)`.
    pub fn pair_gradient_adjoint(&self, rbar: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let q = self.indices.len();
        let mut out = vec![0.0; q * n];
        match &self.pairing {
            Pairing::Dense { g } => {
                let rb = DVector::from_column_slice(rbar);
                for (j, gj) in g.iter().enumerate() {
                    let v = gj.tr_mul(&rb);
                    for (qq, val) in v.iter().enumerate() {
                        out[qq * n + j] = *val;
                    }
                }
            }
            Pairing::Tensor { dirs, t, d, inv_norm } => {
                let (k0, k1) = (t[0].nrows(), t[1].nrows());
                let mut rt = DMatrix::zeros(k1, k0);
                for a in 0..k0 {
                    for b in 0..k1 {
                        rt[(b, a)] = rbar[a * k1 + b] * inv_norm[(b, a)];
                    }
                }
                let m0 = t[1].tr_mul(&rt) * &d[0];
                let m1 = d[1].tr_mul(&rt) * &t[0];
                for (qq, (a, b)) in m0.as_slice().iter().zip(m1.as_slice()).enumerate() {
                    out[2 * qq] = a * dirs[0][0] + b * dirs[1][0];
                    out[2 * qq + 1] = a * dirs[0][1] + b * dirs[1][1];
                }
            }
        }
        out
    }

    /// Residual pairings of a field evaluated on this box's patch.
    pub fn pairings(&self, field: &FieldEval) -> Vec<f64> {
        let grad = self.gather(&field.grad);
        let mut r = self.pair_gradient(&grad);
        for (rv, b) in r.iter_mut().zip(&self.rhs) {
            *rv -= b;
        }
        r
    }

    /// `L_hat = sum_k r_k^2` for a field on this box's patch.
    pub fn local_loss(&self, field: &FieldEval) -> f64 {
        self.pairings(field).iter().map(|r| r * r).sum()
    }

    fn gather(&self, patch_grad: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut out = Vec::with_capacity(self.indices.len() * n);
        for &i in &self.indices {
            out.extend_from_slice(&patch_grad[i * n..(i + 1) * n]);
        }
        out
    }

    /// Columns `b(chi h_i, Phi_k)` for every feature on this box (`K x F`).
    pub fn feature_block(&self, feats: &Features) -> DMatrix<f64> {
        let f = feats.values.nrows();
        let n = self.dim;
        let q = self.indices.len();
        match &self.pairing {
            Pairing::Dense { g } => {
                let mut out = DMatrix::zeros(self.modes.len(), f);
                for (j, gj) in g.iter().enumerate() {
                    let sub = DMatrix::from_fn(q, f, |qq, i| feats.grads[j][(i, self.indices[qq])]);
                    out.gemm(1.0, gj, &sub, 1.0);
                }
                out
            }
            Pairing::Tensor { .. } => {
                let mut out = DMatrix::zeros(self.modes.len(), f);
                let mut grad = vec![0.0; q * n];
                for i in 0..f {
                    for (qq, &p) in self.indices.iter().enumerate() {
                        for j in 0..n {
                            grad[qq * n + j] = feats.grads[j][(i, p)];
                        }
                    }
                    let col = self.pair_gradient(&grad);
                    out.column_mut(i).copy_from_slice(&col);
                }
                out
            }
        }
    }

    /// Subtracts `sum w g Phi_k` over boundary nodes of `face_rule` lying on the closed box.
    pub fn add_neumann(&mut self, face_rule: &QuadratureRule, g: &dyn Fn(&[f64]) -> f64) {
        for (x, w) in face_rule.nodes.iter().zip(&face_rule.weights) {
            if !self.domain.contains_closed(x, 1e-12) {
                continue;
            }
            let gv = g(x);
            for (b, m) in self.rhs.iter_mut().zip(&self.modes) {
                *b += w * gv * eval_mode(m, &self.domain, x).value;
            }
        }
    }
}

fn flatten_transposed(rt: &DMatrix<f64>) -> Vec<f64> {
    // rt is K1 x K0; modes are ordered k0-major, so reading column-major is the mode order
    rt.as_slice().to_vec()
}

/// Per-box pairings, boxes in the operator's order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingVector {
    pub per_box: Vec<(usize, Vec<f64>)>,
}

impl PairingVector {
    pub fn flat(&self) -> Vec<f64> {
        self.per_box.iter().flat_map(|(_, r)| r.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.per_box.iter().all(|(_, r)| r.iter().all(|v| v.is_finite()))
    }
}

/// `L_hat(u; Omega_i)` per box and their sum, the squared star-norm estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_box: BTreeMap<usize, f64>,
    pub total: f64,
    pub role: Role,
}

impl LossBreakdown {
    /// `{"<box_id>": value, ..., "total": value}`.
    pub fn to_json(&self) -> Result<String> {
        let mut map = serde_json::Map::new();
        for (id, v) in &self.per_box {
            map.insert(id.to_string(), serde_json::json!(v));
        }
        map.insert("total".into(), serde_json::json!(self.total));
        Ok(serde_json::to_string(&serde_json::Value::Object(map))?)
    }

    pub fn max_part(&self) -> f64 {
        self.per_box.values().copied().fold(0.0, f64::max)
    }
}

/// Squares and sums per box; boxes are reduced in id order.
pub fn loss(pairings: &PairingVector, role: Role) -> LossBreakdown {
    let mut per_box = BTreeMap::new();
    for (id, r) in &pairings.per_box {
        *per_box.entry(*id).or_insert(0.0) += r.iter().map(|v| v * v).sum::<f64>();
    }
    let total = per_box.values().sum();
    LossBreakdown { per_box, total, role }
}

/// All boxes of a cover with their test functions and the patches they integrate on.
#[derive(Debug)]
pub struct ResidualOperator {
    pub role: Role,
    pub patches: Vec<QuadratureRule>,
    pub boxes: Vec<BoxOperator>,
}

impl ResidualOperator {
    pub fn new(patches: Vec<QuadratureRule>, role: Role) -> Self {
        Self { role, patches, boxes: Vec::new() }
    }

    pub fn add_box(
        &mut self,
        domain: &BoxDomain,
        modes: Vec<ModeIndex>,
        patch: usize,
        source: &dyn Fn(&[f64]) -> f64,
    ) -> Result<()> {
        let rule = self.patches.get(patch).ok_or(DfrError::MissingRule(domain.id))?;
        let op = BoxOperator::new(domain, modes, patch, rule, source)?;
        self.boxes.push(op);
        Ok(())
    }

    pub fn mode_count(&self) -> usize {
        self.boxes.iter().map(|b| b.mode_count()).sum()
    }

    fn check_fields(&self, len: usize) -> Result<()> {
        if len != self.patches.len() {
            return Err(DfrError::InvalidConfig(format!("{len} fields for {} patches", self.patches.len())));
        }
        Ok(())
    }

    /// Pairings for fields evaluated on every patch (`fields[p]` on `patches[p]`).
    pub fn pairings(&self, fields: &[FieldEval]) -> Result<PairingVector> {
        self.check_fields(fields.len())?;
        Ok(PairingVector { per_box: self.boxes.iter().map(|b| (b.box_id, b.pairings(&fields[b.patch]))).collect() })
    }

    pub fn loss(&self, fields: &[FieldEval]) -> Result<LossBreakdown> {
        Ok(loss(&self.pairings(fields)?, self.role))
    }

    /// Stacked right sides `l(Phi_k)` in box order.
    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.mode_count(), self.boxes.iter().flat_map(|b| b.rhs.iter().copied()))
    }

    /// Stacked `K_total x F` matrix of feature pairings.
    pub fn feature_matrix(&self, feats: &[Features]) -> Result<DMatrix<f64>> {
        self.check_fields(feats.len())?;
        let f = feats.first().map(|x| x.values.nrows()).unwrap_or(0);
        let mut a = DMatrix::zeros(self.mode_count(), f);
        let mut row = 0;
        for b in &self.boxes {
            let block = b.feature_block(&feats[b.patch]);
            a.rows_mut(row, block.nrows()).copy_from(&block);
            row += block.nrows();
        }
        Ok(a)
    }

    /// Gradient-field adjoints per patch for stacked pairing weights `rbar`.
    pub fn adjoint(&self, rbar: &[f64]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = self.patches.iter().map(|p| vec![0.0; p.len() * p.dim()]).collect();
        let mut row = 0;
        for b in &self.boxes {
            let k = b.mode_count();
            let g = b.pair_gradient_adjoint(&rbar[row..row + k]);
            let n = b.dim;
            let dst = &mut out[b.patch];
            for (qq, &p) in b.indices.iter().enumerate() {
                for j in 0..n {
                    dst[p * n + j] += g[qq * n + j];
                }
            }
            row += k;
        }
        out
    }
}
