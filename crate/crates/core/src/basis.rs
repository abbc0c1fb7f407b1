//! Orthonormal sine/cosine test functions on a box.
//!
//! Along each axis the 1D functions are eigenfunctions of `1 - d²/dx²` with
//! the Dirichlet set of that axis; their tensor products are normalised in the
//! full H¹ inner product so that the Gram matrix of a rectangular mode set is
//! the identity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{DfrError, Result};
use crate::geometry::{BoxDomain, FaceBc};

/// Dirichlet set of one axis `(a, b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisVariant {
    /// Dirichlet at both ends: `sin(k s)`.
    DD,
    /// Dirichlet at `a` only: `sin((k - 1/2) s)`.
    D0,
    /// Dirichlet at `b` only: `cos((k - 1/2) s)`.
    ZeroD,
    /// No Dirichlet end: `cos((k - 1) s)`.
    ZeroZero,
}

impl AxisVariant {
    pub fn from_faces(low: FaceBc, high: FaceBc) -> Self {
        match (low, high) {
            (FaceBc::Dirichlet, FaceBc::Dirichlet) => AxisVariant::DD,
            (FaceBc::Dirichlet, FaceBc::Free) => AxisVariant::D0,
            (FaceBc::Free, FaceBc::Dirichlet) => AxisVariant::ZeroD,
            (FaceBc::Free, FaceBc::Free) => AxisVariant::ZeroZero,
        }
    }

    /// Frequency multiplier `c_k` in `s = c_k * pi * (x - a) / (b - a)`.
    pub fn frequency(self, k: u32) -> f64 {
        let k = k as f64;
        match self {
            AxisVariant::DD => k,
            AxisVariant::D0 | AxisVariant::ZeroD => k - 0.5,
            AxisVariant::ZeroZero => k - 1.0,
        }
    }
}

/// Value, derivative and squared frequency of the 1D mode in unit coordinates.
///
/// `t` is the position in `[0, 1]`, `len = b - a`; the derivative is with respect to `x`.
#[inline]
pub(crate) fn axis_unit(variant: AxisVariant, k: u32, len: f64, t: f64) -> (f64, f64, f64) {
    let c = variant.frequency(k);
    let omega = c * PI / len;
    let mut amp = (2.0 / len).sqrt();
    if variant == AxisVariant::ZeroZero && k == 1 {
        amp = (1.0 / len).sqrt();
    }
    let arg = c * PI * t;
    let (s, co) = arg.sin_cos();
    let (v, dv) = match variant {
        AxisVariant::DD | AxisVariant::D0 => (amp * s, amp * omega * co),
        AxisVariant::ZeroD | AxisVariant::ZeroZero => (amp * co, -amp * omega * s),
    };
    (v, dv, omega * omega)
}

/// One-dimensional mode `phi_k` on `(a, b)` at `x`: `(value, derivative, lambda)`.
pub fn eval_axis(variant: AxisVariant, k: u32, a: f64, b: f64, x: f64) -> Result<(f64, f64, f64)> {
    if k < 1 {
        return Err(DfrError::InvalidBasis("mode index must be at least 1".into()));
    }
    if !(a < b) {
        return Err(DfrError::InvalidBasis(format!("empty interval ({a}, {b})")));
    }
    let len = b - a;
    Ok(axis_unit(variant, k, len, (x - a) / len))
}

/// Identifies one tensor-product mode on one box.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeIndex {
    pub box_id: usize,
    pub k: Vec<u32>,
    pub variants: Vec<AxisVariant>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeEval {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Axis variants implied by the face tags of a box.
pub fn box_variants(b: &BoxDomain) -> Vec<AxisVariant> {
    (0..b.dim()).map(|j| AxisVariant::from_faces(b.face_bc[2 * j], b.face_bc[2 * j + 1])).collect()
}

/// Rectangular mode set `1 <= k_j <= counts[j]`, lexicographic with the last axis fastest.
pub fn mode_set(b: &BoxDomain, counts: &[usize]) -> Result<Vec<ModeIndex>> {
    if counts.len() != b.dim() {
        return Err(DfrError::InvalidBasis("one cut-off per axis required".into()));
    }
    if counts.contains(&0) {
        return Err(DfrError::InvalidBasis("cut-off frequencies must be positive".into()));
    }
    let variants = box_variants(b);
    let mut out = Vec::with_capacity(counts.iter().product());
    match counts.len() {
        1 => {
            for k in 1..=counts[0] as u32 {
                out.push(ModeIndex { box_id: b.id, k: vec![k], variants: variants.clone() });
            }
        }
        2 => {
            for k1 in 1..=counts[0] as u32 {
                for k2 in 1..=counts[1] as u32 {
                    out.push(ModeIndex { box_id: b.id, k: vec![k1, k2], variants: variants.clone() });
                }
            }
        }
        n => return Err(DfrError::UnsupportedDimension(n)),
    }
    Ok(out)
}

/// H¹ normalisation factor `N` with `N² = 1 + sum_j lambda_j`.
pub fn mode_norm(mode: &ModeIndex, lengths: &[f64]) -> f64 {
    let s: f64 = mode
        .k
        .iter()
        .zip(&mode.variants)
        .zip(lengths)
        .map(|((&k, &v), &l)| {
            let w = v.frequency(k) * PI / l;
            w * w
        })
        .sum();
    (1.0 + s).sqrt()
}

/// Value and global gradient of a mode at `x`; zero outside the closed box.
pub fn eval_mode(mode: &ModeIndex, b: &BoxDomain, x: &[f64]) -> ModeEval {
    let n = b.dim();
    let (t, _) = b.local_coords(x);
    if t.iter().any(|&tj| !(-1e-14..=1.0 + 1e-14).contains(&tj)) {
        return ModeEval { value: 0.0, gradient: vec![0.0; n] };
    }
    let lengths = b.side_lengths();
    let norm = mode_norm(mode, &lengths);
    let axis: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let (v, dv, _) = axis_unit(mode.variants[j], mode.k[j], lengths[j], t[j]);
            (v, dv)
        })
        .collect();
    let value = axis.iter().map(|a| a.0).product::<f64>() / norm;
    // derivative along unit edge direction j, then mapped to global coordinates
    let mut gradient = vec![0.0; n];
    for j in 0..n {
        let mut d = axis[j].1;
        for (i, a) in axis.iter().enumerate() {
            if i != j {
                d *= a.0;
            }
        }
        d /= norm;
        for (g, e) in gradient.iter_mut().zip(&b.edges[j]) {
            *g += d * e / lengths[j];
        }
    }
    ModeEval { value, gradient }
}
