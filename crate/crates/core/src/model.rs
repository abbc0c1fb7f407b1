//! Fully connected tanh network `u = chi * (W_L h(x))` with exact spatial
//! gradients and a reverse pass for the loss gradient. A cutoff may pin the
//! network at a point `c`, giving `u = chi * W_L (h(x) - h(c))`.
//!
//! Spatial derivatives are propagated forward as input tangents (one per input
//! dimension). The reverse pass differentiates through both the values and the
//! tangents, so the loss may depend on `u` and `grad u` at every node.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DfrError, Result};
use crate::geometry::Points;

/// Layer widths `[n, d_1, ..., d_{L-1}, 1]`; tanh on hidden layers, linear bias-free output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: Vec<usize>,
}

impl Architecture {
    /// The `[n, 10, 10, 20, 1]` network used by every benchmark case.
    pub fn standard(input_dim: usize) -> Self {
        Self { widths: vec![input_dim, 10, 10, 20, 1] }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Width of the last hidden layer (the least-squares feature count).
    pub fn feature_count(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    /// Number of weights and biases, output bias excluded.
    pub fn parameter_count(&self) -> usize {
        let l = self.layers();
        (1..=l).map(|j| self.widths[j] * self.widths[j - 1] + if j < l { self.widths[j] } else { 0 }).sum()
    }

    /// `(weight offset, rows, cols, bias offset)` for layer `j` (1-based).
    pub fn layer_layout(&self, j: usize) -> (usize, usize, usize, Option<usize>) {
        let l = self.layers();
        let mut off = 0;
        for i in 1..j {
            off += self.widths[i] * self.widths[i - 1] + if i < l { self.widths[i] } else { 0 };
        }
        let (rows, cols) = (self.widths[j], self.widths[j - 1]);
        let bias = (j < l).then_some(off + rows * cols);
        (off, rows, cols, bias)
    }

    /// Range of the output-layer weights in the flat vector.
    pub fn output_range(&self) -> std::ops::Range<usize> {
        let (off, rows, cols, _) = self.layer_layout(self.layers());
        off..off + rows * cols
    }
}

/// Flat parameter vector: `W_1, b_1, ..., W_{L-1}, b_{L-1}, W_L`, matrices row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub arch: Architecture,
    pub data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.parameter_count();
        Self { arch, data: vec![0.0; n] }
    }

    pub fn from_vec(arch: Architecture, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.parameter_count() {
            return Err(DfrError::InvalidConfig(format!(
                "parameter vector has {} entries, architecture needs {}",
                data.len(),
                arch.parameter_count()
            )));
        }
        Ok(Self { arch, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn weight(&self, j: usize) -> DMatrix<f64> {
        let (off, rows, cols, _) = self.arch.layer_layout(j);
        DMatrix::from_row_slice(rows, cols, &self.data[off..off + rows * cols])
    }

    pub fn bias(&self, j: usize) -> Option<&[f64]> {
        let (_, rows, _, b) = self.arch.layer_layout(j);
        b.map(|o| &self.data[o..o + rows])
    }

    /// Unpacks into per-layer matrices and biases.
    pub fn unflatten(&self) -> (Vec<DMatrix<f64>>, Vec<Vec<f64>>) {
        let l = self.arch.layers();
        let ws = (1..=l).map(|j| self.weight(j)).collect();
        let bs = (1..l).map(|j| self.bias(j).unwrap().to_vec()).collect();
        (ws, bs)
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn flatten(arch: Architecture, weights: &[DMatrix<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(arch.parameter_count());
        for (j, w) in weights.iter().enumerate() {
            if w.nrows() != arch.widths[j + 1] || w.ncols() != arch.widths[j] {
                return Err(DfrError::InvalidConfig(format!("layer {} has wrong shape", j + 1)));
            }
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    data.push(w[(r, c)]);
                }
            }
            if j + 1 < arch.layers() {
                data.extend_from_slice(&biases[j]);
            }
        }
        Self::from_vec(arch, data)
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.data[self.arch.output_range()]
    }

    pub fn set_output_weights(&mut self, w: &[f64]) {
        let r = self.arch.output_range();
        self.data[r].copy_from_slice(w);
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json` (layout header).
    pub fn write_snapshot(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut f = std::fs::File::create(dir.join(format!("{stem}.bin")))?;
        for v in &self.data {
            f.write_all(&v.to_le_bytes())?;
        }
        let header = SnapshotHeader::new(&self.arch);
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
        Ok(())
    }

    pub fn read_snapshot(dir: &Path, stem: &str) -> Result<Self> {
        let header: SnapshotHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_vec(Architecture { widths: header.widths }, data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    widths: Vec<usize>,
    count: usize,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    weight_offset: usize,
    rows: usize,
    cols: usize,
    bias_offset: Option<usize>,
}

impl SnapshotHeader {
    fn new(arch: &Architecture) -> Self {
        let layers = (1..=arch.layers())
            .map(|j| {
                let (weight_offset, rows, cols, bias_offset) = arch.layer_layout(j);
                LayerEntry { weight_offset, rows, cols, bias_offset }
            })
            .collect();
        Self { widths: arch.widths.clone(), count: arch.parameter_count(), layers }
    }
}

/// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamVector::zeros(arch.clone());
    for j in 1..=arch.layers() {
        let (off, rows, cols, _) = arch.layer_layout(j);
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        for v in &mut p.data[off..off + rows * cols] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    p
}

/// Fixed factor vanishing on the Dirichlet boundary.
pub trait Cutoff: Send + Sync + Debug {
    /// Value at `x`; writes the gradient into `grad`.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Point where the network output is held at zero. Needed when the cutoff has
    /// no limit there, since `chi * const` is then not in H¹.
    fn pin(&self) -> Option<Vec<f64>> {
        None
    }
}

/// `chi(x) = (x - a)(b - x)` on an interval.
#[derive(Clone, Debug)]
pub struct IntervalCutoff {
    pub a: f64,
    pub b: f64,
}

impl Cutoff for IntervalCutoff {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (p, q) = (x[0] - self.a, self.b - x[0]);
        grad[0] = q - p;
        p * q
    }
}

/// `chi = 1` (no boundary condition imposed).
#[derive(Clone, Debug)]
pub struct UnitCutoff;

impl Cutoff for UnitCutoff {
    fn eval(&self, _x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        1.0
    }
}

pub type SharedCutoff = Arc<dyn Cutoff>;

/// `u` and its gradient (`n` entries per point, row-major) at a batch of points.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEval {
    pub dim: usize,
    pub u: Vec<f64>,
    pub grad: Vec<f64>,
}

impl FieldEval {
    pub fn zeros(dim: usize, n: usize) -> Self {
        Self { dim, u: vec![0.0; n], grad: vec![0.0; n * dim] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn grad_at(&self, q: usize) -> &[f64] {
        &self.grad[q * self.dim..(q + 1) * self.dim]
    }
}

/// Cutoff-scaled last-hidden-layer features and their gradients.
///
/// `values` is `F x Q`; `grads[j]` is `F x Q` holding the derivative along axis `j`.
#[derive(Clone, Debug)]
pub struct Features {
    pub values: DMatrix<f64>,
    pub grads: Vec<DMatrix<f64>>,
}

#[inline]
fn fast_tanh(z: f64) -> f64 {
    // 1 - 2/(e^{2z}+1) saturates cleanly at both ends
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

/// Hidden activations and pre-activation tangents kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct Tape {
    dim: usize,
    x: DMatrix<f64>,
    /// tanh outputs of each hidden layer (`d_l x Q`).
    acts: Vec<DMatrix<f64>>,
    /// `d a_l / d x_j` for each hidden layer and axis.
    tangents: Vec<Vec<DMatrix<f64>>>,
    chi: Vec<f64>,
    chi_grad: Vec<f64>,
    /// Single-point tape at the cutoff's pin.
    pin: Option<Box<Tape>>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }

    /// Post-activation tangent of hidden layer `l` along axis `j`.
    fn tangent(&self, l: usize, j: usize) -> DMatrix<f64> {
        self.tangents[l][j].clone()
    }

    /// Raw (uncut) last-layer features and tangents.
    pub fn raw_features(&self) -> (&DMatrix<f64>, Vec<DMatrix<f64>>) {
        let l = self.acts.len() - 1;
        (&self.acts[l], (0..self.dim).map(|j| self.tangent(l, j)).collect())
    }

    /// Cutoff-scaled features `chi g_i` with gradients `chi grad g_i + g_i grad chi`,
    /// where `g_i = h_i - h_i(c)` for a pinned cutoff and `h_i` otherwise.
    pub fn features(&self) -> Features {
        let (h, dh) = self.raw_features();
        let n = self.dim;
        let f = h.nrows();
        let hc: Vec<f64> = match &self.pin {
            Some(t) => t.acts[t.acts.len() - 1].column(0).iter().copied().collect(),
            None => vec![0.0; f],
        };
        let mut values = h.clone();
        let mut grads = dh;
        for q in 0..h.ncols() {
            let chi = self.chi[q];
            for i in 0..f {
                values[(i, q)] -= hc[i];
            }
            for j in 0..n {
                let dchi = self.chi_grad[q * n + j];
                for i in 0..f {
                    grads[j][(i, q)] = chi * grads[j][(i, q)] + values[(i, q)] * dchi;
                }
            }
            for i in 0..f {
                values[(i, q)] *= chi;
            }
        }
        Features { values, grads }
    }

    /// `u` and `grad u` for the output weights `w_out`.
    pub fn field(&self, w_out: &[f64]) -> FieldEval {
        let feats = self.features();
        let q = self.len();
        let n = self.dim;
        let mut out = FieldEval::zeros(n, q);
        let w = nalgebra::DVector::from_column_slice(w_out);
        let u = feats.values.tr_mul(&w);
        out.u.copy_from_slice(u.as_slice());
        for j in 0..n {
            let g = feats.grads[j].tr_mul(&w);
            for (qq, v) in g.iter().enumerate() {
                out.grad[qq * n + j] = *v;
            }
        }
        out
    }
}

fn to_input_matrix(points: &Points) -> DMatrix<f64> {
    DMatrix::from_column_slice(points.dim(), points.len(), points.coords())
}

fn check_finite(params: &ParamVector) -> Result<()> {
    if params.is_finite() {
        Ok(())
    } else {
        Err(DfrError::DivergedParameters)
    }
}

/// Runs the hidden layers on `points`, keeping everything the reverse pass needs.
pub fn record(params: &ParamVector, cutoff: &dyn Cutoff, points: &Points) -> Result<Tape> {
    check_finite(params)?;
    let arch = &params.arch;
    let n = arch.input_dim();
    if points.dim() != n {
        return Err(DfrError::UnsupportedDimension(points.dim()));
    }
    let x = to_input_matrix(points);
    let q = x.ncols();
    let hidden = arch.layers() - 1;
    let ws: Vec<DMatrix<f64>> = (1..=hidden).map(|l| params.weight(l)).collect();
    let mut acts: Vec<DMatrix<f64>> = ws.iter().map(|w| DMatrix::zeros(w.nrows(), q)).collect();
    let mut tangents: Vec<Vec<DMatrix<f64>>> =
        ws.iter().map(|w| vec![DMatrix::zeros(w.nrows(), q); n]).collect();
    let mut start = 0;
    while start < q {
        let m = (q - start).min(TAPE_CHUNK);
        let mut input = x.columns(start, m).into_owned();
        let mut tin: Vec<DMatrix<f64>> = Vec::new();
        for l in 0..hidden {
            let w = &ws[l];
            let b = params.bias(l + 1).unwrap();
            let d = w.nrows();
            let mut z = w * &input;
            for col in z.column_iter_mut() {
                for (zv, bv) in col.into_iter().zip(b) {
                    *zv += bv;
                }
            }
            let tans: Vec<DMatrix<f64>> = if l == 0 {
                (0..n).map(|j| DMatrix::from_fn(d, m, |i, _| w[(i, j)])).collect()
            } else {
                tin.iter().map(|t| w * t).collect()
            };
            z.as_mut_slice().iter_mut().for_each(|v| *v = fast_tanh(*v));
            tin = tans;
            for t in tin.iter_mut() {
                for (tv, a) in t.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *tv *= 1.0 - a * a;
                }
            }
            acts[l].columns_mut(start, m).copy_from(&z);
            for (full, t) in tangents[l].iter_mut().zip(&tin) {
                full.columns_mut(start, m).copy_from(t);
            }
            input = z;
        }
        start += m;
    }
    let mut chi = vec![0.0; q];
    let mut chi_grad = vec![0.0; q * n];
    for (i, p) in points.iter().enumerate() {
        chi[i] = cutoff.eval(p, &mut chi_grad[i * n..(i + 1) * n]);
    }
    let pin = match cutoff.pin() {
        Some(c) => Some(Box::new(record(params, &UnitCutoff, &Points::new(n, c))?)),
        None => None,
    };
    Ok(Tape { dim: n, x, acts, tangents, chi, chi_grad, pin })
}

/// Column block size for the tape passes; small enough to stay in cache.
const TAPE_CHUNK: usize = 1024;

const CHUNK: usize = 8192;

/// `u = chi * u_tilde` and `grad u = chi grad u_tilde + u_tilde grad chi` at every point.
pub fn forward_with_grad(params: &ParamVector, cutoff: &dyn Cutoff, points: &Points) -> Result<FieldEval> {
    check_finite(params)?;
    let n = points.dim();
    let mut out = FieldEval::zeros(n, points.len());
    let w_out = params.output_weights();
    let mut start = 0;
    while start < points.len() {
        let end = (start + CHUNK).min(points.len());
        let chunk = Points::new(n, points.coords()[start * n..end * n].to_vec());
        let f = record(params, cutoff, &chunk)?.field(w_out);
        out.u[start..end].copy_from_slice(&f.u);
        out.grad[start * n..end * n].copy_from_slice(&f.grad);
        start = end;
    }
    Ok(out)
}

/// The cutoff-scaled last-hidden-layer features whose span the output layer selects from.
pub fn hidden_features(params: &ParamVector, cutoff: &dyn Cutoff, points: &Points) -> Result<Features> {
    Ok(record(params, cutoff, points)?.features())
}

/// Reverse pass: gradient of a scalar loss with respect to every parameter,
/// given `ubar = dL/du` (per point) and `gbar = dL/d grad u` (row-major, `n` per point).
pub fn backward(params: &ParamVector, tape: &Tape, ubar: &[f64], gbar: &[f64]) -> Vec<f64> {
    let arch = &params.arch;
    let hidden = arch.layers() - 1;
    let ws: Vec<DMatrix<f64>> = (1..=hidden).map(|l| params.weight(l)).collect();
    let mut grad = vec![0.0; arch.parameter_count()];
    let q = tape.len();
    let mut start = 0;
    while start < q {
        let m = (q - start).min(TAPE_CHUNK);
        backward_block(params, &ws, tape, start, m, ubar, gbar, &mut grad);
        start += m;
    }
    if let Some(pin) = &tape.pin {
        // the pinned output enters every point with weight -(chi ubar + grad chi . gbar)
        let n = tape.dim;
        let mut s = 0.0;
        for qq in 0..q {
            s += tape.chi[qq] * ubar[qq];
            for j in 0..n {
                s += tape.chi_grad[qq * n + j] * gbar[qq * n + j];
            }
        }
        let g = backward(params, pin, &[-s], &vec![0.0; n]);
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    grad
}

#[allow(clippy::too_many_arguments)]
fn backward_block(
    params: &ParamVector,
    ws: &[DMatrix<f64>],
    tape: &Tape,
    start: usize,
    m: usize,
    ubar: &[f64],
    gbar: &[f64],
    grad: &mut [f64],
) {
    let arch = &params.arch;
    let n = tape.dim;
    let hidden = ws.len();
    let acts: Vec<DMatrix<f64>> = tape.acts.iter().map(|a| a.columns(start, m).into_owned()).collect();
    let tans: Vec<Vec<DMatrix<f64>>> =
        tape.tangents.iter().map(|ts| ts.iter().map(|t| t.columns(start, m).into_owned()).collect()).collect();

    // u = chi * ut, du_j = chi * dut_j + ut * dchi_j
    let mut ut_bar = vec![0.0; m];
    let mut dut_bar: Vec<Vec<f64>> = vec![vec![0.0; m]; n];
    for k in 0..m {
        let qq = start + k;
        let chi = tape.chi[qq];
        let mut s = chi * ubar[qq];
        for j in 0..n {
            let gb = gbar[qq * n + j];
            s += tape.chi_grad[qq * n + j] * gb;
            dut_bar[j][k] = chi * gb;
        }
        ut_bar[k] = s;
    }

    // output layer: ut = w . h, dut_j = w . dh_j
    let w_out = params.output_weights().to_vec();
    let last = hidden - 1;
    let f = arch.feature_count();
    let h = &acts[last];
    let dh = &tans[last];
    {
        let gw = &mut grad[arch.output_range()];
        for k in 0..m {
            let hc = &h.as_slice()[k * f..(k + 1) * f];
            for (i, g) in gw.iter_mut().enumerate() {
                let mut s = ut_bar[k] * hc[i];
                for j in 0..n {
                    s += dut_bar[j][k] * dh[j].as_slice()[k * f + i];
                }
                *g += s;
            }
        }
    }
    let mut a_bar = DMatrix::from_fn(f, m, |i, k| w_out[i] * ut_bar[k]);
    let mut t_bar: Vec<DMatrix<f64>> = (0..n).map(|j| DMatrix::from_fn(f, m, |i, k| w_out[i] * dut_bar[j][k])).collect();

    for l in (0..hidden).rev() {
        let av = acts[l].as_slice();
        // a = tanh z, t_j = s * p_j with s = 1 - a^2, so ds/dz = -2 a s and t_j ds/dz / s = -2 a t_j
        let mut z_bar = a_bar.clone();
        let mut p_bar: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        {
            let zb = z_bar.as_mut_slice();
            for (k, zv) in zb.iter_mut().enumerate() {
                *zv *= 1.0 - av[k] * av[k];
            }
            for j in 0..n {
                let tb = t_bar[j].as_slice();
                let tj = tans[l][j].as_slice();
                let mut pb = t_bar[j].clone();
                for (k, pbv) in pb.as_mut_slice().iter_mut().enumerate() {
                    zb[k] -= 2.0 * tb[k] * tj[k] * av[k];
                    *pbv *= 1.0 - av[k] * av[k];
                }
                p_bar.push(pb);
            }
        }
        let (off, rows, cols, boff) = arch.layer_layout(l + 1);
        let w = &ws[l];
        // z = W in + b, p_j = W t_in_j (first layer: p_j = W e_j)
        let mut gw = if l == 0 {
            &z_bar * tape.x.columns(start, m).transpose()
        } else {
            &z_bar * acts[l - 1].transpose()
        };
        if l == 0 {
            for j in 0..n {
                for i in 0..rows {
                    gw[(i, j)] += p_bar[j].row(i).sum();
                }
            }
        } else {
            for j in 0..n {
                gw += &p_bar[j] * tans[l - 1][j].transpose();
            }
        }
        for i in 0..rows {
            for c in 0..cols {
                grad[off + i * cols + c] += gw[(i, c)];
            }
        }
        if let Some(bo) = boff {
            for i in 0..rows {
                grad[bo + i] += z_bar.row(i).sum();
            }
        }
        if l > 0 {
            a_bar = w.tr_mul(&z_bar);
            t_bar = p_bar.iter().map(|pb| w.tr_mul(pb)).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pts1(xs: &[f64]) -> Points {
        Points::new(1, xs.to_vec())
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Architecture::standard(1).parameter_count(), 370);
        assert_eq!(Architecture::standard(2).parameter_count(), 380);
        assert_eq!(Architecture { widths: vec![3, 4, 1] }.parameter_count(), 3 * 4 + 4 + 4);
    }

    #[test]
    fn zero_weights_give_zero_field() {
        let p = ParamVector::zeros(Architecture::standard(1));
        let f = forward_with_grad(&p, &IntervalCutoff { a: 0.0, b: PI }, &pts1(&[0.3, 1.0, 2.5])).unwrap();
        assert!(f.u.iter().chain(&f.grad).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_network_reproduces_cutoff() {
        // hidden weights zero, last hidden biases atanh(0.5) so every feature is 0.5
        let arch = Architecture::standard(1);
        let mut p = ParamVector::zeros(arch.clone());
        let (_, rows, _, boff) = arch.layer_layout(3);
        let b3 = 0.5f64.atanh();
        for i in 0..rows {
            p.data[boff.unwrap() + i] = b3;
        }
        p.set_output_weights(&vec![0.1; 20]);
        let xs = [0.2, 1.0, 2.9];
        let f = forward_with_grad(&p, &IntervalCutoff { a: 0.0, b: PI }, &pts1(&xs)).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert!((f.u[i] - x * (PI - x)).abs() < 1e-13);
            assert!((f.grad[i] - (PI - 2.0 * x)).abs() < 1e-13);
        }
        let feats = hidden_features(&p, &IntervalCutoff { a: 0.0, b: PI }, &pts1(&xs)).unwrap();
        assert_eq!(feats.values.rank(1e-10), 1);
    }

    #[test]
    fn features_vanish_on_dirichlet_boundary() {
        let p = init_params(&Architecture::standard(1), 3);
        let feats = hidden_features(&p, &IntervalCutoff { a: 0.0, b: PI }, &pts1(&[0.0, PI])).unwrap();
        assert!(feats.values.iter().all(|v| v.abs() < 1e-12));
    }

    fn fd_check(params: &ParamVector, cutoff: &dyn Cutoff, points: &Points, tol: f64) {
        let n = points.dim();
        let f = forward_with_grad(params, cutoff, points).unwrap();
        let feats = hidden_features(params, cutoff, points).unwrap();
        let h = 1e-5;
        for q in 0..points.len() {
            for j in 0..n {
                let mut xp = points.get(q).to_vec();
                let mut xm = xp.clone();
                xp[j] += h;
                xm[j] -= h;
                let up = forward_with_grad(params, cutoff, &Points::new(n, xp.clone())).unwrap();
                let um = forward_with_grad(params, cutoff, &Points::new(n, xm.clone())).unwrap();
                let fd = (up.u[0] - um.u[0]) / (2.0 * h);
                let an = f.grad[q * n + j];
                assert!((fd - an).abs() <= tol * an.abs().max(1e-2), "u: {fd} vs {an}");
                let fp = hidden_features(params, cutoff, &Points::new(n, xp)).unwrap();
                let fm = hidden_features(params, cutoff, &Points::new(n, xm)).unwrap();
                for i in 0..feats.values.nrows() {
                    let fd = (fp.values[(i, 0)] - fm.values[(i, 0)]) / (2.0 * h);
                    let an = feats.grads[j][(i, q)];
                    assert!((fd - an).abs() <= tol * an.abs().max(1e-2), "feature {i}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn spatial_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let p = init_params(&Architecture::standard(1), seed);
            fd_check(&p, &IntervalCutoff { a: 0.0, b: PI }, &pts1(&[0.3, 1.1, 2.0, 2.8]), 1e-6);
            let p2 = init_params(&Architecture::standard(2), seed);
            fd_check(&p2, &UnitCutoff, &Points::new(2, vec![0.1, 0.2, -0.5, 0.7]), 1e-6);
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = Architecture::standard(2);
        assert_eq!(init_params(&arch, 11), init_params(&arch, 11));
        let diff = init_params(&arch, 11)
            .data
            .iter()
            .zip(&init_params(&arch, 12).data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
        let p = init_params(&arch, 5);
        let w2 = p.weight(2);
        let bound = (6.0f64 / 20.0).sqrt();
        assert!(w2.iter().all(|v| v.abs() <= bound));
        assert!(p.bias(1).unwrap().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn rejects_non_finite_params() {
        let mut p = init_params(&Architecture::standard(1), 0);
        p.data[3] = f64::NAN;
        assert!(matches!(
            forward_with_grad(&p, &UnitCutoff, &pts1(&[0.5])),
            Err(DfrError::DivergedParameters)
        ));
    }

    #[test]
    fn flatten_roundtrip_and_snapshot() {
        let arch = Architecture::standard(2);
        let p = init_params(&arch, 9);
        let (w, b) = p.unflatten();
        assert_eq!(ParamVector::flatten(arch, &w, &b).unwrap(), p);
        let dir = tempfile::tempdir().unwrap();
        p.write_snapshot(dir.path(), "params").unwrap();
        assert_eq!(ParamVector::read_snapshot(dir.path(), "params").unwrap(), p);
    }

    #[test]
    fn batch_order_independent() {
        let p = init_params(&Architecture::standard(2), 4);
        let a = Points::new(2, vec![0.1, 0.2, 0.3, 0.4, -0.2, 0.9]);
        let b = Points::new(2, vec![-0.2, 0.9, 0.1, 0.2, 0.3, 0.4]);
        let fa = forward_with_grad(&p, &UnitCutoff, &a).unwrap();
        let fb = forward_with_grad(&p, &UnitCutoff, &b).unwrap();
        assert_eq!(fa.u[0], fb.u[1]);
        assert_eq!(fa.u[2], fb.u[0]);
        assert_eq!(fa.grad_at(1), fb.grad_at(2));
    }

    /// Reverse pass against central differences of a scalar functional of (u, grad u).
    #[test]
    fn backward_matches_finite_differences() {
        let arch = Architecture::standard(2);
        let p = init_params(&arch, 21);
        let pts = Points::new(2, vec![0.1, 0.2, -0.4, 0.5, 0.8, -0.3, 0.05, 0.9]);
        let cut = UnitCutoff;
        let cu = [0.3, -1.0, 0.7, 0.2];
        let cg = [0.5, -0.2, 0.1, 0.9, -0.6, 0.4, 0.3, 0.3];
        let functional = |pv: &ParamVector| {
            let f = forward_with_grad(pv, &cut, &pts).unwrap();
            let mut s = 0.0;
            for q in 0..4 {
                s += cu[q] * f.u[q] * f.u[q];
                for j in 0..2 {
                    s += cg[2 * q + j] * f.grad[2 * q + j];
                }
            }
            s
        };
        let tape = record(&p, &cut, &pts).unwrap();
        let f = tape.field(p.output_weights());
        let ubar: Vec<f64> = (0..4).map(|q| 2.0 * cu[q] * f.u[q]).collect();
        let g = backward(&p, &tape, &ubar, &cg);
        let h = 1e-6;
        for k in 0..p.data.len() {
            let mut pp = p.clone();
            pp.data[k] += h;
            let mut pm = p.clone();
            pm.data[k] -= h;
            let fd = (functional(&pp) - functional(&pm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-2), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[derive(Debug)]
    struct Pinned;

    impl Cutoff for Pinned {
        fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            grad[0] = 0.5;
            grad[1] = -0.25;
            1.0 + 0.5 * x[0] - 0.25 * x[1]
        }
        fn pin(&self) -> Option<Vec<f64>> {
            Some(vec![0.3, -0.2])
        }
    }

    #[test]
    fn pinned_field_vanishes_at_pin() {
        let p = init_params(&Architecture::standard(2), 6);
        let f = forward_with_grad(&p, &Pinned, &Points::new(2, vec![0.3, -0.2, 0.9, 0.1])).unwrap();
        assert!(f.u[0].abs() < 1e-15);
        assert!(f.u[1].abs() > 1e-3);
        // shifting by the pinned value of the unpinned field
        let raw = forward_with_grad(&p, &UnitCutoff, &Points::new(2, vec![0.3, -0.2, 0.9, 0.1])).unwrap();
        let chi = 1.0 + 0.45 - 0.025;
        assert!((f.u[1] - chi * (raw.u[1] - raw.u[0])).abs() < 1e-14);
        fd_check(&p, &Pinned, &Points::new(2, vec![0.1, 0.2, -0.5, 0.7]), 1e-6);
    }

    #[test]
    fn pinned_backward_matches_finite_differences() {
        let p = init_params(&Architecture::standard(2), 8);
        let pts = Points::new(2, vec![0.1, 0.2, -0.4, 0.5, 0.8, -0.3]);
        let cu = [0.3, -1.0, 0.7];
        let cg = [0.5, -0.2, 0.1, 0.9, -0.6, 0.4];
        let functional = |pv: &ParamVector| {
            let f = forward_with_grad(pv, &Pinned, &pts).unwrap();
            (0..3).map(|q| cu[q] * f.u[q] * f.u[q] + cg[2 * q] * f.grad[2 * q] + cg[2 * q + 1] * f.grad[2 * q + 1]).sum::<f64>()
        };
        let tape = record(&p, &Pinned, &pts).unwrap();
        let f = tape.field(p.output_weights());
        let ubar: Vec<f64> = (0..3).map(|q| 2.0 * cu[q] * f.u[q]).collect();
        let g = backward(&p, &tape, &ubar, &cg);
        let h = 1e-6;
        for k in 0..p.data.len() {
            let mut pp = p.clone();
            pp.data[k] += h;
            let mut pm = p.clone();
            pm.data[k] -= h;
            let fd = (functional(&pp) - functional(&pm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-2), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn dead_unit_has_zero_incoming_gradient() {
        let arch = Architecture::standard(1);
        let mut p = init_params(&arch, 2);
        // zero outgoing weights of hidden unit 0 in layer 2
        let (off3, _, cols3, _) = arch.layer_layout(3);
        let rows3 = arch.widths[3];
        for i in 0..rows3 {
            p.data[off3 + i * cols3] = 0.0;
        }
        let pts = pts1(&[0.4, 1.3, 2.2]);
        let tape = record(&p, &IntervalCutoff { a: 0.0, b: PI }, &pts).unwrap();
        let g = backward(&p, &tape, &[1.0, -0.5, 0.3], &[0.2, 0.1, -0.7]);
        let (off2, _, cols2, b2) = arch.layer_layout(2);
        for c in 0..cols2 {
            assert_eq!(g[off2 + c], 0.0);
        }
        assert_eq!(g[b2.unwrap()], 0.0);
    }
}
