//! Hybrid trainer: the output layer is solved by least squares at every
//! iteration and the hidden layers take Adam steps on the resulting loss.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::mode_set;
use crate::error::{DfrError, Result};
use crate::geometry::{BoxDomain, Cover};
use crate::model::{backward, forward_with_grad, record, Architecture, Cutoff, FieldEval, ParamVector, SharedCutoff};
use crate::quadrature::{QuadratureRule, Role};
use crate::residual::{LossBreakdown, ResidualOperator};

pub type SharedSource = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Adam moments over the trainable slice (every parameter except `W_L`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `theta` in place.
pub fn adam_step(state: &mut AdamState, theta: &mut [f64], grad: &[f64]) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        theta[i] -= state.lr * mh / (vh.sqrt() + state.eps);
    }
}

/// `A_{k,i} = b(chi h_i, Phi_k)` over all boxes and modes, `b_k = l(Phi_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LsSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LsSystem {
    /// `A^T (A w - b)`.
    pub fn normal_residual(&self, w: &[f64]) -> DVector<f64> {
        let w = DVector::from_column_slice(w);
        self.a.tr_mul(&(&self.a * w - &self.b))
    }

    /// `||A w - b||^2`, the training loss for output weights `w`.
    pub fn loss(&self, w: &[f64]) -> f64 {
        (&self.a * DVector::from_column_slice(w) - &self.b).norm_squared()
    }

    /// `1e-10 * trace(A^T A) / cols`.
    pub fn default_ridge(&self) -> f64 {
        let cols = self.a.ncols().max(1) as f64;
        1e-10 * self.a.norm_squared() / cols
    }
}

/// `W = (A^T A + ridge I)^{-1} A^T b` by Cholesky with two refinement sweeps.
pub fn ls_solve(system: &LsSystem, ridge: f64) -> Result<Vec<f64>> {
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(DfrError::InvalidConfig(format!("ridge must be non-negative, got {ridge}")));
    }
    let a = &system.a;
    let mut n = a.tr_mul(a);
    for i in 0..n.nrows() {
        n[(i, i)] += ridge;
    }
    if !n.iter().all(|v| v.is_finite()) {
        return Err(DfrError::Diverged("non-finite feature matrix".into()));
    }
    let chol = nalgebra::Cholesky::new(n).ok_or(DfrError::RankDeficient)?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        lo = lo.min(l[(i, i)].abs());
        hi = hi.max(l[(i, i)].abs());
    }
    if hi == 0.0 {
        return Err(DfrError::RankDeficient);
    }
    if ridge == 0.0 && lo / hi < 1e-10 {
        return Err(DfrError::RankDeficient);
    }
    let atb = a.tr_mul(&system.b);
    let mut w = chol.solve(&atb);
    for _ in 0..2 {
        let r = &atb - a.tr_mul(&(a * &w)) - &w * ridge;
        w += chol.solve(&r);
    }
    Ok(w.as_slice().to_vec())
}

/// Relative error of a network against a reference solution, in percent.
pub trait ErrorMetric: Send + Sync {
    fn rel_error_pct(&self, params: &ParamVector, cutoff: &dyn Cutoff) -> Result<f64>;
}

/// A box together with the patch it integrates on and its mode counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPlan {
    pub domain: BoxDomain,
    pub counts: Vec<usize>,
    pub patch: usize,
}

/// Everything the trainer needs: network shape, cutoff, source and the
/// residual operators on the training (and optional validation) rules.
pub struct TrainingProblem {
    pub arch: Architecture,
    pub cutoff: SharedCutoff,
    pub source: SharedSource,
    pub cover: Cover,
    pub plans: Vec<BoxPlan>,
    pub training: ResidualOperator,
    pub validation: Option<ResidualOperator>,
    pub error: Option<Arc<dyn ErrorMetric>>,
}

impl TrainingProblem {
    /// Builds the operators for `plans`; `validation_patches[p]` pairs with `training_patches[p]`.
    pub fn new(
        arch: Architecture,
        cutoff: SharedCutoff,
        source: SharedSource,
        training_patches: Vec<QuadratureRule>,
        validation_patches: Option<Vec<QuadratureRule>>,
        plans: Vec<BoxPlan>,
    ) -> Result<Self> {
        let cover = Cover::new(plans.iter().map(|p| p.domain.clone()).collect());
        let mut problem = Self {
            arch,
            cutoff,
            source,
            cover,
            plans: Vec::new(),
            training: ResidualOperator::new(training_patches, Role::Training),
            validation: validation_patches.map(|v| ResidualOperator::new(v, Role::Validation)),
            error: None,
        };
        for plan in plans {
            problem.add_operators(plan)?;
        }
        Ok(problem)
    }

    fn add_operators(&mut self, plan: BoxPlan) -> Result<()> {
        let modes = mode_set(&plan.domain, &plan.counts)?;
        let src = self.source.clone();
        let f = move |x: &[f64]| src(x);
        self.training.add_box(&plan.domain, modes.clone(), plan.patch, &f)?;
        if let Some(v) = &mut self.validation {
            v.add_box(&plan.domain, modes, plan.patch, &f)?;
        }
        self.plans.push(plan);
        Ok(())
    }

    /// Appends a box to the cover (fresh id) and to both operators; returns the id.
    pub fn add_box(&mut self, mut plan: BoxPlan) -> Result<usize> {
        plan.domain.id = self.cover.next_id();
        self.add_operators(plan.clone())?;
        Ok(self.cover.push(plan.domain))
    }

    pub fn with_error(mut self, metric: Arc<dyn ErrorMetric>) -> Self {
        self.error = Some(metric);
        self
    }

    pub fn mode_count(&self) -> usize {
        self.training.mode_count()
    }

    /// Network fields on every patch of `op`.
    pub fn fields(&self, params: &ParamVector, op: &ResidualOperator) -> Result<Vec<FieldEval>> {
        op.patches.iter().map(|p| forward_with_grad(params, self.cutoff.as_ref(), &p.nodes)).collect()
    }

    /// Assembles the least-squares system for the current hidden layers.
    pub fn assemble_ls(&self, params: &ParamVector) -> Result<LsSystem> {
        let feats = self
            .training
            .patches
            .iter()
            .map(|p| Ok(record(params, self.cutoff.as_ref(), &p.nodes)?.features()))
            .collect::<Result<Vec<_>>>()?;
        Ok(LsSystem { a: self.training.feature_matrix(&feats)?, b: self.training.rhs() })
    }

    /// Training loss breakdown for `params` as given (no LS solve).
    pub fn training_loss(&self, params: &ParamVector) -> Result<LossBreakdown> {
        self.training.loss(&self.fields(params, &self.training)?)
    }

    pub fn validation_loss(&self, params: &ParamVector) -> Result<Option<LossBreakdown>> {
        match &self.validation {
            Some(v) => Ok(Some(v.loss(&self.fields(params, v)?)?)),
            None => Ok(None),
        }
    }
}

/// Result of one loss/gradient evaluation with freshly solved output weights.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub output_weights: Vec<f64>,
    /// Gradient over the trainable slice (`W_L` excluded).
    pub gradient: Vec<f64>,
}

fn resolve_ridge(system: &LsSystem, ridge: Option<f64>) -> f64 {
    ridge.unwrap_or_else(|| system.default_ridge())
}

/// Solves for `W_L`, then returns the loss and its gradient with `W_L` held fixed.
pub fn loss_gradient(problem: &TrainingProblem, params: &ParamVector, ridge: Option<f64>) -> Result<Evaluation> {
    let tapes = problem
        .training
        .patches
        .iter()
        .map(|p| record(params, problem.cutoff.as_ref(), &p.nodes))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<_> = tapes.iter().map(|t| t.features()).collect();
    let system = LsSystem { a: problem.training.feature_matrix(&feats)?, b: problem.training.rhs() };
    drop(feats);
    let w = ls_solve(&system, resolve_ridge(&system, ridge))?;
    let mut full = params.clone();
    full.set_output_weights(&w);
    gradient_with_fixed_output(problem, &full, &system, &tapes, w)
}

fn gradient_with_fixed_output(
    problem: &TrainingProblem,
    params: &ParamVector,
    system: &LsSystem,
    tapes: &[crate::model::Tape],
    w: Vec<f64>,
) -> Result<Evaluation> {
    let r = &system.a * DVector::from_column_slice(&w) - &system.b;
    let loss = r.norm_squared();
    if !loss.is_finite() {
        return Err(DfrError::Diverged("non-finite loss".into()));
    }
    let rbar: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    let gbar = problem.training.adjoint(&rbar);
    let trainable = params.arch.output_range().start;
    let mut gradient = vec![0.0; trainable];
    for (tape, gb) in tapes.iter().zip(&gbar) {
        let ubar = vec![0.0; tape.len()];
        let g = backward(params, tape, &ubar, gb);
        for (a, b) in gradient.iter_mut().zip(&g[..trainable]) {
            *a += b;
        }
    }
    if !gradient.iter().all(|g| g.is_finite()) {
        return Err(DfrError::Diverged("non-finite gradient".into()));
    }
    Ok(Evaluation { loss, output_weights: w, gradient })
}

/// `min_W ||A W - b||^2 + ridge ||W||^2`, the objective whose gradient
/// [`loss_gradient`] returns when called with the same fixed `ridge`.
pub fn reduced_loss(problem: &TrainingProblem, params: &ParamVector, ridge: f64) -> Result<f64> {
    let system = problem.assemble_ls(params)?;
    let w = ls_solve(&system, ridge)?;
    Ok(system.loss(&w) + ridge * w.iter().map(|v| v * v).sum::<f64>())
}

/// Loss and gradient for the given parameters, `W_L` included as is.
pub fn loss_gradient_fixed(problem: &TrainingProblem, params: &ParamVector) -> Result<Evaluation> {
    let tapes = problem
        .training
        .patches
        .iter()
        .map(|p| record(params, problem.cutoff.as_ref(), &p.nodes))
        .collect::<Result<Vec<_>>>()?;
    let feats: Vec<_> = tapes.iter().map(|t| t.features()).collect();
    let system = LsSystem { a: problem.training.feature_matrix(&feats)?, b: problem.training.rhs() };
    gradient_with_fixed_output(problem, params, &system, &tapes, params.output_weights().to_vec())
}

/// Analytic gradient against central differences of the training loss.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub ridge: f64,
    pub components: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `||analytic - numeric|| / ||numeric||` over the sampled components.
    pub rel_error: f64,
    /// Largest `|analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|)`.
    pub max_component_rel_error: f64,
}

/// Compares the gradient of [`loss_gradient`] with Richardson-extrapolated central
/// differences (steps `h (1 + |theta_i|)` and half that) of `||A(theta) W - b||^2`,
/// `W` being the least-squares output weights at `params`, on `count` distinct random
/// trainable components.
pub fn gradient_check(problem: &TrainingProblem, params: &ParamVector, count: usize, seed: u64, h: f64) -> Result<GradCheckReport> {
    use rand::seq::index::sample;
    use rand::SeedableRng;

    let system = problem.assemble_ls(params)?;
    let ridge = system.default_ridge();
    let eval = loss_gradient(problem, params, Some(ridge))?;
    let mut full = params.clone();
    full.set_output_weights(&eval.output_weights);
    let trainable = eval.gradient.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let components = sample(&mut rng, trainable, count.min(trainable)).into_vec();
    let mut numeric = Vec::with_capacity(components.len());
    for &i in &components {
        let f = |d: f64| -> Result<f64> {
            let mut p = full.clone();
            p.data[i] += d;
            Ok(problem.assemble_ls(&p)?.loss(p.output_weights()))
        };
        let central = |d: f64| -> Result<f64> { Ok((f(d)? - f(-d)?) / (2.0 * d)) };
        let step = h * (1.0 + full.data[i].abs());
        numeric.push((4.0 * central(0.5 * step)? - central(step)?) / 3.0);
    }
    let analytic: Vec<f64> = components.iter().map(|&i| eval.gradient[i]).collect();
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let rel_error = if norm > 0.0 { diff / norm } else { diff };
    let max_component_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let scale = a.abs().max(n.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max);
    Ok(GradCheckReport { ridge, components, analytic, numeric, rel_error, max_component_rel_error })
}

/// One row per recorded iteration; `NaN` where a metric was skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub rel_h1_error_pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    /// Running minimum of the training loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.rows
            .iter()
            .map(|r| {
                best = best.min(r.train_loss);
                best
            })
            .collect()
    }

    /// Last finite relative error.
    pub fn final_error(&self) -> Option<f64> {
        self.rows.iter().rev().map(|r| r.rel_h1_error_pct).find(|e| e.is_finite())
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "iteration,train_loss,val_loss,rel_h1_error_pct")?;
        for r in &self.rows {
            writeln!(w, "{},{:.17e},{:.17e},{:.17e}", r.iteration, r.train_loss, r.val_loss, r.rel_h1_error_pct)?;
        }
        Ok(())
    }

    pub fn read_csv(s: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in s.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || DfrError::InvalidConfig(format!("malformed history line {}", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            rows.push(HistoryRow {
                iteration: f[0].trim().parse().map_err(|_| bad())?,
                train_loss: num(f[1])?,
                val_loss: num(f[2])?,
                rel_h1_error_pct: num(f[3])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Iteration count, learning rate and metric cadence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation loss every this many iterations (0: only at the last row).
    pub val_every: usize,
    /// Relative error every this many iterations (0: only at the last row).
    pub err_every: usize,
    /// `None` selects the default ridge.
    pub ridge: Option<f64>,
    /// Boxes added once the given iteration count is reached.
    #[serde(default)]
    pub additions: Vec<(usize, Vec<BoxPlan>)>,
}

impl Schedule {
    pub fn new(iterations: usize, lr: f64, seed: u64) -> Self {
        Self { iterations, lr, seed, val_every: 1, err_every: 1, ridge: None, additions: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DfrError::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(DfrError::InvalidConfig(format!("ridge must be non-negative, got {r}")));
            }
        }
        Ok(())
    }
}

/// Training state that persists across levels: parameters, Adam moments and history.
pub struct Trainer {
    pub params: ParamVector,
    pub adam: AdamState,
    pub history: History,
    pub iteration: usize,
    pub ridge: Option<f64>,
    pub val_every: usize,
    pub err_every: usize,
}

impl Trainer {
    pub fn new(params: ParamVector, schedule: &Schedule) -> Self {
        let trainable = params.arch.output_range().start;
        Self {
            params,
            adam: AdamState::new(trainable, schedule.lr),
            history: History::default(),
            iteration: 0,
            ridge: schedule.ridge,
            val_every: schedule.val_every,
            err_every: schedule.err_every,
        }
    }

    fn due(every: usize, it: usize, last: bool) -> bool {
        last || (every > 0 && it % every == 0)
    }

    fn record_row(&mut self, problem: &TrainingProblem, train_loss: f64, last: bool) -> Result<()> {
        if self.history.last().map(|r| r.iteration) == Some(self.iteration) {
            return Ok(());
        }
        let it = self.iteration;
        let val_loss = if Self::due(self.val_every, it, last) {
            problem.validation_loss(&self.params)?.map(|l| l.total).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        let rel = match (&problem.error, Self::due(self.err_every, it, last)) {
            (Some(e), true) => e.rel_error_pct(&self.params, problem.cutoff.as_ref())?,
            _ => f64::NAN,
        };
        self.history.rows.push(HistoryRow { iteration: it, train_loss, val_loss, rel_h1_error_pct: rel });
        Ok(())
    }

    /// Solves `W_L` for the current hidden layers and returns the training loss.
    pub fn refresh_output(&mut self, problem: &TrainingProblem) -> Result<f64> {
        let system = problem.assemble_ls(&self.params)?;
        let w = ls_solve(&system, resolve_ridge(&system, self.ridge))?;
        self.params.set_output_weights(&w);
        let loss = system.loss(&w);
        if !loss.is_finite() {
            return Err(DfrError::Diverged("non-finite loss".into()));
        }
        Ok(loss)
    }

    /// Runs `steps` Adam iterations, recording the state before the first
    /// (if not yet recorded) and after every step.
    pub fn run(&mut self, problem: &TrainingProblem, steps: usize) -> Result<()> {
        for _ in 0..steps {
            let eval = loss_gradient(problem, &self.params, self.ridge)?;
            self.params.set_output_weights(&eval.output_weights);
            self.record_row(problem, eval.loss, false)?;
            let trainable = eval.gradient.len();
            adam_step(&mut self.adam, &mut self.params.data[..trainable], &eval.gradient);
            if !self.params.is_finite() {
                return Err(DfrError::Diverged(format!("non-finite parameters after iteration {}", self.iteration + 1)));
            }
            self.iteration += 1;
        }
        let loss = self.refresh_output(problem)?;
        self.record_row(problem, loss, true)
    }
}

/// Trains from the seed's initialisation, applying the schedule's box additions.
pub fn train(problem: &mut TrainingProblem, schedule: &Schedule) -> Result<(ParamVector, History)> {
    schedule.validate()?;
    let params = crate::model::init_params(&problem.arch, schedule.seed);
    let mut trainer = Trainer::new(params, schedule);
    let mut stops: Vec<usize> = schedule.additions.iter().map(|a| a.0).filter(|&i| i < schedule.iterations).collect();
    stops.sort_unstable();
    stops.dedup();
    stops.push(schedule.iterations);
    for stop in stops {
        trainer.run(problem, stop - trainer.iteration)?;
        for (at, plans) in &schedule.additions {
            if *at == stop && stop < schedule.iterations {
                for p in plans {
                    problem.add_box(p.clone())?;
                }
            }
        }
    }
    Ok((trainer.params, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDomain;
    use crate::model::{init_params, IntervalCutoff};
    use crate::quadrature::{build_rule, GradingSpec};
    use std::f64::consts::PI;

    fn small_problem(source: SharedSource) -> TrainingProblem {
        let b = BoxDomain::interval(0, 0.0, PI).unwrap();
        let rule = build_rule(&b, &GradingSpec::uniform(vec![400]), Role::Training).unwrap();
        let val = build_rule(&b, &GradingSpec::uniform(vec![868]), Role::Validation).unwrap();
        TrainingProblem::new(
            Architecture::standard(1),
            Arc::new(IntervalCutoff { a: 0.0, b: PI }),
            source,
            vec![rule],
            Some(vec![val]),
            vec![BoxPlan { domain: b, counts: vec![30], patch: 0 }],
        )
        .unwrap()
    }

    fn square_problem() -> TrainingProblem {
        let b = BoxDomain::axis_aligned(0, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let rule = build_rule(&b, &GradingSpec::uniform(vec![100, 100]), Role::Training).unwrap();
        TrainingProblem::new(
            Architecture::standard(2),
            Arc::new(crate::model::UnitCutoff),
            Arc::new(|x: &[f64]| x[0].sin() + x[1] * x[1]),
            vec![rule],
            None,
            vec![BoxPlan { domain: b, counts: vec![10, 10], patch: 0 }],
        )
        .unwrap()
    }

    #[test]
    fn adam_examples() {
        let mut s = AdamState::new(2, 0.01);
        let mut th = [1.0, -2.0];
        adam_step(&mut s, &mut th, &[0.0, 0.0]);
        assert_eq!(th, [1.0, -2.0]);
        let mut s = AdamState::new(1, 0.01);
        let mut th = [0.0];
        adam_step(&mut s, &mut th, &[1.0]);
        assert!((th[0] + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.t, 1);
        let mut s = AdamState::new(3, 0.1);
        let mut th = [0.0; 3];
        let g = [2.0, -0.5, 1e-3];
        adam_step(&mut s, &mut th, &g);
        for (t, gv) in th.iter().zip(&g) {
            assert_eq!(t.signum(), -gv.signum());
        }
    }

    #[test]
    fn ls_examples() {
        let sys = LsSystem { a: DMatrix::identity(2, 2), b: DVector::from_vec(vec![3.0, -1.0]) };
        let w = ls_solve(&sys, 0.0).unwrap();
        assert!((w[0] - 3.0).abs() < 1e-14 && (w[1] + 1.0).abs() < 1e-14);
        let sys = LsSystem { a: DMatrix::from_vec(2, 1, vec![1.0, 1.0]), b: DVector::from_vec(vec![1.0, 3.0]) };
        assert!((ls_solve(&sys, 0.0).unwrap()[0] - 2.0).abs() < 1e-14);
        let sys = LsSystem { a: DMatrix::zeros(3, 2), b: DVector::from_vec(vec![1.0, 2.0, 3.0]) };
        assert_eq!(ls_solve(&sys, 1e-8).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(ls_solve(&sys, 0.0), Err(DfrError::RankDeficient)));
        let sys = LsSystem { a: DMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]), b: DVector::from_vec(vec![1.0, 0.0, 1.0]) };
        assert!(matches!(ls_solve(&sys, 0.0), Err(DfrError::RankDeficient)));
    }

    #[test]
    fn homogeneous_problem_has_zero_solution() {
        let p = small_problem(Arc::new(|_| 0.0));
        let params = init_params(&p.arch, 1);
        let sys = p.assemble_ls(&params).unwrap();
        assert!(sys.b.iter().all(|v| *v == 0.0));
        let w = ls_solve(&sys, sys.default_ridge()).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-12));
        assert!(sys.loss(&w) < 1e-20);
    }

    #[test]
    fn zero_hidden_weights_give_rank_one_system() {
        let p = small_problem(Arc::new(|x| x[0]));
        let mut params = ParamVector::zeros(p.arch.clone());
        let (_, rows, _, b) = p.arch.layer_layout(3);
        for i in 0..rows {
            params.data[b.unwrap() + i] = 0.1 * (i + 1) as f64;
        }
        let sys = p.assemble_ls(&params).unwrap();
        assert!(sys.a.rank(1e-10 * sys.a.norm()) <= 1);
        assert!(ls_solve(&sys, sys.default_ridge()).is_ok());
    }

    #[test]
    fn ls_solution_is_optimal() {
        let p = square_problem();
        let params = init_params(&p.arch, 3);
        let sys = p.assemble_ls(&params).unwrap();
        let w = ls_solve(&sys, 0.0).unwrap();
        let nr = sys.normal_residual(&w).norm();
        assert!(nr <= 1e-8 * sys.a.tr_mul(&sys.b).norm(), "{nr}");
        let best = sys.loss(&w);
        for k in 0..20 {
            let mut w2 = w.clone();
            w2[k % w.len()] += 1e-3;
            assert!(sys.loss(&w2) >= best);
        }
        // the operator loss agrees with the LS loss once W_L is installed
        let mut full = params.clone();
        full.set_output_weights(&w);
        let l = p.training_loss(&full).unwrap().total;
        assert!((l - best).abs() <= 1e-10 * best.max(1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = square_problem();
        let mut params = init_params(&p.arch, 7);
        let sys = p.assemble_ls(&params).unwrap();
        let w = ls_solve(&sys, sys.default_ridge()).unwrap();
        params.set_output_weights(&w);
        let eval = loss_gradient_fixed(&p, &params).unwrap();
        let central = |k: usize, h: f64| {
            let mut pp = params.clone();
            pp.data[k] += h;
            let mut pm = params.clone();
            pm.data[k] -= h;
            (p.training_loss(&pp).unwrap().total - p.training_loss(&pm).unwrap().total) / (2.0 * h)
        };
        let gmax = eval.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for k in (0..eval.gradient.len()).step_by(13) {
            // Richardson combination of two central differences, fourth order
            let fd = (4.0 * central(k, 5e-6) - central(k, 1e-5)) / 3.0;
            let g = eval.gradient[k];
            assert!((fd - g).abs() <= 1e-5 * fd.abs().max(g.abs()).max(1e-4 * gmax), "{k}: {fd} vs {g}");
        }
    }

    #[test]
    fn zero_iterations_record_one_row() {
        let mut p = small_problem(Arc::new(|_| 1.0));
        let (_, h) = train(&mut p, &Schedule::new(0, 1e-3, 0)).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.rows[0].iteration, 0);
        assert!(h.rows[0].val_loss.is_finite());
    }

    #[test]
    fn training_is_deterministic_and_bookkeeping_monotone() {
        let run = || {
            let mut p = small_problem(Arc::new(|x| x[0].sin()));
            train(&mut p, &Schedule::new(15, 1e-2, 4)).unwrap()
        };
        let (pa, ha) = run();
        let (pb, hb) = run();
        assert_eq!(pa, pb);
        let csv = |h: &History| {
            let mut buf = Vec::new();
            h.write_csv(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        assert_eq!(csv(&ha), csv(&hb));
        assert_eq!(ha.len(), 16);
        let best = ha.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
        assert!(ha.rows.iter().enumerate().all(|(i, r)| r.iteration == i));
        let text = csv(&ha);
        assert!(text.starts_with("iteration,train_loss,val_loss,rel_h1_error_pct\n"));
        assert_eq!(csv(&History::read_csv(&text).unwrap()), text);
    }

    #[test]
    fn additions_grow_the_operator() {
        let mut p = small_problem(Arc::new(|x| x[0]));
        let child = BoxDomain::interval(0, 0.0, PI / 2.0).unwrap();
        let mut s = Schedule::new(4, 1e-3, 1);
        s.additions = vec![(2, vec![BoxPlan { domain: child, counts: vec![3], patch: 0 }])];
        let (_, h) = train(&mut p, &s).unwrap();
        assert_eq!(h.len(), 5);
        assert_eq!(p.mode_count(), 33);
        assert_eq!(p.cover.len(), 2);
        assert_eq!(p.cover.boxes[1].id, 1);
    }

    #[test]
    fn invalid_schedule_rejected() {
        let mut p = small_problem(Arc::new(|_| 1.0));
        assert!(matches!(train(&mut p, &Schedule::new(1, -1.0, 0)), Err(DfrError::InvalidConfig(_))));
    }
}
