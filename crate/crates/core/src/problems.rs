//! Benchmark problems: manufactured solutions, cutoffs, covers, rules and
//! hyperparameters, plus the relative H1 error metric.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adaptivity::{refine_loop, LevelRecord, RefinementConfig};
use crate::geometry::{make_hat_cover, BoxDomain, Cover, FaceBc, Points};
use crate::model::{forward_with_grad, Architecture, Cutoff, FieldEval, IntervalCutoff, ParamVector, SharedCutoff};
use crate::optimizer::{train, BoxPlan, ErrorMetric, History, Schedule, TrainingProblem};
use crate::quadrature::{build_rule, validation_counterpart, GradingSpec, QuadratureRule, Role};
use crate::{DfrError, Result};

/// Cell ratio of the graded 1D training rules.
pub const RATIO_1D: f64 = 0.99;
/// Cell ratio of the graded 2D training and error rules.
pub const RATIO_2D: f64 = 0.97;
/// Cell ratio of the 5000-point 1D error rules.
pub const RATIO_1D_ERROR: f64 = 0.998;

/// Exact solution `u*` with its gradient and `f = -Laplace u*`.
pub trait ManufacturedSolution: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn rhs(&self, x: &[f64]) -> f64;
}

/// Value, gradient and Laplacian of a planar factor.
#[derive(Clone, Copy, Debug)]
struct Factor {
    v: f64,
    g: [f64; 2],
    lap: f64,
}

impl Factor {
    fn linear(v: f64, g: [f64; 2]) -> Self {
        Self { v, g, lap: 0.0 }
    }
}

fn product(fs: &[Factor]) -> Factor {
    let others = |skip: &[usize]| -> f64 {
        fs.iter().enumerate().filter(|(k, _)| !skip.contains(k)).map(|(_, f)| f.v).product()
    };
    let mut out = Factor { v: others(&[]), g: [0.0; 2], lap: 0.0 };
    for (i, fi) in fs.iter().enumerate() {
        let p = others(&[i]);
        out.g[0] += fi.g[0] * p;
        out.g[1] += fi.g[1] * p;
        out.lap += fi.lap * p;
        for (j, fj) in fs.iter().enumerate().skip(i + 1) {
            out.lap += 2.0 * (fi.g[0] * fj.g[0] + fi.g[1] * fj.g[1]) * others(&[i, j]);
        }
    }
    out
}

fn pentagon_factors(x: &[f64]) -> [Factor; 4] {
    let (x, y) = (x[0], x[1]);
    [
        Factor::linear(x + 1.0, [1.0, 0.0]),
        Factor { v: 1.0 - y * y, g: [0.0, -2.0 * y], lap: -2.0 },
        Factor::linear(x - y - 2.0, [1.0, -1.0]),
        Factor::linear(x + y - 2.0, [1.0, 1.0]),
    ]
}

/// `s(x,y) = (x+1)(1-y^2)(x-y-2)(x+y-2)`, vanishing on the five pentagon edges.
#[derive(Clone, Copy, Debug, Default)]
pub struct PentagonCutoff;

impl Cutoff for PentagonCutoff {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let s = product(&pentagon_factors(x));
        grad.copy_from_slice(&s.g);
        s.v
    }
}

/// `u* = (x^2 + y^2 - 0.25) s(x,y)` on the pentagon.
#[derive(Clone, Copy, Debug, Default)]
pub struct PentagonSolution;

impl PentagonSolution {
    fn eval(&self, x: &[f64]) -> Factor {
        let q = Factor { v: x[0] * x[0] + x[1] * x[1] - 0.25, g: [2.0 * x[0], 2.0 * x[1]], lap: 4.0 };
        let [a, b, c, d] = pentagon_factors(x);
        product(&[q, a, b, c, d])
    }
}

impl ManufacturedSolution for PentagonSolution {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).v
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x).g.to_vec()
    }
    fn rhs(&self, x: &[f64]) -> f64 {
        -self.eval(x).lap
    }
}

fn box_bubble(x: &[f64]) -> Factor {
    let (a, b) = (x[0] * x[0] - 1.0, x[1] * x[1] - 1.0);
    Factor { v: a * b, g: [2.0 * x[0] * b, 2.0 * x[1] * a], lap: 2.0 * (a + b) }
}

/// `(x^2-1)(y^2-1) sin(2/3 (pi - theta))`, positive on the L-shape and zero on
/// its whole boundary, including both re-entrant edges.
#[derive(Clone, Copy, Debug, Default)]
pub struct LShapeCutoff;

impl Cutoff for LShapeCutoff {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let g = box_bubble(x);
        let r2 = x[0] * x[0] + x[1] * x[1];
        let th = x[1].atan2(x[0]);
        let arg = 2.0 / 3.0 * (PI - th);
        let (s, c) = arg.sin_cos();
        let dth = if r2 > 0.0 { [-x[1] / r2, x[0] / r2] } else { [0.0, 0.0] };
        grad[0] = g.g[0] * s - g.v * c * 2.0 / 3.0 * dth[0];
        grad[1] = g.g[1] * s - g.v * c * 2.0 / 3.0 * dth[1];
        g.v * s
    }

    // the angular factor has no limit at the corner
    fn pin(&self) -> Option<Vec<f64>> {
        Some(vec![0.0, 0.0])
    }
}

/// `u* = (x^2-1)(y^2-1) r^(2/3) sin(2/3 (theta - pi))` on `(-1,1)^2 \ [-1,0]^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LShapeSolution;

impl LShapeSolution {
    /// The harmonic factor `r^(2/3) sin(2/3 (theta - pi))` and its gradient.
    pub fn singular(x: &[f64]) -> (f64, [f64; 2]) {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return (0.0, [0.0; 2]);
        }
        let th = x[1].atan2(x[0]);
        let phi = 2.0 / 3.0 * (th - PI);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = th.sin_cos();
        let amp = 2.0 / 3.0 * r.powf(-1.0 / 3.0);
        let gx = amp * (sp * ct - cp * st);
        let gy = amp * (sp * st + cp * ct);
        (r.powf(2.0 / 3.0) * sp, [gx, gy])
    }
}

impl ManufacturedSolution for LShapeSolution {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> f64 {
        box_bubble(x).v * Self::singular(x).0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let g = box_bubble(x);
        let (s, gs) = Self::singular(x);
        vec![g.g[0] * s + g.v * gs[0], g.g[1] * s + g.v * gs[1]]
    }
    fn rhs(&self, x: &[f64]) -> f64 {
        let g = box_bubble(x);
        let (s, gs) = Self::singular(x);
        -(s * g.lap + 2.0 * (g.g[0] * gs[0] + g.g[1] * gs[1]))
    }
}

/// `u* = x^alpha (pi - x)`.
#[derive(Clone, Copy, Debug)]
pub struct SingularSolution {
    pub alpha: f64,
}

impl ManufacturedSolution for SingularSolution {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0].powf(self.alpha) * (PI - x[0])
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (a, x) = (self.alpha, x[0]);
        vec![a * x.powf(a - 1.0) * (PI - x) - x.powf(a)]
    }
    fn rhs(&self, x: &[f64]) -> f64 {
        let (a, x) = (self.alpha, x[0]);
        -(a * (a - 1.0) * x.powf(a - 2.0) * (PI - x) - 2.0 * a * x.powf(a - 1.0))
    }
}

/// `u* = x (x - pi) exp(-c (x - m)^2)`.
#[derive(Clone, Copy, Debug)]
pub struct PeakSolution {
    pub c: f64,
    pub m: f64,
}

impl PeakSolution {
    fn parts(&self, x: f64) -> (f64, f64, f64) {
        let d = x - self.m;
        let g = (-self.c * d * d).exp();
        let g1 = -2.0 * self.c * d * g;
        let g2 = (-2.0 * self.c + 4.0 * self.c * self.c * d * d) * g;
        let p = x * x - PI * x;
        let p1 = 2.0 * x - PI;
        (p * g, p1 * g + p * g1, 2.0 * g + 2.0 * p1 * g1 + p * g2)
    }
}

impl ManufacturedSolution for PeakSolution {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.parts(x[0]).0
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![self.parts(x[0]).1]
    }
    fn rhs(&self, x: &[f64]) -> f64 {
        -self.parts(x[0]).2
    }
}

/// `u* = x sin(2x)` on `(0, pi)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SmoothSolution;

impl ManufacturedSolution for SmoothSolution {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        x[0] * (2.0 * x[0]).sin()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let x = x[0];
        vec![(2.0 * x).sin() + 2.0 * x * (2.0 * x).cos()]
    }
    fn rhs(&self, x: &[f64]) -> f64 {
        let x = x[0];
        -(4.0 * (2.0 * x).cos() - 4.0 * x * (2.0 * x).sin())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// `|v|_1^2 + |v|_0^2`.
    #[default]
    Full,
    Seminorm,
}

/// Relative error on a fixed rule, with the exact solution cached at its nodes.
#[derive(Clone, Debug)]
pub struct ErrorEvaluator {
    pub rule: QuadratureRule,
    pub norm: NormKind,
    exact_u: Vec<f64>,
    exact_grad: Vec<f64>,
    denominator: f64,
}

impl ErrorEvaluator {
    pub fn new(rule: QuadratureRule, solution: &dyn ManufacturedSolution, norm: NormKind) -> Result<Self> {
        let exact_u: Vec<f64> = rule.nodes.iter().map(|x| solution.value(x)).collect();
        let exact_grad: Vec<f64> = rule.nodes.iter().flat_map(|x| solution.gradient(x)).collect();
        let mut ev = Self { rule, norm, exact_u, exact_grad, denominator: 0.0 };
        let zero = FieldEval::zeros(ev.rule.dim(), ev.rule.len());
        ev.denominator = ev.squared_distance(&zero);
        if !(ev.denominator > 0.0) || !ev.denominator.is_finite() {
            return Err(DfrError::ZeroNorm);
        }
        Ok(ev)
    }

    fn squared_distance(&self, field: &FieldEval) -> f64 {
        let n = self.rule.dim();
        let mut acc = 0.0;
        for (q, w) in self.rule.weights.iter().enumerate() {
            let mut s: f64 = (0..n).map(|j| (field.grad[q * n + j] - self.exact_grad[q * n + j]).powi(2)).sum();
            if self.norm == NormKind::Full {
                s += (field.u[q] - self.exact_u[q]).powi(2);
            }
            acc += w * s;
        }
        acc
    }

    /// `100 ||u - u*|| / ||u*||` for a field sampled at the rule's nodes.
    pub fn relative_error(&self, field: &FieldEval) -> f64 {
        100.0 * (self.squared_distance(field) / self.denominator).sqrt()
    }

    pub fn nodes(&self) -> &Points {
        &self.rule.nodes
    }

    /// CSV rows `x, [y,] u, u*, |grad u - grad u*|` at the rule's nodes.
    pub fn write_solution_csv(&self, field: &FieldEval, mut w: impl Write) -> Result<()> {
        let n = self.rule.dim();
        let head = if n == 1 { "x" } else { "x,y" };
        writeln!(w, "{head},u,u_exact,grad_error")?;
        for (q, x) in self.rule.nodes.iter().enumerate() {
            let ge: f64 =
                (0..n).map(|j| (field.grad[q * n + j] - self.exact_grad[q * n + j]).powi(2)).sum::<f64>().sqrt();
            let coords: Vec<String> = x.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(w, "{},{:.17e},{:.17e},{:.17e}", coords.join(","), field.u[q], self.exact_u[q], ge)?;
        }
        Ok(())
    }
}

impl ErrorMetric for ErrorEvaluator {
    fn rel_error_pct(&self, params: &ParamVector, cutoff: &dyn Cutoff) -> Result<f64> {
        let field = forward_with_grad(params, cutoff, &self.rule.nodes)?;
        Ok(self.relative_error(&field))
    }
}

/// Relative error of a sampled field on a case's error rule, in percent.
pub fn relative_h1_error(field: &FieldEval, evaluator: &ErrorEvaluator) -> f64 {
    evaluator.relative_error(field)
}

/// A region carrying one global training rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub region: BoxDomain,
    pub grading: GradingSpec,
}

#[derive(Clone, Debug)]
pub struct CaseSpec {
    pub name: String,
    pub solution: Arc<dyn ManufacturedSolution>,
    pub cutoff: SharedCutoff,
    /// The computational domain as the union of its base boxes.
    pub domain: Cover,
    pub patches: Vec<PatchSpec>,
    pub plans: Vec<BoxPlan>,
    /// Boxes joining the cover once the given iteration is reached.
    pub additions: Vec<(usize, Vec<BoxPlan>)>,
    pub lr: f64,
    /// Plain-training iteration count (ignored when `refinement` is set).
    pub iterations: usize,
    pub refinement: Option<RefinementConfig>,
    pub error_region: BoxDomain,
    pub error_grading: GradingSpec,
    pub norm: NormKind,
    pub val_every: usize,
    pub err_every: usize,
}

impl CaseSpec {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn total_iterations(&self) -> usize {
        match &self.refinement {
            Some(r) => r.total_iterations(),
            None => self.iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DfrError::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(r) = &self.refinement {
            r.validate()?;
            if self.dim() != 1 {
                return Err(DfrError::UnsupportedDimension(self.dim()));
            }
        }
        let all = self.plans.iter().chain(self.additions.iter().flat_map(|a| a.1.iter()));
        for p in all {
            if p.patch >= self.patches.len() {
                return Err(DfrError::MissingRule(p.domain.id));
            }
            if p.counts.len() != p.domain.dim() || p.counts.contains(&0) {
                return Err(DfrError::InvalidConfig(format!("box {} needs a positive mode count per axis", p.domain.id)));
            }
        }
        for p in &self.patches {
            p.grading.validate()?;
        }
        self.error_grading.validate()
    }

    pub fn schedule(&self, seed: u64) -> Schedule {
        Schedule {
            iterations: self.total_iterations(),
            lr: self.lr,
            seed,
            val_every: self.val_every,
            err_every: self.err_every,
            ridge: None,
            additions: self.additions.clone(),
        }
    }

    pub fn training_rules(&self) -> Result<Vec<QuadratureRule>> {
        self.patches.iter().map(|p| build_rule(&p.region, &p.grading, Role::Training)).collect()
    }

    pub fn validation_rules(&self) -> Result<Vec<QuadratureRule>> {
        self.patches
            .iter()
            .map(|p| build_rule(&p.region, &validation_counterpart(&p.grading), Role::Validation))
            .collect()
    }

    /// Error rule on the bounding region with nodes outside the domain dropped.
    pub fn error_evaluator(&self) -> Result<ErrorEvaluator> {
        let full = build_rule(&self.error_region, &self.error_grading, Role::Overkill)?;
        let rule = full.filter(|x| self.domain.contains(x));
        ErrorEvaluator::new(rule, self.solution.as_ref(), self.norm)
    }

    pub fn build(&self, with_validation: bool, with_error: bool) -> Result<TrainingProblem> {
        self.validate()?;
        let sol = self.solution.clone();
        let source = Arc::new(move |x: &[f64]| -sol.rhs(x));
        let validation = if with_validation { Some(self.validation_rules()?) } else { None };
        let problem = TrainingProblem::new(
            Architecture::standard(self.dim()),
            self.cutoff.clone(),
            source,
            self.training_rules()?,
            validation,
            self.plans.clone(),
        )?;
        Ok(if with_error { problem.with_error(Arc::new(self.error_evaluator()?)) } else { problem })
    }

    /// Sets the mode counts of every box, including later additions.
    pub fn set_modes(&mut self, counts: &[usize]) {
        let fit = |p: &mut BoxPlan| p.counts = fit_counts(counts, &p.domain);
        self.plans.iter_mut().for_each(fit);
        self.additions.iter_mut().flat_map(|a| a.1.iter_mut()).for_each(fit);
        if let Some(r) = &mut self.refinement {
            r.modes_per_child = counts.to_vec();
        }
    }

    /// Sets the training cell counts of every patch.
    pub fn set_quad_points(&mut self, counts: &[usize]) {
        for p in &mut self.patches {
            p.grading.counts = fit_counts(counts, &p.region);
        }
    }
}

/// A single count applies to the longest axis, shorter axes scaled by length;
/// a full list is taken as given.
fn fit_counts(counts: &[usize], b: &BoxDomain) -> Vec<usize> {
    if counts.len() == b.dim() {
        return counts.to_vec();
    }
    let l = b.side_lengths();
    let lmax = l.iter().cloned().fold(0.0, f64::max);
    l.iter().map(|&li| ((counts[0] as f64 * li / lmax).round() as usize).max(1)).collect()
}

fn square(id: usize, lo: [f64; 2], hi: [f64; 2]) -> BoxDomain {
    BoxDomain::axis_aligned(id, &lo, &hi).expect("catalog box is valid")
}

/// Pentagon with a smooth solution.
pub fn case1() -> CaseSpec {
    let o1 = square(0, [-1.0, -1.0], [1.0, 1.0]);
    let o2 = BoxDomain::new(1, vec![0.0, 0.0], vec![vec![1.0, -1.0], vec![1.0, 1.0]], vec![FaceBc::Dirichlet; 4])
        .expect("catalog box is valid");
    let domain = Cover::new(vec![o1.clone(), o2.clone()]);
    let patches = [&o1, &o2]
        .iter()
        .map(|b| PatchSpec { region: (*b).clone(), grading: GradingSpec::uniform(vec![100, 100]) })
        .collect();
    let plans = vec![
        BoxPlan { domain: o1, counts: vec![10, 10], patch: 0 },
        BoxPlan { domain: o2, counts: vec![10, 10], patch: 1 },
    ];
    CaseSpec {
        name: "case1".into(),
        solution: Arc::new(PentagonSolution),
        cutoff: Arc::new(PentagonCutoff),
        domain,
        patches,
        plans,
        additions: Vec::new(),
        lr: 1e-2,
        iterations: 5000,
        refinement: None,
        error_region: square(0, [-1.0, -1.0], [2.0, 1.0]),
        error_grading: GradingSpec::uniform(vec![300, 300]),
        norm: NormKind::Full,
        val_every: 10,
        err_every: 10,
    }
}

fn lshape_case(name: &str, long: usize, short: usize, iterations: usize) -> CaseSpec {
    let o1 = square(0, [-1.0, 0.0], [1.0, 1.0]);
    let o2 = square(1, [0.0, -1.0], [1.0, 1.0]);
    let domain = Cover::new(vec![o1.clone(), o2.clone()]);
    let patches = vec![
        PatchSpec { region: o1.clone(), grading: GradingSpec::geometric(vec![500, 250], vec![0.0, 0.0], RATIO_2D) },
        PatchSpec { region: o2.clone(), grading: GradingSpec::geometric(vec![250, 500], vec![0.0, 0.0], RATIO_2D) },
    ];
    let plans = vec![
        BoxPlan { domain: o1, counts: vec![long, short], patch: 0 },
        BoxPlan { domain: o2, counts: vec![short, long], patch: 1 },
    ];
    CaseSpec {
        name: name.into(),
        solution: Arc::new(LShapeSolution),
        cutoff: Arc::new(LShapeCutoff),
        domain,
        patches,
        plans,
        additions: Vec::new(),
        lr: 1e-2,
        iterations,
        refinement: None,
        error_region: square(0, [-1.0, -1.0], [1.0, 1.0]),
        error_grading: GradingSpec::geometric(vec![500, 500], vec![0.0, 0.0], RATIO_2D),
        norm: NormKind::Full,
        val_every: 10,
        err_every: 10,
    }
}

/// L-shape with a corner singularity, two boxes.
pub fn case2() -> CaseSpec {
    lshape_case("case2", 20, 10, 1000)
}

/// Case 2 with `long x short` modes on the first box and `short x long` on the second.
pub fn case2_with_modes(long: usize, short: usize) -> CaseSpec {
    lshape_case("case2", long, short, 1000)
}

/// Case 2 with two pairs of nested boxes at the corner, added after 1000 and 2000 iterations.
pub fn case3() -> CaseSpec {
    let mut c = lshape_case("case3", 20, 10, 3000);
    let level = |lo1: [f64; 2], hi1: [f64; 2], lo2: [f64; 2], hi2: [f64; 2], lvl: u32| {
        let mut a = square(0, lo1, hi1);
        let mut b = square(0, lo2, hi2);
        a.level = lvl;
        b.level = lvl;
        vec![BoxPlan { domain: a, counts: vec![20, 10], patch: 0 }, BoxPlan { domain: b, counts: vec![10, 20], patch: 1 }]
    };
    c.additions = vec![
        (1000, level([-0.6, 0.0], [0.6, 0.6], [0.0, -0.6], [0.6, 0.6], 1)),
        (2000, level([-0.2, 0.0], [0.2, 0.2], [0.0, -0.2], [0.2, 0.2], 2)),
    ];
    c
}

fn interval_case(
    name: &str,
    solution: Arc<dyn ManufacturedSolution>,
    focus: f64,
    plans: Vec<BoxPlan>,
    refinement: Option<RefinementConfig>,
    iterations: usize,
) -> CaseSpec {
    let region = BoxDomain::interval(0, 0.0, PI).expect("catalog box is valid");
    CaseSpec {
        name: name.into(),
        solution,
        cutoff: Arc::new(IntervalCutoff { a: 0.0, b: PI }),
        domain: Cover::new(vec![region.clone()]),
        patches: vec![PatchSpec { region: region.clone(), grading: GradingSpec::geometric(vec![500], vec![focus], RATIO_1D) }],
        plans,
        additions: Vec::new(),
        lr: 10f64.powf(-3.5),
        iterations,
        refinement,
        error_region: region,
        error_grading: GradingSpec::geometric(vec![5000], vec![focus], RATIO_1D_ERROR),
        norm: NormKind::Full,
        val_every: 1,
        err_every: 1,
    }
}

fn hat_plans() -> Vec<BoxPlan> {
    let knots: Vec<f64> = (0..5).map(|k| k as f64 * PI / 4.0).collect();
    make_hat_cover(&knots, [FaceBc::Dirichlet; 2])
        .expect("catalog knots are valid")
        .boxes
        .into_iter()
        .map(|b| BoxPlan { domain: b, counts: vec![5], patch: 0 })
        .collect()
}

fn global_plan(modes: usize) -> Vec<BoxPlan> {
    vec![BoxPlan { domain: BoxDomain::interval(0, 0.0, PI).expect("catalog box is valid"), counts: vec![modes], patch: 0 }]
}

/// Singular 1D solution `x^0.7 (pi - x)` with adaptive refinement.
pub fn case4() -> CaseSpec {
    let refinement =
        RefinementConfig { tau: 0.66, max_ref: 5, modes_per_child: vec![5], level_iterations: 500, final_iterations: 1000 };
    interval_case("case4", Arc::new(SingularSolution { alpha: 0.7 }), 0.0, hat_plans(), Some(refinement), 0)
}

/// Case 4 without refinement: `modes` global modes, same rule and iteration budget.
pub fn case4_reference(modes: usize) -> CaseSpec {
    let budget = case4().total_iterations();
    interval_case("case4-reference", Arc::new(SingularSolution { alpha: 0.7 }), 0.0, global_plan(modes), None, budget)
}

/// Peaked 1D solution with adaptive refinement.
pub fn case5() -> CaseSpec {
    let refinement =
        RefinementConfig { tau: 0.66, max_ref: 5, modes_per_child: vec![5], level_iterations: 500, final_iterations: 500 };
    interval_case("case5", Arc::new(PeakSolution { c: 120.0, m: PI / 2.0 }), PI / 2.0, hat_plans(), Some(refinement), 0)
}

/// Case 5 without refinement: `modes` global modes, same rule and iteration budget.
pub fn case5_reference(modes: usize) -> CaseSpec {
    let budget = case5().total_iterations();
    let sol = Arc::new(PeakSolution { c: 120.0, m: PI / 2.0 });
    interval_case("case5-reference", sol, PI / 2.0, global_plan(modes), None, budget)
}

/// Smooth 1D problem on a single box, uniform rule.
pub fn custom() -> CaseSpec {
    let mut c = interval_case("custom", Arc::new(SmoothSolution), 0.0, global_plan(20), None, 1000);
    c.lr = 1e-3;
    c.patches[0].grading = GradingSpec::uniform(vec![500]);
    c.error_grading = GradingSpec::uniform(vec![5000]);
    c
}

/// Catalog names accepted by [`by_name`].
pub const CASE_NAMES: [&str; 8] = ["case1", "case2", "case3", "case4", "case5", "case4-reference", "case5-reference", "custom"];

/// Catalog lookup; the references use 40 (Case 4) and 25 (Case 5) global modes.
pub fn by_name(name: &str) -> Result<CaseSpec> {
    match name {
        "case1" => Ok(case1()),
        "case2" => Ok(case2()),
        "case3" => Ok(case3()),
        "case4" => Ok(case4()),
        "case5" => Ok(case5()),
        "case4-reference" => Ok(case4_reference(40)),
        "case5-reference" => Ok(case5_reference(25)),
        "custom" => Ok(custom()),
        other => Err(DfrError::InvalidConfig(format!("unknown case '{other}'"))),
    }
}

pub struct CaseOutcome {
    pub problem: TrainingProblem,
    pub params: ParamVector,
    pub history: History,
    /// Covers per level; a single entry for plain training.
    pub levels: Vec<LevelRecord>,
}

/// Builds and trains a case, refining when it carries a refinement config.
pub fn run_case(spec: &CaseSpec, schedule: &Schedule, out: Option<&Path>) -> Result<CaseOutcome> {
    let mut problem = spec.build(true, true)?;
    match &spec.refinement {
        Some(r) => {
            let o = refine_loop(&mut problem, r, schedule, out)?;
            Ok(CaseOutcome { problem, params: o.params, history: o.history, levels: o.levels })
        }
        None => {
            let (params, history) = train(&mut problem, schedule)?;
            let level = LevelRecord { level: 0, cover: problem.cover.clone(), table: None, added: Vec::new() };
            if let Some(dir) = out {
                std::fs::write(dir.join("cover_level_0.json"), level.cover.to_json()?)?;
            }
            Ok(CaseOutcome { problem, params, history, levels: vec![level] })
        }
    }
}
