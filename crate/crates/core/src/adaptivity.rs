//! Threshold-marked refinement of 1D covers driven by local loss indicators.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::mode_set;
use crate::geometry::{subdivide, BoxDomain, Cover};
use crate::model::init_params;
use crate::optimizer::{BoxPlan, History, Schedule, Trainer, TrainingProblem};
use crate::residual::BoxOperator;
use crate::model::ParamVector;
use crate::{DfrError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub tau: f64,
    pub max_ref: usize,
    pub modes_per_child: Vec<usize>,
    pub level_iterations: usize,
    pub final_iterations: usize,
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(DfrError::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.modes_per_child.contains(&0) || self.modes_per_child.is_empty() {
            return Err(DfrError::InvalidConfig("modes per child must be positive".into()));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.max_ref * self.level_iterations + self.final_iterations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Indicator {
    pub parent_id: usize,
    pub child_index: usize,
    pub child: BoxDomain,
    pub epsilon: f64,
    /// Patch the parent integrates on; the child inherits it.
    pub patch: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndicatorTable {
    pub entries: Vec<Indicator>,
}

impl IndicatorTable {
    pub fn max(&self) -> f64 {
        self.entries.iter().map(|e| e.epsilon).fold(0.0, f64::max)
    }

    pub fn get(&self, parent_id: usize, child_index: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.parent_id == parent_id && e.child_index == child_index)
            .map(|e| e.epsilon)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "parent_id,child_index,epsilon")?;
        for e in &self.entries {
            writeln!(w, "{},{},{:.17e}", e.parent_id, e.child_index, e.epsilon)?;
        }
        Ok(())
    }
}

/// Candidate children of every box in the cover.
///
/// A candidate covering the same region as an existing box, or as an earlier
/// candidate, is skipped.
pub fn candidates(cover: &Cover) -> Result<Vec<(usize, usize, BoxDomain)>> {
    let mut out: Vec<(usize, usize, BoxDomain)> = Vec::new();
    for parent in &cover.boxes {
        for (j, child) in subdivide(parent)?.into_iter().enumerate() {
            let dup = cover.boxes.iter().any(|b| b.same_region(&child, 1e-12))
                || out.iter().any(|(_, _, c)| c.same_region(&child, 1e-12));
            if !dup {
                out.push((parent.id, j, child));
            }
        }
    }
    Ok(out)
}

/// Local loss of `params` on every candidate child, each equipped with DD modes
/// and the restriction of its parent's training patch.
pub fn indicators(problem: &TrainingProblem, params: &ParamVector, config: &RefinementConfig) -> Result<IndicatorTable> {
    let fields = problem.fields(params, &problem.training)?;
    let mut entries = Vec::new();
    for (parent_id, child_index, child) in candidates(&problem.cover)? {
        let patch = problem
            .plans
            .iter()
            .find(|p| p.domain.id == parent_id)
            .map(|p| p.patch)
            .ok_or(DfrError::MissingRule(parent_id))?;
        let rule = problem.training.patches.get(patch).ok_or(DfrError::MissingRule(parent_id))?;
        let modes = mode_set(&child, &config.modes_per_child)?;
        let src = problem.source.clone();
        let op = BoxOperator::new(&child, modes, patch, rule, &move |x: &[f64]| src(x))?;
        let epsilon = op.local_loss(&fields[patch]);
        entries.push(Indicator { parent_id, child_index, child, epsilon, patch });
    }
    Ok(IndicatorTable { entries })
}

/// Entries strictly above `tau` times the largest indicator.
pub fn mark(table: &IndicatorTable, tau: f64) -> Vec<&Indicator> {
    let cut = tau * table.max();
    table.entries.iter().filter(|e| e.epsilon > cut).collect()
}

#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub level: usize,
    /// Cover the level was trained on.
    pub cover: Cover,
    pub table: Option<IndicatorTable>,
    pub added: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub params: ParamVector,
    pub history: History,
    pub levels: Vec<LevelRecord>,
}

/// Trains, refines and retrains with warm-started parameters.
///
/// `schedule` supplies rate, seed, ridge and metric cadence; its iteration count
/// is ignored in favour of the level counts in `config`. When `out` is given the
/// cover of each level and every indicator table are written there.
pub fn refine_loop(
    problem: &mut TrainingProblem,
    config: &RefinementConfig,
    schedule: &Schedule,
    out: Option<&Path>,
) -> Result<RefineOutcome> {
    config.validate()?;
    schedule.validate()?;
    let mut trainer = Trainer::new(init_params(&problem.arch, schedule.seed), schedule);
    let mut levels = Vec::new();
    for q in 0..config.max_ref {
        trainer.run(problem, config.level_iterations)?;
        let table = indicators(problem, &trainer.params, config)?;
        let marked: Vec<Indicator> = mark(&table, config.tau).into_iter().cloned().collect();
        let cover = problem.cover.clone();
        let mut added = Vec::new();
        for m in marked {
            let plan = BoxPlan { domain: m.child, counts: config.modes_per_child.clone(), patch: m.patch };
            added.push(problem.add_box(plan)?);
        }
        write_level(out, q, &cover, Some(&table))?;
        levels.push(LevelRecord { level: q, cover, table: Some(table), added });
    }
    trainer.run(problem, config.final_iterations)?;
    write_level(out, config.max_ref, &problem.cover, None)?;
    levels.push(LevelRecord { level: config.max_ref, cover: problem.cover.clone(), table: None, added: Vec::new() });
    Ok(RefineOutcome { params: trainer.params, history: trainer.history, levels })
}

fn write_level(out: Option<&Path>, q: usize, cover: &Cover, table: Option<&IndicatorTable>) -> Result<()> {
    let Some(dir) = out else { return Ok(()) };
    std::fs::write(dir.join(format!("cover_level_{q}.json")), cover.to_json()?)?;
    if let Some(t) = table {
        t.write_csv(std::fs::File::create(dir.join(format!("indicators_level_{q}.csv")))?)?;
    }
    Ok(())
}
