//! Run configuration, batch runs, verification reports and run comparison
//! behind the `dfrdd` binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dfrdd::geometry::{BoxDomain, Cover};
use dfrdd::model::{forward_with_grad, init_params};
use dfrdd::optimizer::{gradient_check, History, Schedule};
use dfrdd::problems::{self, CaseSpec};
use dfrdd::vericonst::{self, PartitionOfUnity};
use dfrdd::{DfrError, Result};

/// Fully resolved run settings, written to `config_resolved.json`.
///
/// `iterations` is the plain training length, or for refining cases the
/// length of the final stage after the last refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: String,
    pub seed: u64,
    pub lr: f64,
    pub iterations: usize,
    pub level_iterations: Option<usize>,
    pub tau: Option<f64>,
    pub max_ref: Option<usize>,
    /// Mode counts for every box (one count scales with side length); `null` keeps the catalog counts.
    pub modes: Option<Vec<usize>>,
    /// Training cells per axis for every patch; `null` keeps the catalog rules.
    pub quad_points: Option<Vec<usize>>,
    /// Fixed ridge; `null` selects the default relative ridge.
    pub ridge: Option<f64>,
    pub val_every: usize,
    pub err_every: usize,
    pub out: PathBuf,
}

/// Command-line overrides; unset fields fall back to the base config or the catalog.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub case: Option<String>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub iterations: Option<usize>,
    pub level_iterations: Option<usize>,
    pub tau: Option<f64>,
    pub max_ref: Option<usize>,
    pub modes: Option<Vec<usize>>,
    pub quad_points: Option<Vec<usize>>,
    pub ridge: Option<f64>,
    pub val_every: Option<usize>,
    pub err_every: Option<usize>,
    pub out: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> DfrError {
    DfrError::InvalidConfig(msg.into())
}

impl RunConfig {
    /// Catalog defaults for `case`.
    pub fn defaults(case: &str, out: PathBuf) -> Result<Self> {
        let spec = problems::by_name(case)?;
        let r = spec.refinement.as_ref();
        Ok(Self {
            case: case.into(),
            seed: 1,
            lr: spec.lr,
            iterations: r.map_or(spec.iterations, |r| r.final_iterations),
            level_iterations: r.map(|r| r.level_iterations),
            tau: r.map(|r| r.tau),
            max_ref: r.map(|r| r.max_ref),
            modes: None,
            quad_points: None,
            ridge: None,
            val_every: spec.val_every,
            err_every: spec.err_every,
            out,
        })
    }

    /// Applies overrides to `base` (or to the catalog defaults of the requested case) and validates.
    pub fn resolve(base: Option<RunConfig>, o: Overrides) -> Result<Self> {
        let mut c = match (base, &o.case) {
            (Some(b), None) => b,
            (Some(b), Some(name)) if *name == b.case => b,
            (_, Some(name)) => Self::defaults(name, o.out.clone().unwrap_or_else(|| "dfrdd-out".into()))?,
            (None, None) => return Err(invalid("no case given (use --case or --config)")),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { c.$f = v; })* };
        }
        macro_rules! set_opt {
            ($($f:ident),*) => { $(if let Some(v) = o.$f.clone() { c.$f = Some(v); })* };
        }
        set!(seed, lr, iterations, val_every, err_every, out);
        let refining = problems::by_name(&c.case)?.refinement.is_some();
        if !refining && (o.tau.is_some() || o.max_ref.is_some() || o.level_iterations.is_some()) {
            return Err(invalid(format!("{} does not refine; --tau, --max-ref and --level-iterations do not apply", c.case)));
        }
        set_opt!(level_iterations, tau, max_ref, modes, quad_points, ridge);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t <= 1.0) {
                return Err(invalid(format!("tau must lie in (0, 1], got {t}")));
            }
        }
        for (name, v) in [("modes", &self.modes), ("quad-points", &self.quad_points)] {
            if let Some(v) = v {
                if v.is_empty() || v.len() > 2 || v.contains(&0) {
                    return Err(invalid(format!("{name} needs one or two positive counts")));
                }
            }
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(invalid(format!("ridge must be non-negative, got {r}")));
            }
        }
        self.spec()?.validate()
    }

    /// The catalog case with this config applied.
    pub fn spec(&self) -> Result<CaseSpec> {
        let mut s = problems::by_name(&self.case)?;
        s.lr = self.lr;
        s.val_every = self.val_every;
        s.err_every = self.err_every;
        if let Some(m) = &self.modes {
            if m.len() > s.dim() {
                return Err(invalid(format!("{} is {}D; got {} mode counts", self.case, s.dim(), m.len())));
            }
            s.set_modes(m);
        }
        if let Some(q) = &self.quad_points {
            if q.len() > s.dim() {
                return Err(invalid(format!("{} is {}D; got {} point counts", self.case, s.dim(), q.len())));
            }
            s.set_quad_points(q);
        }
        match &mut s.refinement {
            Some(r) => {
                r.final_iterations = self.iterations;
                if let Some(v) = self.level_iterations {
                    r.level_iterations = v;
                }
                if let Some(v) = self.tau {
                    r.tau = v;
                }
                if let Some(v) = self.max_ref {
                    r.max_ref = v;
                }
            }
            None => s.iterations = self.iterations,
        }
        Ok(s)
    }

    pub fn schedule(&self, spec: &CaseSpec) -> Schedule {
        let mut sch = spec.schedule(self.seed);
        sch.ridge = self.ridge;
        sch
    }
}

/// Final numbers of a completed run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: String,
    pub seed: u64,
    pub rows: usize,
    pub subdomains: usize,
    pub modes: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub final_rel_h1_error_pct: f64,
}

/// Trains the configured case and writes `config_resolved.json`, `history.csv`,
/// `cover_level_q.json` and `solution.csv` into the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let spec = cfg.spec()?;
    spec.validate()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config_resolved.json"), serde_json::to_string_pretty(cfg)?)?;
    let outcome = problems::run_case(&spec, &cfg.schedule(&spec), Some(&cfg.out))?;
    write_stage_covers(&cfg.out, &outcome.problem.cover, spec.refinement.is_some())?;
    outcome.history.write_csv(fs::File::create(cfg.out.join("history.csv"))?)?;
    let ev = spec.error_evaluator()?;
    let field = forward_with_grad(&outcome.params, spec.cutoff.as_ref(), ev.nodes())?;
    ev.write_solution_csv(&field, std::io::BufWriter::new(fs::File::create(cfg.out.join("solution.csv"))?))?;
    let last = outcome.history.last().cloned().ok_or_else(|| invalid("empty history"))?;
    Ok(RunSummary {
        case: cfg.case.clone(),
        seed: cfg.seed,
        rows: outcome.history.len(),
        subdomains: outcome.problem.cover.len(),
        modes: outcome.problem.mode_count(),
        final_train_loss: last.train_loss,
        final_val_loss: last.val_loss,
        final_rel_h1_error_pct: last.rel_h1_error_pct,
    })
}

/// Staged covers of plain runs: level `q` holds the boxes added up to stage `q`.
fn write_stage_covers(out: &Path, cover: &Cover, refined: bool) -> Result<()> {
    if refined {
        return Ok(());
    }
    let top = cover.boxes.iter().map(|b| b.level).max().unwrap_or(0);
    for q in 0..=top {
        let boxes: Vec<BoxDomain> = cover.boxes.iter().filter(|b| b.level <= q).cloned().collect();
        fs::write(out.join(format!("cover_level_{q}.json")), Cover::new(boxes).to_json()?)?;
    }
    Ok(())
}

/// Verification reports selectable with `--verify`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyKind {
    LshapeXi,
    Partition,
    Gradcheck,
}

impl VerifyKind {
    pub fn file_name(self) -> &'static str {
        match self {
            VerifyKind::LshapeXi => "verify_lshape_xi.json",
            VerifyKind::Partition => "verify_partition.json",
            VerifyKind::Gradcheck => "verify_gradcheck.json",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PartitionReport {
    pub geometry: String,
    pub samples: usize,
    pub singular_points: Vec<[f64; 2]>,
    pub partition_max_deviation: f64,
    pub grad_bound_pass_rate: f64,
}

fn geometry_cover(case: Option<&str>) -> Result<(String, Cover)> {
    match case.unwrap_or("case2") {
        "case1" => Ok(("pentagon".into(), problems::case1().domain)),
        "case2" | "case3" => Ok(("lshape".into(), problems::case2().domain)),
        other => Err(invalid(format!("no partition geometry for {other}; use case1 (pentagon) or case2 (L-shape)"))),
    }
}

/// Runs a verification and writes its JSON report into `out`.
pub fn verify(kind: VerifyKind, case: Option<&str>, seed: u64, out: &Path) -> Result<serde_json::Value> {
    const SAMPLES: usize = 10_000;
    let value = match kind {
        VerifyKind::LshapeXi => {
            let cover = problems::case2().domain;
            serde_json::to_value(vericonst::verification_report(&cover, SAMPLES, 128, 200, seed)?)?
        }
        VerifyKind::Partition => {
            let (geometry, cover) = geometry_cover(case)?;
            let singular_points = vericonst::find_singular_points(&cover, 1e-3)?;
            let pou = PartitionOfUnity::new(&cover)?;
            let pts = vericonst::sample_domain(&cover, SAMPLES, seed, 1e-6, &singular_points, 1e-3);
            let mut dev: f64 = 0.0;
            for x in pts.iter() {
                let r = pou.rho(x).ok_or_else(|| invalid("sample hit a singular point"))?;
                dev = dev.max((r.iter().sum::<f64>() - 1.0).abs());
            }
            let grad = vericonst::grad_bound_check(&pou, &pts, 1e-7);
            serde_json::to_value(PartitionReport {
                geometry,
                samples: SAMPLES,
                singular_points,
                partition_max_deviation: dev,
                grad_bound_pass_rate: grad.pass_rate,
            })?
        }
        VerifyKind::Gradcheck => {
            let spec = problems::by_name(case.unwrap_or("case4"))?;
            let problem = spec.build(false, false)?;
            let params = init_params(&problem.arch, seed);
            serde_json::to_value(gradient_check(&problem, &params, 50, seed, 1e-4)?)?
        }
    };
    fs::create_dir_all(out)?;
    fs::write(out.join(kind.file_name()), serde_json::to_string_pretty(&value)?)?;
    Ok(value)
}

fn read_run(dir: &Path) -> Result<(RunConfig, History, usize)> {
    let read = |name: &str| {
        fs::read_to_string(dir.join(name)).map_err(|e| invalid(format!("{}: {e}", dir.join(name).display())))
    };
    let cfg: RunConfig = serde_json::from_str(&read("config_resolved.json")?)?;
    let history = History::read_csv(&read("history.csv")?)?;
    let mut last = None;
    for q in 0.. {
        match fs::read_to_string(dir.join(format!("cover_level_{q}.json"))) {
            Ok(s) => last = Some(s),
            Err(_) => break,
        }
    }
    let cover = last.ok_or_else(|| invalid(format!("{}: no cover_level_0.json", dir.display())))?;
    Ok((cfg, history, Cover::from_json(&cover)?.len()))
}

/// CSV with one row per run: final losses, error and cover size.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.len() < 2 {
        return Err(invalid("compare needs at least two run directories"));
    }
    let mut s = String::from("run,case,seed,iterations,subdomains,final_train_loss,final_val_loss,final_rel_h1_error_pct\n");
    for d in dirs {
        let (cfg, h, boxes) = read_run(d)?;
        let last = h.last().ok_or_else(|| invalid(format!("{}: empty history", d.display())))?;
        s.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{:e}\n",
            d.display(),
            cfg.case,
            cfg.seed,
            last.iteration,
            boxes,
            last.train_loss,
            last.val_loss,
            last.rel_h1_error_pct
        ));
    }
    Ok(s)
}

/// Process exit status for an error: 3 for numerical divergence, 2 for invalid
/// input or unusable files, 1 otherwise.
pub fn exit_code(e: &DfrError) -> u8 {
    if e.is_divergence() {
        return 3;
    }
    match e {
        DfrError::InvalidConfig(_)
        | DfrError::InvalidBox(_)
        | DfrError::InvalidBasis(_)
        | DfrError::InvalidQuadrature(_)
        | DfrError::UnsupportedDimension(_)
        | DfrError::DegeneratePartition(_)
        | DfrError::MissingRule(_)
        | DfrError::EmptyRestriction(_)
        | DfrError::Io(_)
        | DfrError::Json(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn o() -> Overrides {
        Overrides { out: Some("x".into()), ..Default::default() }
    }

    #[test]
    fn defaults_follow_catalog() {
        let c = RunConfig::resolve(None, Overrides { case: Some("case4".into()), ..o() }).unwrap();
        assert_eq!((c.iterations, c.level_iterations, c.max_ref, c.tau), (1000, Some(500), Some(5), Some(0.66)));
        assert_eq!(c.spec().unwrap().total_iterations(), 3500);
        let c = RunConfig::resolve(None, Overrides { case: Some("case1".into()), ..o() }).unwrap();
        assert_eq!((c.iterations, c.tau, c.lr), (5000, None, 1e-2));
    }

    #[test]
    fn overrides_apply() {
        let ov = Overrides {
            case: Some("case5".into()),
            tau: Some(0.5),
            max_ref: Some(2),
            level_iterations: Some(10),
            iterations: Some(20),
            modes: Some(vec![7]),
            ..o()
        };
        let c = RunConfig::resolve(None, ov).unwrap();
        let s = c.spec().unwrap();
        let r = s.refinement.unwrap();
        assert_eq!((r.tau, r.max_ref, r.level_iterations, r.final_iterations), (0.5, 2, 10, 20));
        assert_eq!(r.modes_per_child, vec![7]);
        assert!(s.plans.iter().all(|p| p.counts == vec![7]));
    }

    #[test]
    fn invalid_overrides_rejected() {
        let bad = [
            Overrides { case: Some("case4".into()), tau: Some(0.0), ..o() },
            Overrides { case: Some("case4".into()), tau: Some(1.5), ..o() },
            Overrides { case: Some("case1".into()), tau: Some(0.5), ..o() },
            Overrides { case: Some("case1".into()), lr: Some(-1.0), ..o() },
            Overrides { case: Some("case1".into()), modes: Some(vec![0]), ..o() },
            Overrides { case: Some("case4".into()), quad_points: Some(vec![10, 10]), ..o() },
            Overrides { case: Some("case1".into()), ridge: Some(-1.0), ..o() },
            Overrides { case: Some("case9".into()), ..o() },
            o(),
        ];
        for ov in bad {
            let e = RunConfig::resolve(None, ov.clone()).unwrap_err();
            assert_eq!(exit_code(&e), 2, "{ov:?}");
        }
    }

    #[test]
    fn config_roundtrip() {
        let c = RunConfig::resolve(None, Overrides { case: Some("case3".into()), seed: Some(4), ..o() }).unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let again = RunConfig::resolve(Some(back), Overrides { lr: Some(0.5), ..Default::default() }).unwrap();
        assert_eq!((again.seed, again.lr), (4, 0.5));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&DfrError::Diverged("x".into())), 3);
        assert_eq!(exit_code(&DfrError::DivergedParameters), 3);
        assert_eq!(exit_code(&DfrError::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code(&DfrError::RankDeficient), 1);
    }
}
