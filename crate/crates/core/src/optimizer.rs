//! The sequential transfer optimizer and the plain surrogate-assisted
//! baseline it is compared against.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::archive::{RecordMeta, SourceArchive, TaskRecord};
use crate::embedder::{select_and_weight, task_similarity, SimilarityReport, TaskState};
use crate::ensemble::{choose_c, EnsembleSurrogate, Remapped, SharedSurrogate, ThresholdBasis};
use crate::error::{Error, Result};
use crate::exec;
use crate::gp::{train_gp, Surrogate};
use crate::metrics::{hypervolume, HvReference};
use crate::moea::{environmental_selection, evolve_generation, Fidelity, Individual, Population, Variation};
use crate::problems::ExpensiveProblem;
use crate::sampling::{hash_str, latin_hypercube, mix_seed, seeded_rng, SeedRng};
use crate::transfer::{build_initial_population, crowding_of, sort_fronts, InjectionPlan};
use crate::types::{non_dominated_indices, Bounds, DecisionVector, EvaluatedSolution, ObjectiveVector};

/// Which transfer components are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Elite injection and the source surrogate ensemble.
    Seeto,
    /// Elite injection only; the surrogate is the local GP.
    SolutionOnly,
    /// Source surrogate ensemble only; random initial population.
    ModelOnly,
    /// No transfer: Latin hypercube design and a local GP.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Seeto, Mode::SolutionOnly, Mode::ModelOnly, Mode::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Seeto => "seeto",
            Mode::SolutionOnly => "solution-only",
            Mode::ModelOnly => "model-only",
            Mode::Baseline => "baseline",
        }
    }

    pub fn injects_elites(self) -> bool {
        matches!(self, Mode::Seeto | Mode::SolutionOnly)
    }

    pub fn uses_source_models(self) -> bool {
        matches!(self, Mode::Seeto | Mode::ModelOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::usage(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_p: usize,
    pub fe_max: usize,
    /// True evaluations per iteration.
    pub batch_size: usize,
    /// Surrogate-assisted generations between two batches.
    pub inner_generations: usize,
    pub gamma: usize,
    pub temperature: f64,
    pub tau: f64,
    pub c_high: f64,
    pub c_low: f64,
    pub rho: f64,
    /// Exploration weight of the lower confidence bound.
    pub kappa: f64,
    pub threshold_basis: ThresholdBasis,
    /// Use this `c` regardless of similarity.
    pub c_override: Option<f64>,
    /// Size of the baseline's initial design.
    pub baseline_initial: usize,
    #[serde(skip)]
    pub variation: Variation,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_p: 100,
            fe_max: 60,
            batch_size: 5,
            inner_generations: 20,
            gamma: 5,
            temperature: 0.065,
            tau: 0.7,
            c_high: 0.038,
            c_low: 0.017,
            rho: 0.2,
            kappa: 1.0,
            threshold_basis: ThresholdBasis::default(),
            c_override: None,
            baseline_initial: 20,
            variation: Variation::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::usage(m));
        if self.n_p < 2 {
            return fail(format!("n_p must be at least 2, got {}", self.n_p));
        }
        if self.fe_max == 0 || self.batch_size == 0 {
            return fail("fe_max and batch_size must be positive".into());
        }
        if self.batch_size > self.n_p {
            return fail("batch_size cannot exceed n_p".into());
        }
        if self.gamma == 0 || !(self.temperature > 0.0) {
            return fail("gamma and temperature must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.c_high > 0.0 && self.c_low > 0.0) || self.c_override.is_some_and(|c| !(c > 0.0)) {
            return fail("decay controls must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.kappa >= 0.0) {
            return fail("kappa must be non-negative".into());
        }
        if self.baseline_initial < 2 || self.baseline_initial > self.fe_max.min(self.n_p) {
            return fail(format!(
                "baseline_initial must lie in [2, min(fe_max, n_p)], got {}",
                self.baseline_initial
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// 1-based evaluation count.
    pub fe: usize,
    pub decision: DecisionVector,
    pub objectives: ObjectiveVector,
    /// Hypervolume of every true evaluation so far.
    pub incumbent_hv: f64,
    /// Drawn at random because every surrogate candidate was already evaluated.
    pub random_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrajectory {
    pub task_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub points: Vec<TrajectoryPoint>,
    pub similarity: Option<SimilarityReport>,
    /// Decay control in effect; `None` when no source model took part.
    pub c: Option<f64>,
    pub injection: Option<InjectionPlan>,
    /// Iterations in which the local GP could not be fitted.
    pub local_fit_failures: usize,
}

impl RunTrajectory {
    /// `hv_by_fe()[k]` is the incumbent HV after `k + 1` evaluations.
    pub fn hv_by_fe(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.incumbent_hv).collect()
    }

    pub fn hv_at(&self, fe: usize) -> Option<f64> {
        fe.checked_sub(1).and_then(|k| self.points.get(k)).map(|p| p.incumbent_hv)
    }

    pub fn final_hv(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.incumbent_hv)
    }

    pub fn evaluations(&self) -> usize {
        self.points.len()
    }

    pub fn dataset(&self) -> Vec<EvaluatedSolution> {
        self.points
            .iter()
            .map(|p| EvaluatedSolution {
                decision: p.decision.clone(),
                objectives: p.objectives.clone(),
                eval_index: p.fe,
                task_id: self.task_id.clone(),
            })
            .collect()
    }

    /// Objectives of the non-dominated true evaluations.
    pub fn front(&self) -> Vec<Vec<f64>> {
        let objs: Vec<&[f64]> = self.points.iter().map(|p| &p.objectives[..]).collect();
        non_dominated_indices(&objs).into_iter().map(|i| objs[i].to_vec()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: RunTrajectory,
    /// Archive entry for the finished task.
    pub record: TaskRecord,
}

/// Similarity of `state` to every archived task, with the top sources selected.
pub fn similarity_report(archive: &SourceArchive, task_id: &str, state: &TaskState, gamma: usize, temperature: f64) -> Result<SimilarityReport> {
    let embedder = archive
        .embedder
        .as_ref()
        .ok_or_else(|| Error::usage("archive has no embedder"))?;
    let target = embedder.embed(task_id, state)?;
    let sims = archive
        .records
        .iter()
        .map(|r| {
            let z = embedder.embed(&r.id, &r.state)?;
            Ok((r.id.clone(), task_similarity(&target, &z)?))
        })
        .collect::<Result<Vec<_>>>()?;
    select_and_weight(&sims, gamma, temperature)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const DUPLICATE_TOL: f64 = 1e-9;

/// Pick `q` members of `candidates` to evaluate next: rank by non-dominated
/// sorting of the lower confidence bound `mean - kappa * std`, most crowded
/// last within a front, skipping anything within `1e-9` of `evaluated` or of
/// an earlier pick. Returns the picks as indices into `candidates`.
pub fn select_acquisition_batch(
    candidates: &[Vec<f64>],
    surrogate: &dyn Surrogate,
    evaluated: &[Vec<f64>],
    q: usize,
    kappa: f64,
) -> Result<Vec<usize>> {
    let preds = exec::map(candidates, |x| surrogate.predict(x));
    let lcb = preds
        .into_iter()
        .map(|p| p.map(|p| p.mean.iter().zip(&p.std).map(|(m, s)| m - kappa * s).collect::<Vec<f64>>()))
        .collect::<Result<Vec<_>>>()?;
    let objs: Vec<&[f64]> = lcb.iter().map(|v| &v[..]).collect();
    let mut picks: Vec<usize> = Vec::with_capacity(q);
    for front in sort_fronts(&objs) {
        let cd = crowding_of(&objs, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| {
            cd[b]
                .total_cmp(&cd[a])
                .then(objs[front[a]][0].total_cmp(&objs[front[b]][0]))
                .then(a.cmp(&b))
        });
        for p in order {
            let i = front[p];
            let x = &candidates[i];
            let dup = evaluated.iter().any(|e| max_abs_diff(e, x) <= DUPLICATE_TOL)
                || picks.iter().any(|&j| max_abs_diff(&candidates[j], x) <= DUPLICATE_TOL);
            if !dup {
                picks.push(i);
                if picks.len() == q {
                    return Ok(picks);
                }
            }
        }
    }
    Ok(picks)
}

struct RunState<'a> {
    problem: &'a dyn ExpensiveProblem,
    bounds: Bounds,
    reference: HvReference,
    trajectory: RunTrajectory,
    evaluated: Vec<Vec<f64>>,
}

impl RunState<'_> {
    /// Truly evaluate normalized points, concurrently, and log them in order.
    /// Points evaluated before a failure stay in the trajectory.
    fn evaluate_batch(&mut self, us: &[Vec<f64>], random_fallback: bool) -> Result<Vec<Vec<f64>>> {
        let thetas = us.iter().map(|u| self.bounds.denormalize(u)).collect::<Result<Vec<_>>>()?;
        let problem = self.problem;
        let results = exec::map(&thetas, |t| problem.evaluate(t));
        let mut out = Vec::with_capacity(us.len());
        for ((u, theta), r) in us.iter().zip(thetas).zip(results) {
            let fe = self.trajectory.points.len() + 1;
            let f = r.map_err(|e| match e {
                Error::Evaluation(m) => Error::Evaluation(m),
                other => Error::Evaluation(format!("evaluation {fe} of {} failed: {other}", problem.id())),
            })?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation(format!("evaluation {fe} returned non-finite objectives {:?}", f.0)));
            }
            let mut objs: Vec<&[f64]> = self.trajectory.points.iter().map(|p| &p.objectives[..]).collect();
            objs.push(&f);
            let front: Vec<&[f64]> = non_dominated_indices(&objs).into_iter().map(|i| objs[i]).collect();
            let incumbent_hv = hypervolume(&front, &self.reference)?;
            out.push(f.0.clone());
            self.trajectory.points.push(TrajectoryPoint {
                fe,
                decision: theta,
                objectives: f,
                incumbent_hv,
                random_fallback,
            });
            self.evaluated.push(u.clone());
        }
        Ok(out)
    }

    fn random_points(&self, n: usize, rng: &mut SeedRng) -> Vec<Vec<f64>> {
        latin_hypercube(n, self.bounds.dim(), rng)
    }
}

fn source_models(report: &SimilarityReport, archive: &SourceArchive, target: &Bounds) -> Result<Vec<(SharedSurrogate, f64)>> {
    report
        .selected
        .iter()
        .map(|sel| {
            let record = &archive.records[sel.index];
            let model = match &record.model {
                Some(m) => m.clone(),
                None => train_gp(&record.data, &record.bounds)?,
            };
            let model: SharedSurrogate = Arc::new(model);
            let model: SharedSurrogate = if &record.bounds == target {
                model
            } else {
                Arc::new(Remapped::new(model, target.clone(), record.bounds.clone()))
            };
            Ok((model, sel.weight))
        })
        .collect()
}

/// Optimize one task, transferring from `archive` as `mode` allows. `sink`
/// sees the trajectory after every batch of true evaluations, so a caller
/// keeps the partial trajectory when a later evaluation fails.
pub fn run_task_with_sink(
    problem: &dyn ExpensiveProblem,
    state: &TaskState,
    archive: &SourceArchive,
    config: &OptimizerConfig,
    mode: Mode,
    seed: u64,
    sink: &mut dyn FnMut(&RunTrajectory) -> Result<()>,
) -> Result<RunOutcome> {
    config.validate()?;
    let bounds = problem.bounds().clone();
    let stream = mix_seed(seed, hash_str(problem.id()));
    let mut rng: SeedRng = seeded_rng(mix_seed(stream, 2));

    let transfer = mode != Mode::Baseline && !archive.is_empty();
    let report = if transfer {
        Some(similarity_report(archive, problem.id(), state, config.gamma, config.temperature)?)
    } else {
        None
    };
    let sources = match (&report, mode.uses_source_models()) {
        (Some(r), true) => source_models(r, archive, &bounds)?,
        _ => Vec::new(),
    };
    let c = if sources.is_empty() {
        None
    } else {
        Some(match config.c_override {
            Some(c) => c,
            None => choose_c(
                report.as_ref().expect("sources imply a report"),
                config.tau,
                config.c_high,
                config.c_low,
                config.threshold_basis,
            )?,
        })
    };

    let mut run = RunState {
        problem,
        bounds: bounds.clone(),
        reference: problem.hv_reference(),
        trajectory: RunTrajectory {
            task_id: problem.id().to_string(),
            mode,
            seed,
            points: Vec::new(),
            similarity: report.clone(),
            c,
            injection: None,
            local_fit_failures: 0,
        },
        evaluated: Vec::new(),
    };

    let ctx = LoopContext {
        archive,
        config,
        mode,
        report: report.as_ref(),
        sources: &sources,
        c,
        stream,
    };
    if let Err(e) = optimize(&mut run, &ctx, &mut rng, sink) {
        if matches!(e, Error::Evaluation(_)) && !run.trajectory.points.is_empty() {
            // hand the partial trajectory over before giving up; the
            // evaluation error is the one worth reporting
            let _ = sink(&run.trajectory);
        }
        return Err(e);
    }

    let data = run.trajectory.dataset();
    let model = train_gp(&data, &bounds).ok();
    let record = TaskRecord {
        id: problem.id().to_string(),
        state: state.clone(),
        bounds,
        data,
        model,
        meta: RecordMeta {
            mode: mode.name().to_string(),
            seed,
            evaluations: run.trajectory.points.len(),
        },
    };
    Ok(RunOutcome {
        trajectory: run.trajectory,
        record,
    })
}

struct LoopContext<'a> {
    archive: &'a SourceArchive,
    config: &'a OptimizerConfig,
    mode: Mode,
    report: Option<&'a SimilarityReport>,
    sources: &'a [(SharedSurrogate, f64)],
    c: Option<f64>,
    stream: u64,
}

fn optimize(
    run: &mut RunState<'_>,
    ctx: &LoopContext<'_>,
    rng: &mut SeedRng,
    sink: &mut dyn FnMut(&RunTrajectory) -> Result<()>,
) -> Result<()> {
    let bounds = run.bounds.clone();
    let d = bounds.dim();
    let mut pending: Vec<Vec<f64>> = if ctx.mode == Mode::Baseline {
        let mut init_rng = seeded_rng(mix_seed(ctx.stream, 1));
        let design = latin_hypercube(ctx.config.baseline_initial, d, &mut init_rng);
        run.evaluate_batch(&design, false)?;
        sink(&run.trajectory)?;
        let mut members = design;
        members.extend(latin_hypercube(ctx.config.n_p - ctx.config.baseline_initial, d, &mut init_rng));
        members
    } else {
        let elite_report = ctx.report.filter(|_| ctx.mode.injects_elites());
        let init = build_initial_population(elite_report, ctx.archive, &bounds, ctx.config.n_p, ctx.config.rho, mix_seed(ctx.stream, 1))?;
        run.trajectory.injection = elite_report.map(|_| init.plan.clone());
        init.members
    };
    let mut pop: Option<Population> = None;

    while run.trajectory.points.len() < ctx.config.fe_max {
        let fe = run.trajectory.points.len();
        let q = ctx.config.batch_size.min(ctx.config.fe_max - fe);

        let local: Option<SharedSurrogate> = if fe >= 2 {
            match train_gp(&run.trajectory.dataset(), &bounds) {
                Ok(m) => Some(Arc::new(m)),
                Err(Error::Cholesky { .. }) | Err(Error::InsufficientData { .. }) => {
                    run.trajectory.local_fit_failures += 1;
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let surrogate = if ctx.sources.is_empty() && local.is_none() {
            None
        } else {
            Some(EnsembleSurrogate::new(ctx.sources.to_vec(), local, ctx.c.unwrap_or(ctx.config.c_high), fe)?)
        };

        let Some(surrogate) = surrogate else {
            // nothing to guide the search yet: evaluate initial members in order
            let batch: Vec<Vec<f64>> = pending
                .iter()
                .filter(|u| !run.evaluated.iter().any(|e| max_abs_diff(e, u) <= DUPLICATE_TOL))
                .take(q)
                .cloned()
                .collect();
            let missing = q - batch.len();
            run.evaluate_batch(&batch, false)?;
            let fill = run.random_points(missing, rng);
            run.evaluate_batch(&fill, true)?;
            sink(&run.trajectory)?;
            continue;
        };

        // (re)score everything that has no true objectives
        let xs: Vec<Vec<f64>> = match pop.take() {
            Some(p) => p.members.into_iter().map(|m| m.x).collect(),
            None => std::mem::take(&mut pending),
        };
        let mut current = score(&xs, &surrogate, run)?;

        let start_len = current.len();
        for _ in 0..ctx.config.inner_generations {
            let offspring = evolve_generation(&current, &surrogate, &ctx.config.variation, rng)?;
            current = environmental_selection(Population::union([current, offspring]), start_len);
        }

        let candidates: Vec<Vec<f64>> = current.members.iter().map(|m| m.x.clone()).collect();
        let picks = select_acquisition_batch(&candidates, &surrogate, &run.evaluated, q, ctx.config.kappa)?;
        let chosen: Vec<Vec<f64>> = picks.iter().map(|&i| candidates[i].clone()).collect();
        let truth = run.evaluate_batch(&chosen, false)?;
        // evaluated candidates carry their true objectives from now on
        for (&i, f) in picks.iter().zip(truth) {
            current.members[i].f = f;
            current.members[i].fidelity = Fidelity::True;
        }
        let fill = run.random_points(q - picks.len(), rng);
        let fill_f = run.evaluate_batch(&fill, true)?;
        let extra: Vec<Individual> = fill
            .into_iter()
            .zip(fill_f)
            .map(|(x, f)| Individual {
                x,
                f,
                fidelity: Fidelity::True,
            })
            .collect();
        pop = Some(environmental_selection(
            Population::union([current, Population::new(extra)]),
            ctx.config.n_p,
        ));
        sink(&run.trajectory)?;
    }

    Ok(())
}

fn score(xs: &[Vec<f64>], surrogate: &dyn Surrogate, run: &RunState<'_>) -> Result<Population> {
    let known = |x: &[f64]| {
        run.evaluated
            .iter()
            .position(|e| e[..] == x[..])
            .map(|k| run.trajectory.points[k].objectives.0.clone())
    };
    let scored = exec::map(xs, |x| match known(x) {
        Some(f) => Ok((f, Fidelity::True)),
        None => surrogate.predict_mean(x).map(|f| (f, Fidelity::Surrogate)),
    });
    let members = xs
        .iter()
        .zip(scored)
        .map(|(x, r)| {
            r.map(|(f, fidelity)| Individual {
                x: x.clone(),
                f,
                fidelity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Population::new(members))
}

pub fn run_task(
    problem: &dyn ExpensiveProblem,
    state: &TaskState,
    archive: &SourceArchive,
    config: &OptimizerConfig,
    mode: Mode,
    seed: u64,
) -> Result<RunOutcome> {
    run_task_with_sink(problem, state, archive, config, mode, seed, &mut |_| Ok(()))
}

/// Full transfer run; the finished task is appended to `archive`.
pub fn run_seeto(
    problem: &dyn ExpensiveProblem,
    state: &TaskState,
    archive: &mut SourceArchive,
    config: &OptimizerConfig,
    seed: u64,
) -> Result<RunTrajectory> {
    let out = run_task(problem, state, archive, config, Mode::Seeto, seed)?;
    archive.push(out.record);
    Ok(out.trajectory)
}

/// Local-GP-only run from a Latin hypercube design, ignoring any archive.
pub fn run_baseline(problem: &dyn ExpensiveProblem, state: &TaskState, config: &OptimizerConfig, seed: u64) -> Result<RunTrajectory> {
    run_task(problem, state, &SourceArchive::default(), config, Mode::Baseline, seed).map(|o| o.trajectory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::fit_embedder;
    use crate::problems::{make_task_family, SyntheticTask};

    fn small() -> OptimizerConfig {
        OptimizerConfig {
            n_p: 20,
            fe_max: 15,
            inner_generations: 3,
            baseline_initial: 6,
            ..OptimizerConfig::default()
        }
    }

    fn family() -> crate::problems::TaskFamily {
        make_task_family(3, 2, 1.0, 1, 4).unwrap()
    }

    fn archive_of(f: &crate::problems::TaskFamily, cfg: &OptimizerConfig) -> SourceArchive {
        let emb = fit_embedder(&f.embedder_training_states(), 16).unwrap();
        let mut archive = SourceArchive::new(Some(emb));
        for s in &f.sources {
            run_seeto(s, s.state(), &mut archive, cfg, 0).unwrap();
        }
        archive
    }

    fn check_budget(t: &RunTrajectory, task: &SyntheticTask, fe_max: usize) {
        assert_eq!(t.points.len(), fe_max);
        for (k, p) in t.points.iter().enumerate() {
            assert_eq!(p.fe, k + 1);
            assert!(task.bounds().contains(&p.decision));
        }
        for w in t.points.windows(2) {
            assert!(w[1].incumbent_hv >= w[0].incumbent_hv);
        }
    }

    #[test]
    fn budget_and_monotone_hv_in_every_mode() {
        let cfg = small();
        let f = family();
        let archive = archive_of(&f, &cfg);
        let target = &f.targets[0];
        for mode in Mode::ALL {
            let before = target.evaluations();
            let out = run_task(target, target.state(), &archive, &cfg, mode, 1).unwrap();
            check_budget(&out.trajectory, target, cfg.fe_max);
            assert_eq!(target.evaluations() - before, cfg.fe_max);
            assert_eq!(out.record.data.len(), cfg.fe_max);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small();
        let f = family();
        let archive = archive_of(&f, &cfg);
        let t = &f.targets[0];
        let a = run_task(t, t.state(), &archive, &cfg, Mode::Seeto, 7).unwrap().trajectory;
        let b = run_task(t, t.state(), &archive, &cfg, Mode::Seeto, 7).unwrap().trajectory;
        assert_eq!(a, b);
        let c = run_task(t, t.state(), &archive, &cfg, Mode::Seeto, 8).unwrap().trajectory;
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn transfer_metadata_by_mode() {
        let cfg = small();
        let f = family();
        let archive = archive_of(&f, &cfg);
        let t = &f.targets[0];
        let full = run_task(t, t.state(), &archive, &cfg, Mode::Seeto, 1).unwrap().trajectory;
        assert!(full.c.is_some() && full.injection.is_some() && full.similarity.is_some());
        let sol = run_task(t, t.state(), &archive, &cfg, Mode::SolutionOnly, 1).unwrap().trajectory;
        assert!(sol.c.is_none() && sol.injection.is_some());
        let model = run_task(t, t.state(), &archive, &cfg, Mode::ModelOnly, 1).unwrap().trajectory;
        assert!(model.c.is_some() && model.injection.is_none());
        let base = run_task(t, t.state(), &archive, &cfg, Mode::Baseline, 1).unwrap().trajectory;
        assert!(base.similarity.is_none() && base.c.is_none());
        let forced = OptimizerConfig {
            c_override: Some(0.5),
            ..cfg
        };
        let o = run_task(t, t.state(), &archive, &forced, Mode::Seeto, 1).unwrap().trajectory;
        assert_eq!(o.c, Some(0.5));
    }

    #[test]
    fn batches_never_repeat_points() {
        let cfg = small();
        let f = family();
        let t = &f.targets[1];
        let traj = run_baseline(t, t.state(), &cfg, 3).unwrap();
        for (i, a) in traj.points.iter().enumerate() {
            for b in &traj.points[..i] {
                let ua = t.bounds().normalize(&a.decision).unwrap();
                let ub = t.bounds().normalize(&b.decision).unwrap();
                assert!(max_abs_diff(&ua, &ub) > DUPLICATE_TOL);
            }
        }
    }

    #[test]
    fn sink_sees_every_batch() {
        let cfg = small();
        let f = family();
        let t = &f.targets[0];
        let mut seen = Vec::new();
        run_task_with_sink(t, t.state(), &SourceArchive::default(), &cfg, Mode::Seeto, 2, &mut |tr| {
            seen.push(tr.points.len());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![5, 10, 15]);
    }

    #[test]
    fn failing_sink_aborts_run() {
        let cfg = small();
        let f = family();
        let t = &f.targets[0];
        let err = run_task_with_sink(t, t.state(), &SourceArchive::default(), &cfg, Mode::Baseline, 2, &mut |tr| {
            if tr.points.len() > 6 {
                Err(Error::Evaluation("stop".into()))
            } else {
                Ok(())
            }
        });
        assert!(matches!(err, Err(Error::Evaluation(_))));
    }

    #[test]
    fn acquisition_skips_evaluated_points() {
        struct Flat;
        impl Surrogate for Flat {
            fn n_objectives(&self) -> usize {
                2
            }
            fn predict(&self, x: &[f64]) -> Result<crate::gp::Prediction> {
                Ok(crate::gp::Prediction {
                    mean: vec![x[0], 1.0 - x[0]],
                    std: vec![0.0, 0.0],
                })
            }
        }
        let cands = vec![vec![0.1], vec![0.5], vec![0.9], vec![0.5]];
        let picks = select_acquisition_batch(&cands, &Flat, &[vec![0.1]], 3, 1.0).unwrap();
        assert_eq!(picks.len(), 2);
        assert!(!picks.contains(&0));
        let picks = select_acquisition_batch(&cands, &Flat, &[], 2, 1.0).unwrap();
        assert_eq!(picks, vec![0, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        for bad in [
            OptimizerConfig { n_p: 1, ..Default::default() },
            OptimizerConfig { rho: 1.5, ..Default::default() },
            OptimizerConfig { tau: 1.0, ..Default::default() },
            OptimizerConfig { c_override: Some(0.0), ..Default::default() },
            OptimizerConfig { baseline_initial: 61, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("model-only".parse::<Mode>().unwrap(), Mode::ModelOnly);
        assert!("x".parse::<Mode>().is_err());
    }
}
