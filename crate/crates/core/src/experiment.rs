//! Sequence experiments: solve the sources, then every target in every
//! requested mode and seed, and write trajectories plus a summary table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{save_archive, SourceArchive};
use crate::config::ExperimentConfig;
use crate::embedder::{fit_embedder, Embedder};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::metrics::{additional_fe_percent, baseline_gap_percent, AdditionalFe};
use crate::optimizer::{run_task, run_task_with_sink, Mode, OptimizerConfig, RunTrajectory};
use crate::problems::{ExpensiveProblem, TaskFamily};

/// Budgets reported in the summary table.
pub const REPORT_BUDGETS: [usize; 3] = [20, 40, 60];

pub fn fit_family_embedder(family: &TaskFamily, latent_dim: usize) -> Result<Embedder> {
    fit_embedder(&family.embedder_training_states(), latent_dim)
}

/// Solve every source task with the baseline optimizer and archive them in
/// family order.
pub fn solve_sources(family: &TaskFamily, config: &OptimizerConfig, latent_dim: usize, seed: u64) -> Result<SourceArchive> {
    let embedder = fit_family_embedder(family, latent_dim)?;
    let empty = SourceArchive::default();
    let outcomes = exec::map(&family.sources, |s| run_task(s, s.state(), &empty, config, Mode::Baseline, seed));
    let mut archive = SourceArchive::new(Some(embedder));
    for o in outcomes {
        archive.push(o?.record);
    }
    Ok(archive)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    /// Index into `TaskFamily::targets`.
    pub target: usize,
    pub mode: Mode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub task_id: String,
    pub outlier: bool,
    pub mode: Mode,
    pub seed: u64,
    pub result: std::result::Result<RunTrajectory, String>,
}

impl RunRecord {
    pub fn trajectory(&self) -> Option<&RunTrajectory> {
        self.result.as_ref().ok()
    }
}

/// Every (target, mode, seed) combination in a stable order.
pub fn all_specs(family: &TaskFamily, modes: &[Mode], seeds: &[u64]) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for target in 0..family.targets.len() {
        for &mode in modes {
            for &seed in seeds {
                specs.push(RunSpec { target, mode, seed });
            }
        }
    }
    specs
}

/// Run target tasks against a fixed archive. A failing run is recorded and
/// the others proceed. `on_batch` sees each trajectory after every batch.
pub fn run_targets<F>(
    family: &TaskFamily,
    archive: &SourceArchive,
    config: &OptimizerConfig,
    specs: &[RunSpec],
    execution: Execution,
    on_batch: F,
) -> Vec<RunRecord>
where
    F: Fn(&RunSpec, &RunTrajectory) -> Result<()> + Sync,
{
    exec::map_with(execution, specs, |spec| {
        let task = &family.targets[spec.target];
        let result = run_task_with_sink(task, task.state(), archive, config, spec.mode, spec.seed, &mut |t| {
            on_batch(spec, t)
        })
        .map(|o| o.trajectory)
        .map_err(|e| e.to_string());
        RunRecord {
            task_id: task.id().to_string(),
            outlier: family.outlier[spec.target],
            mode: spec.mode,
            seed: spec.seed,
            result,
        }
    })
}

/// One row of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub task_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub fe: usize,
    pub decision: Vec<f64>,
    pub objectives: Vec<f64>,
    pub incumbent_hv: f64,
    pub random_fallback: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::usage(format!("{other:?}")),
    }
}

pub fn trajectory_csv(t: &RunTrajectory) -> Result<Vec<u8>> {
    let d = t.points.first().map_or(0, |p| p.decision.len());
    let m = t.points.first().map_or(0, |p| p.objectives.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["task_id", "mode", "seed", "fe"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|j| format!("f{j}")));
    header.push("incumbent_hv".into());
    header.push("random_fallback".into());
    w.write_record(&header).map_err(csv_err)?;
    for p in &t.points {
        let mut row = vec![t.task_id.clone(), t.mode.to_string(), t.seed.to_string(), p.fe.to_string()];
        row.extend(p.decision.iter().map(|v| v.to_string()));
        row.extend(p.objectives.iter().map(|v| v.to_string()));
        row.push(p.incumbent_hv.to_string());
        row.push(u8::from(p.random_fallback).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_trajectory(path: &Path, t: &RunTrajectory) -> Result<()> {
    write_atomic(path, &trajectory_csv(t)?)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let d = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('f') && h[1..].parse::<usize>().is_ok()).count();
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 2;
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}"),
        };
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad("number"));
        rows.push(TrajectoryRow {
            task_id: rec.get(0).ok_or_else(|| bad("task_id"))?.to_string(),
            mode: rec.get(1).ok_or_else(|| bad("mode"))?.parse()?,
            seed: rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("seed"))?,
            fe: rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(|| bad("fe"))?,
            decision: (0..d).map(|i| num(4 + i)).collect::<Result<_>>()?,
            objectives: (0..m).map(|j| num(4 + d + j)).collect::<Result<_>>()?,
            incumbent_hv: num(4 + d + m)?,
            random_fallback: rec.get(5 + d + m) == Some("1"),
        });
    }
    Ok(rows)
}

pub fn trajectory_file_name(task_id: &str, mode: Mode, seed: u64) -> String {
    format!("{task_id}__{mode}__seed{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task_id: String,
    pub outlier: bool,
    pub fe: usize,
    pub mode: Mode,
    pub n_runs: usize,
    pub n_failed: usize,
    pub hv_mean: f64,
    pub hv_std: f64,
    /// Gap of this mode's mean HV to the transfer run's, relative to this
    /// mode's own HV (negative when this mode is worse).
    pub delta_hv_percent: Option<f64>,
    /// Extra evaluations this mode needs to reach the transfer run's HV at `fe`.
    #[serde(skip)]
    pub add_fe: Option<AdditionalFe>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per task, budget and mode: mean and sample standard deviation of the
/// incumbent HV over successful runs, compared against the `seeto` mode.
pub fn summarize(records: &[RunRecord], budgets: &[usize]) -> Vec<SummaryRow> {
    let mut tasks: Vec<(&str, bool)> = Vec::new();
    let mut modes: Vec<Mode> = Vec::new();
    for r in records {
        if !tasks.iter().any(|(t, _)| *t == r.task_id) {
            tasks.push((&r.task_id, r.outlier));
        }
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    let runs = |task: &str, mode: Mode| -> (Vec<&RunTrajectory>, usize) {
        let all: Vec<&RunRecord> = records.iter().filter(|r| r.task_id == task && r.mode == mode).collect();
        let ok: Vec<&RunTrajectory> = all.iter().filter_map(|r| r.trajectory()).collect();
        let failed = all.len() - ok.len();
        (ok, failed)
    };
    let mean_curve = |ts: &[&RunTrajectory]| -> Vec<f64> {
        let len = ts.iter().map(|t| t.points.len()).min().unwrap_or(0);
        (0..len)
            .map(|k| ts.iter().map(|t| t.points[k].incumbent_hv).sum::<f64>() / ts.len() as f64)
            .collect()
    };

    let mut rows = Vec::new();
    for &(task, outlier) in &tasks {
        let (seeto_runs, _) = runs(task, Mode::Seeto);
        for &fe in budgets {
            let seeto_hv: Vec<f64> = seeto_runs.iter().filter_map(|t| t.hv_at(fe)).collect();
            let seeto_mean = (!seeto_hv.is_empty()).then(|| mean_std(&seeto_hv).0);
            for &mode in &modes {
                let (ok, n_failed) = runs(task, mode);
                let hv: Vec<f64> = ok.iter().filter_map(|t| t.hv_at(fe)).collect();
                if hv.is_empty() {
                    continue;
                }
                let (hv_mean, hv_std) = mean_std(&hv);
                let (delta, add) = match (mode, seeto_mean) {
                    (Mode::Seeto, _) | (_, None) => (None, None),
                    (_, Some(s)) => (
                        baseline_gap_percent(hv_mean, s).ok(),
                        additional_fe_percent(&mean_curve(&ok), s, fe).ok(),
                    ),
                };
                rows.push(SummaryRow {
                    task_id: task.to_string(),
                    outlier,
                    fe,
                    mode,
                    n_runs: hv.len(),
                    n_failed,
                    hv_mean,
                    hv_std,
                    delta_hv_percent: delta,
                    add_fe: add,
                });
            }
        }
    }
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task_id",
        "outlier",
        "fe",
        "mode",
        "n_runs",
        "n_failed",
        "hv_mean",
        "hv_std",
        "delta_hv_percent",
        "add_fe_percent",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.task_id.clone(),
            r.outlier.to_string(),
            r.fe.to_string(),
            r.mode.to_string(),
            r.n_runs.to_string(),
            r.n_failed.to_string(),
            r.hv_mean.to_string(),
            r.hv_std.to_string(),
            r.delta_hv_percent.map_or(String::new(), |d| format!("{d:.2}")),
            r.add_fe.map_or(String::new(), |a| a.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn failures_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["task_id", "mode", "seed", "error"]).map_err(csv_err)?;
    for r in records {
        if let Err(e) = &r.result {
            w.write_record([r.task_id.as_str(), r.mode.name(), &r.seed.to_string(), e.as_str()])
                .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug)]
pub struct SequenceOutcome {
    pub out_dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SequenceOutcome {
    pub fn n_failed(&self) -> usize {
        self.records.iter().filter(|r| r.result.is_err()).count()
    }
}

pub const ARCHIVE_FILE: &str = "archive.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";

/// The whole protocol: generate the family, solve and archive the sources,
/// then run every target in every mode and seed against that archive.
///
/// Layout of `out_dir`: `config.toml`, `archive.json`,
/// `trajectories/<task>__<mode>__seed<k>.csv`, `summary.csv`, `failures.csv`.
pub fn run_sequence(config: &ExperimentConfig, out_dir: &Path) -> Result<SequenceOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir.join(TRAJECTORY_DIR))?;
    write_atomic(&out_dir.join("config.toml"), config.to_toml_string()?.as_bytes())?;

    let family = TaskFamily::generate(&config.family)?;
    let x = &config.experiment;
    let archive = solve_sources(&family, &config.optimizer, x.latent_dim, x.source_seed)?;
    save_archive(&archive, &out_dir.join(ARCHIVE_FILE))?;

    let specs = all_specs(&family, &x.modes, &x.seeds);
    let traj_dir = out_dir.join(TRAJECTORY_DIR);
    let records = run_targets(&family, &archive, &config.optimizer, &specs, Execution::default(), |spec, t| {
        let task = &family.targets[spec.target];
        write_trajectory(&traj_dir.join(trajectory_file_name(task.id(), spec.mode, spec.seed)), t)
    });

    let summary = summarize(&records, &REPORT_BUDGETS);
    write_atomic(&out_dir.join(SUMMARY_FILE), &summary_csv(&summary)?)?;
    write_atomic(&out_dir.join(FAILURES_FILE), &failures_csv(&records)?)?;
    Ok(SequenceOutcome {
        out_dir: out_dir.to_path_buf(),
        records,
        summary,
    })
}
