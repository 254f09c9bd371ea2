use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seeto::archive::load_archive;
use seeto::config::ExperimentConfig;
use seeto::ensemble::choose_c;
use seeto::experiment::{self, run_sequence, solve_sources, trajectory_file_name, write_trajectory, ARCHIVE_FILE, TRAJECTORY_DIR};
use seeto::metrics::{hypervolume_2d, parse_front, HvReference};
use seeto::optimizer::{run_task_with_sink, similarity_report, Mode};
use seeto::problems::{ExpensiveProblem, TaskFamily};
use seeto::{Error, Result};

#[derive(Parser)]
#[command(name = "seeto", version, about = "Sequential transfer optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the source tasks, then every target in every mode and seed.
    RunSequence {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this mode.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize one target task.
    RunSingle {
        #[arg(long)]
        config: PathBuf,
        /// Target task id, e.g. target-03.
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "seeto")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reuse a saved archive instead of re-solving the sources.
        #[arg(long)]
        archive: Option<PathBuf>,
    },
    /// Exact two-objective hypervolume of a front file.
    Hv {
        front: PathBuf,
        /// Reference point, e.g. 1,1.
        #[arg(long = "ref", value_delimiter = ',', required = true, allow_negative_numbers = true)]
        reference: Vec<f64>,
    },
    /// List the records of a saved archive.
    ArchiveInspect { archive: PathBuf },
    /// Similarity of a target task to every archived source.
    EmbedSimilarity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        archive: Option<PathBuf>,
    },
}

fn target_index(family: &TaskFamily, task: &str) -> Result<usize> {
    family
        .targets
        .iter()
        .position(|t| t.id() == task)
        .ok_or_else(|| Error::Usage(format!("no target task {task:?} in the configured family")))
}

fn archive_for(cfg: &ExperimentConfig, family: &TaskFamily, path: Option<&Path>) -> Result<seeto::archive::SourceArchive> {
    match path {
        Some(p) => load_archive(p),
        None => solve_sources(family, &cfg.optimizer, cfg.experiment.latent_dim, cfg.experiment.source_seed),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::RunSequence { config, seed, mode, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.experiment.seeds = vec![s];
            }
            if let Some(m) = mode {
                cfg.experiment.modes = vec![m];
            }
            let out_dir = cfg.resolve_out_dir(out.as_deref());
            let outcome = run_sequence(&cfg, &out_dir)?;
            for r in outcome.records.iter().filter(|r| r.result.is_err()) {
                eprintln!("run {} {} seed {} failed: {}", r.task_id, r.mode, r.seed, r.result.as_ref().unwrap_err());
            }
            println!(
                "{} runs, {} failed; results in {}",
                outcome.records.len(),
                outcome.n_failed(),
                out_dir.display()
            );
            Ok(if outcome.n_failed() == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::RunSingle {
            config,
            task,
            mode,
            seed,
            out,
            archive,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let family = TaskFamily::generate(&cfg.family)?;
            let idx = target_index(&family, &task)?;
            let archive = archive_for(&cfg, &family, archive.as_deref())?;
            let out_dir = cfg.resolve_out_dir(out.as_deref());
            let path = out_dir.join(TRAJECTORY_DIR).join(trajectory_file_name(&task, mode, seed));
            let target = &family.targets[idx];
            let outcome = run_task_with_sink(target, target.state(), &archive, &cfg.optimizer, mode, seed, &mut |t| {
                write_trajectory(&path, t)
            })?;
            let t = &outcome.trajectory;
            println!("task {task} mode {mode} seed {seed}");
            if let Some(c) = t.c {
                println!("c = {c}");
            }
            for fe in experiment::REPORT_BUDGETS {
                if let Some(hv) = t.hv_at(fe) {
                    println!("hv@{fe} = {hv:.12}");
                }
            }
            if let Some(hv) = target.analytic_hv() {
                println!("analytic hv = {hv:.12}");
            }
            println!("trajectory: {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Hv { front, reference } => {
            let text = std::fs::read_to_string(&front)?;
            let points = parse_front(&text)?;
            let hv = hypervolume_2d(&points, &HvReference::new(reference))?;
            println!("{hv:.12}");
            Ok(ExitCode::SUCCESS)
        }
        Command::ArchiveInspect { archive } => {
            let a = load_archive(&archive)?;
            println!("format_version {}", seeto::archive::FORMAT_VERSION);
            println!("records {}", a.len());
            if let Some(e) = &a.embedder {
                println!("embedder latent_dim {}", e.latent_dim());
            }
            println!("id,mode,seed,evaluations,has_model");
            for r in &a.records {
                println!("{},{},{},{},{}", r.id, r.meta.mode, r.meta.seed, r.meta.evaluations, r.model.is_some());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::EmbedSimilarity { config, task, archive } => {
            let cfg = ExperimentConfig::load(&config)?;
            let family = TaskFamily::generate(&cfg.family)?;
            let idx = target_index(&family, &task)?;
            let path = archive.or_else(|| {
                let p = cfg.resolve_out_dir(None).join(ARCHIVE_FILE);
                p.exists().then_some(p)
            });
            let archive = archive_for(&cfg, &family, path.as_deref())?;
            let o = &cfg.optimizer;
            let report = similarity_report(&archive, &task, family.targets[idx].state(), o.gamma, o.temperature)?;
            println!("source,similarity");
            for (id, s) in &report.per_source {
                println!("{id},{s:.6}");
            }
            println!();
            println!("selected,similarity,weight");
            for s in &report.selected {
                println!("{},{:.6},{:.6}", s.id, s.similarity, s.weight);
            }
            let c = choose_c(&report, o.tau, o.c_high, o.c_low, o.threshold_basis)?;
            println!();
            println!("c = {c}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
