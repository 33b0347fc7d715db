//! `reframe` command line: validate, reframe, run, score, report.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use super::config::{BackendConfig, ExperimentConfig};
use super::run::{load_tasks, prepare, run, write_report_artifacts};
use super::HarnessError;
use crate::metrics::{read_records_csv, rescore, write_records_csv, EvalRecord};
use crate::pipeline::{validate, DecompositionSpec};
use crate::reframe::{apply_operators, ReframeConfig};

/// Like `println!`, but a closed stdout (`reframe ... | head`) is not an error.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "reframe", version, about = "Reframe task instructions and evaluate them against a language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Http,
    Mock,
    /// Serve every call from the replay store; misses are fatal.
    Replay,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse task files and configs and report problems.
    Validate {
        /// Experiment config; validates everything it references.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tasks: Vec<String>,
        /// Reframe config to check against the tasks.
        #[arg(long)]
        reframe: Option<PathBuf>,
    },
    /// Apply reframing operators and write reframed task files with audit trails.
    Reframe {
        #[arg(long)]
        config: PathBuf,
        /// Task globs; defaults to the config's `task_files`.
        #[arg(long)]
        tasks: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendKind>,
        #[arg(long)]
        replay_store: Option<PathBuf>,
        #[arg(long)]
        replay_only: bool,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute ROUGE-L scores in a records file.
    Score {
        #[arg(long)]
        records: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render report artifacts from a records file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            if e.kind() == ErrorKind::MissingSubcommand
                || e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            {
                return 1;
            }
            eprintln!("\n{}", Cli::command().render_help());
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Validate { config, tasks, reframe } => validate_cmd(config, tasks, reframe),
        Command::Reframe { config, tasks, out } => reframe_cmd(&config, tasks, &out),
        Command::Run { config, tasks, out, backend, replay_store, replay_only, parallel, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !tasks.is_empty() {
                cfg.tasks = tasks;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(store) = replay_store {
                cfg.replay_store = Some(store);
            }
            cfg.replay_only |= replay_only;
            match backend {
                Some(BackendKind::Replay) => cfg.replay_only = true,
                Some(BackendKind::Mock) if !matches!(cfg.backend, BackendConfig::Mock { .. }) => {
                    cfg.backend = BackendConfig::Mock { script: None, strict: false };
                }
                Some(BackendKind::Http) if !matches!(cfg.backend, BackendConfig::Http(_)) => {
                    return Err(HarnessError::Config("--backend http needs an `http` backend section in the config".into()));
                }
                _ => {}
            }
            if let Some(n) = parallel {
                cfg.parallelism = n;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.check()?;
            let outcome = run(&cfg)?;
            out!("{}", fs::read_to_string(cfg.output_dir.join("report.txt")).unwrap_or_default().trim_end());
            out!("{} records written to {}", outcome.records.len(), cfg.output_dir.display());
            Ok(())
        }
        Command::Score { records, out } => {
            let mut rs = read_records(&records)?;
            rescore(&mut rs);
            let mut buf = Vec::new();
            write_records_csv(&mut buf, &rs).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            match out {
                Some(path) => fs::write(&path, buf).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display()))),
                None => std::io::stdout().write_all(&buf).map_err(|e| HarnessError::Runtime(e.to_string())),
            }
        }
        Command::Report { records, baseline, out } => {
            let rs = read_records(&records)?;
            write_report_artifacts(&out, &rs, baseline.as_deref())?;
            out!("{}", fs::read_to_string(out.join("report.txt")).unwrap_or_default().trim_end());
            Ok(())
        }
    }
}

fn read_records(path: &Path) -> Result<Vec<EvalRecord>, HarnessError> {
    let file = fs::File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    read_records_csv(file).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
}

fn validate_cmd(config: Option<PathBuf>, tasks: Vec<String>, reframe: Option<PathBuf>) -> Result<(), HarnessError> {
    if let Some(path) = config {
        let mut cfg = ExperimentConfig::load(&path)?;
        if !tasks.is_empty() {
            cfg.tasks = tasks;
        }
        if let Some(r) = reframe {
            cfg.reframe_config = Some(r);
        }
        let prepared = prepare(&cfg)?;
        for t in &prepared.tasks {
            out!("ok {} ({})", t.task.id, t.source.display());
        }
        out!("{}: {} tasks, {} conditions", path.display(), prepared.tasks.len(), cfg.conditions.len());
        return Ok(());
    }
    let reframe = match reframe {
        Some(path) => Some(ReframeConfig::load(&path).map_err(|e| HarnessError::Config(e.to_string()))?),
        None => None,
    };
    let patterns = match (&reframe, tasks.is_empty()) {
        (_, false) => tasks,
        (Some(r), true) if !r.task_files.is_empty() => r.task_files.clone(),
        _ => return Err(HarnessError::Config("nothing to validate: pass --config, --tasks or --reframe".into())),
    };
    let loaded = load_tasks(&patterns)?;
    let lexicon = match &reframe {
        Some(r) => Some(r.lexicon().map_err(|e| HarnessError::Config(e.to_string()))?),
        None => None,
    };
    for (path, task) in &loaded {
        if let (Some(r), Some(lexicon)) = (&reframe, &lexicon) {
            if let Some(entry) = r.entry(&task.id) {
                apply_operators(task, &entry.operators, lexicon)
                    .map_err(|e| HarnessError::Validation(format!("task `{}`: {e}", task.id)))?;
                if let Some(d) = entry.decomposition() {
                    let spec = DecompositionSpec::load(d).map_err(|e| HarnessError::Validation(e.to_string()))?;
                    validate(&spec, task).map_err(|e| HarnessError::Validation(format!("{}: {e}", d.display())))?;
                }
            }
        }
        out!("ok {} ({})", task.id, path.display());
    }
    Ok(())
}

fn reframe_cmd(config: &Path, tasks: Vec<String>, out: &Path) -> Result<(), HarnessError> {
    let cfg = ReframeConfig::load(config).map_err(|e| HarnessError::Config(e.to_string()))?;
    let patterns = if tasks.is_empty() { cfg.task_files.clone() } else { tasks };
    if patterns.is_empty() {
        return Err(HarnessError::Config("no tasks: pass --tasks or set `task_files` in the config".into()));
    }
    let lexicon = cfg.lexicon().map_err(|e| HarnessError::Config(e.to_string()))?;
    let loaded = load_tasks(&patterns)?;
    fs::create_dir_all(out).map_err(|e| HarnessError::Runtime(format!("{}: {e}", out.display())))?;
    let write = |name: String, text: String| -> Result<(), HarnessError> {
        let path = out.join(name);
        fs::write(&path, text + "\n").map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
    };
    for (_, task) in &loaded {
        let Some(entry) = cfg.entry(&task.id) else {
            eprintln!("skipped {}: no reframe entry", task.id);
            continue;
        };
        let reframed = apply_operators(task, &entry.operators, &lexicon)
            .map_err(|e| HarnessError::Validation(format!("task `{}`: {e}", task.id)))?;
        for w in &reframed.warnings {
            eprintln!("{}: {w}", task.id);
        }
        write(format!("{}.json", task.id), reframed.apply_to(task).to_json())?;
        write(format!("{}.audit.json", task.id), serde_json::to_string_pretty(&reframed).expect("reframing serializes"))?;
        out!("reframed {} ({})", task.id, reframed.techniques.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", "));
    }
    Ok(())
}
