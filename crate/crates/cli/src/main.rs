//! `kmplab`: run configured experiments, the acceptance suites, and export
//! binary containers.
//!
//! Exit codes: 0 all checks passed, 1 a check failed, 2 bad configuration or
//! arguments, 3 event budget exceeded, 4 numerical failure or no convergence,
//! 5 I/O or malformed data.

mod config;
mod experiments;
mod report;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use experiments::Context;
use kmplab::acceptance::{run_criterion, suite_members, KNOWN_UNATTAINABLE};
use kmplab::exec::ExecMode;
use kmplab::persist::{field_csv, read_artifact, trajectory_csv, Artifact};
use kmplab::KmpError;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "kmplab",
    version,
    about = "KMP energy model simulator and numerical lab"
)]
struct Cli {
    /// Run replicas one after another even when built with `parallel`.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or a previous summary.json).
    Run {
        config: PathBuf,
        /// Override `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an acceptance suite: identities, oracles, trends or full.
    Verify { suite: String },
    /// Convert a .kmp container to CSV or JSON.
    Export {
        artifact: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

enum Failure {
    Config(String),
    Lib(KmpError),
}

impl From<KmpError> for Failure {
    fn from(e: KmpError) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Lib(e) => match e {
                KmpError::InvalidParameter(_) | KmpError::DimensionMismatch { .. } => 2,
                KmpError::BudgetExceeded { .. } => 3,
                KmpError::NonConvergence { .. } | KmpError::Numerical(_) => 4,
                KmpError::Format(_) | KmpError::Io(_) | KmpError::Csv(_) => 5,
            },
        }
    }

    /// A downstream reader such as `head` closed standard output.
    fn is_broken_pipe(&self) -> bool {
        let Failure::Lib(e) = self else {
            return false;
        };
        matches!(e, KmpError::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe)
    }

    fn message(&self) -> String {
        match self {
            Failure::Config(m) => format!("configuration error: {m}"),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("kmplab: {}", e.message());
        return ExitCode::from(e.code());
    }
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::default()
    };
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out.as_deref(), mode),
        Command::Verify { suite } => verify(&suite, mode),
        Command::Export {
            artifact,
            format,
            out,
        } => export(&artifact, format, out.as_deref()).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is_broken_pipe() => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kmplab: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Size the rayon pool from `KMPLAB_THREADS`.
fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("KMPLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Failure::Config(format!("KMPLAB_THREADS must be a number, got '{v}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    log::info!("KMPLAB_THREADS={n} ignored in a sequential build");
    Ok(())
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
        let cfg = v
            .get("config")
            .cloned()
            .ok_or_else(|| Failure::Config("summary has no 'config' entry".into()))?;
        let cfg: RunConfig =
            serde_json::from_value(cfg).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.validate().map_err(Failure::Config)?;
        Ok(cfg)
    } else {
        RunConfig::parse(&text).map_err(Failure::Config)
    }
}

fn run(path: &Path, out: Option<&Path>, mode: ExecMode) -> Result<bool, Failure> {
    let cfg = load_config(path)?;
    let dir = experiments::output_dir(&cfg, out);
    std::fs::create_dir_all(&dir)?;
    let hash = report::config_hash(&cfg);
    std::fs::write(dir.join("config.resolved.toml"), cfg.resolved())?;
    let ctx = Context {
        cfg: &cfg,
        dir: dir.clone(),
        run_id: report::run_id(&hash),
        mode,
    };
    let start = std::time::Instant::now();
    let mut outcome = experiments::run(&ctx)?;
    outcome.files.insert(0, "config.resolved.toml".into());
    outcome.files.push("summary.json".into());
    let summary = report::summary(&cfg, &hash, &outcome);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Failure::Lib(KmpError::Format(e.to_string())))?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    for c in &outcome.checks {
        eprintln!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    eprintln!(
        "{} run {} finished in {:.1}s, artifacts in {}",
        cfg.experiment.name(),
        summary.run,
        start.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(summary.passed)
}

fn verify(suite: &str, mode: ExecMode) -> Result<bool, Failure> {
    let ids = suite_members(suite).map_err(|e| Failure::Config(e.to_string()))?;
    let mut results = Vec::new();
    let mut ok = true;
    for id in ids {
        let r = run_criterion(id, mode)?;
        let known = KNOWN_UNATTAINABLE.contains(&id);
        eprintln!(
            "{}{}",
            r.line(),
            if known && !r.passed {
                " (known unattainable)"
            } else {
                ""
            }
        );
        ok &= r.passed || known;
        results.push(r);
    }
    let json = serde_json::to_string_pretty(&results)
        .map_err(|e| Failure::Lib(KmpError::Format(e.to_string())))?;
    println!("{json}");
    Ok(ok)
}

fn export(path: &Path, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let bytes = std::fs::read(path)?;
    let artifact = read_artifact(&bytes)?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    match (format, &artifact) {
        (Format::Csv, Artifact::Trajectory(t)) => trajectory_csv(&mut sink, t)?,
        (Format::Csv, Artifact::Fields { times, fields, .. }) => {
            field_csv(&mut sink, times, fields)?
        }
        (Format::Json, a) => {
            let v = match a {
                Artifact::Trajectory(t) => serde_json::json!({
                    "kind": "trajectory",
                    "dim": t.lattice.dim(),
                    "side": t.lattice.side(),
                    "seed": t.seed,
                    "horizon": t.horizon,
                    "events": t.events,
                    "times": t.times,
                    "snapshots": t.snapshots,
                    "flux": t.flux.as_ref().map(|f| f.iter().map(|e| (e.t, e.edge, e.p)).collect::<Vec<_>>()),
                }),
                Artifact::Fields {
                    times,
                    fields,
                    seed,
                } => serde_json::json!({
                    "kind": "fields",
                    "seed": seed,
                    "times": times,
                    "fields": fields,
                }),
            };
            serde_json::to_writer(&mut sink, &v).map_err(|e| match e.io_error_kind() {
                Some(kind) => Failure::from(std::io::Error::from(kind)),
                None => Failure::Lib(KmpError::Format(e.to_string())),
            })?;
            writeln!(sink)?;
        }
    }
    sink.flush()?;
    Ok(())
}
