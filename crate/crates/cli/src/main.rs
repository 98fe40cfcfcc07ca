use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use flnrm::agents::Method;
use flnrm::flnrm::checkpoint;
use flnrm::harness::verify::gradcheck_suite;
use flnrm::harness::{plot_curves, read_metrics, run_experiment, run_suite, RunConfig, Suite};
use flnrm::tasks::task_registry;

#[derive(Parser)]
#[command(name = "flnrm", version, about = "Learnable reward machines for non-Markovian gridworld tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write metrics, checkpoints and machines.
    Run(RunArgs),
    /// Render windowed-return curves from metrics CSVs as SVG.
    Plot {
        /// Metrics CSV files, or run directories containing metrics.csv.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long, default_value = "curves.svg")]
        out: PathBuf,
        #[arg(long, default_value = "training return")]
        title: String,
    },
    /// Run a verification suite; exits with 1 if any check fails.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
        /// Fault injection: perturb the analytic gradient of this parameter (gradcheck only).
        #[arg(long)]
        corrupt: Option<String>,
    },
    /// Extract the discrete machine stored in an FLNRM checkpoint.
    ExportMachine {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
        /// Skip minimization.
        #[arg(long)]
        raw: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Task registry commands.
    Tasks {
        #[command(subcommand)]
        command: TasksCommand,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// key=value config file; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    /// Comma-separated seed list, e.g. 1,2,3.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for seeds.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum TasksCommand {
    /// Print task ids, classes, formulas and machine sizes.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Gradcheck,
    Oracle,
    ExtractCheck,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Dot,
    Text,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Plot { inputs, window, out, title } => plot(&inputs, window, &out, &title),
        Command::Verify { suite, corrupt } => verify(suite, corrupt.as_deref()),
        Command::ExportMachine { checkpoint, format, raw, out } => export(&checkpoint, format, raw, out.as_deref()),
        Command::Tasks { command: TasksCommand::List } => list_tasks(),
    }
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    for kv in &args.sets {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects key=value, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(s) = &args.seeds {
        cfg.set("seeds", s)?;
    }
    if let Some(e) = args.episodes {
        cfg.episodes = e;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let cfg = resolve_config(&args)?;
    cfg.validate()?;
    eprintln!(
        "task {} | {} | {} seeds x {} episodes -> {}",
        cfg.task,
        cfg.method,
        cfg.seeds.len(),
        cfg.episodes,
        cfg.out.display()
    );
    let report = run_experiment(&cfg, args.parallel.max(1))?;
    for s in &report.seeds {
        let stop = s.stopped_at.map_or_else(|| "-".to_string(), |e| e.to_string());
        let states = s.machine_states.map_or_else(|| "-".to_string(), |n| n.to_string());
        println!(
            "seed {:>4}: episodes {:>6}  stopped {:>6}  final success {:.3}  machine states {}",
            s.seed, s.episodes, stop, s.final_success, states
        );
    }
    println!("wrote {} files to {}", report.files.len(), cfg.out.display());
    Ok(ExitCode::SUCCESS)
}

fn plot(inputs: &[PathBuf], window: usize, out: &Path, title: &str) -> Result<ExitCode> {
    let files: Vec<PathBuf> = inputs
        .iter()
        .map(|p| if p.is_dir() { p.join("metrics.csv") } else { p.clone() })
        .collect();
    let rows = read_metrics(&files)?;
    let svg = plot_curves(&rows, window, title)?;
    std::fs::write(out, svg).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn verify(suite: SuiteArg, corrupt: Option<&str>) -> Result<ExitCode> {
    let checks = match (suite, corrupt) {
        (SuiteArg::Gradcheck, c) => gradcheck_suite(c)?,
        (_, Some(_)) => bail!("--corrupt only applies to gradcheck"),
        (SuiteArg::Oracle, None) => run_suite(Suite::Oracle)?,
        (SuiteArg::ExtractCheck, None) => run_suite(Suite::ExtractCheck)?,
    };
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn export(path: &Path, format: Format, raw: bool, out: Option<&Path>) -> Result<ExitCode> {
    let (model, vocab) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if vocab.is_empty() {
        bail!("checkpoint has not seen any reward values yet");
    }
    let mut machine = model.extract_machine(&vocab)?;
    if !raw {
        machine = machine.minimize();
    }
    let text = match format {
        Format::Dot => machine.to_dot(),
        Format::Text => machine.to_text(),
    };
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn list_tasks() -> Result<ExitCode> {
    for t in task_registry() {
        let m = t.compile()?;
        println!("{}  class {}  states {:>2}  {}", t.id, t.class, m.num_states(), t.formula);
    }
    Ok(ExitCode::SUCCESS)
}
