use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use gdq_core::harness::{compare, execute, heatmap_csv, load_bundle, ExperimentSpec, HarnessError};
use gdq_core::planner::{Goal, Planner};
use gdq_core::{parse_domain, EnvConfig, Fluent, SimBackup, SymbolicState};

#[derive(Parser)]
#[command(name = "gdq-lab", version, about = "Plan-guided Dyna-Q experiments on a simulated office")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate all shortest plans between two positions.
    Plan {
        /// Action-language domain file.
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        start: String,
        #[arg(long)]
        goal: String,
        #[arg(long, default_value_t = gdq_core::planner::DEFAULT_HORIZON)]
        horizon: usize,
        #[arg(long, default_value_t = gdq_core::planner::DEFAULT_CAP)]
        cap: usize,
    },
    /// Run an experiment spec and write its CSV bundle.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Override the simulated backup of the guided agent.
        #[arg(long)]
        sim_backup: Option<SimBackup>,
    },
    /// Compare two or more bundles that share a task schedule.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Environment the bundles were run on (defaults to the office fixture).
        #[arg(long)]
        env: Option<PathBuf>,
    },
    /// Print a bundle's (area, subarea, count) visit grid.
    Heatmap { dir: PathBuf },
}

/// Marks errors caused by bad input rather than a failed run.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn is_config(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<ConfigError>()
            || e.is::<gdq_core::action_lang::LangError>()
            || e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_config)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config(&e) { 1 } else { 2 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Plan { domain, start, goal, horizon, cap } => plan(&domain, &start, &goal, horizon, cap),
        Command::Run { spec, jobs, sim_backup } => run(&spec, jobs, sim_backup),
        Command::Compare { dirs, env } => compare_cmd(&dirs, env.as_deref()),
        Command::Heatmap { dir } => {
            let m = load_bundle(&dir).with_context(|| format!("loading bundle {}", dir.display()))?;
            print!("{}", heatmap_csv(&m));
            Ok(())
        }
    }
}

fn plan(domain: &Path, start: &str, goal: &str, horizon: usize, cap: usize) -> Result<()> {
    let text = std::fs::read_to_string(domain)
        .map_err(|e| config(format!("cannot read {}: {e}", domain.display())))?;
    let spec = parse_domain(&text).with_context(|| format!("parsing {}", domain.display()))?;
    for p in [start, goal] {
        if spec.object_type(p) != Some("position") {
            return Err(config(format!("{p:?} is not a position of the domain")));
        }
    }
    let planner = Planner::new(spec);
    let s0 = SymbolicState::new([Fluent::new("at", &[start])]);
    let set = planner.enumerate_shortest_plans(&s0, &Goal::at(goal), horizon, cap);
    for p in &set.plans {
        println!("{p}");
    }
    if set.truncated {
        log::warn!("plan set truncated at {cap}");
    }
    if set.is_empty() {
        println!("plans=0 length=none");
    } else {
        println!("plans={} length={}", set.len(), set.length);
    }
    Ok(())
}

fn run(path: &Path, jobs: usize, sim_backup: Option<SimBackup>) -> Result<()> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Ok(seed) = std::env::var("GDQ_LAB_SEED") {
        spec.base_seed = seed.trim().parse().map_err(|_| config(format!("GDQ_LAB_SEED={seed:?} is not a u64")))?;
    }
    if let Some(b) = sim_backup {
        spec.agent_config.sim_backup = b;
    }
    let m = execute(&spec, jobs).map_err(|e| anyhow!(e))?;
    let n = m.episodes();
    println!(
        "agent={} runs={} episodes={} cumulative={:.3} output={}",
        m.agent,
        m.runs.len(),
        n,
        m.mean_cumulative(n),
        spec.output_dir.display()
    );
    Ok(())
}

fn compare_cmd(dirs: &[PathBuf], env: Option<&Path>) -> Result<()> {
    let env = match env {
        Some(p) => EnvConfig::load(p).map_err(|e| config(e.to_string()))?,
        None => EnvConfig::office7(),
    };
    let mut bundles = Vec::new();
    for d in dirs {
        let m = load_bundle(d).with_context(|| format!("loading bundle {}", d.display()))?;
        let label = d.file_name().map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned());
        bundles.push((label, m));
    }
    let c = compare(&env, &bundles)?;
    print!("{c}");
    Ok(())
}
