//! Experiment runner: seed sweeps over task schedules, metric collection,
//! CSV bundles and cross-method comparison.
//!
//! A bundle directory holds
//!
//! ```text
//! bundle.toml            metadata (agent, config, schedule, seeds)
//! returns.csv            episode,mean,stderr across runs
//! visits.csv             area,mean,stderr across runs
//! heatmap.csv            area,subarea,count summed over runs
//! run_000/returns.csv    episode,return,steps
//! run_000/visits.csv     area,visits
//! run_000/visits_0.csv   area,visits for schedule phase 0 (one per phase)
//! run_000/heatmap.csv    area,subarea,count
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{Agent, AgentConfig, AgentKind, LearnError};
use crate::nav_env::{irrelevant_areas, EnvConfig, EnvError, NavEnv, FORMAT_VERSION};
use crate::planner::planner_for;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("experiment spec error: {0}")]
    Config(String),
    #[error("cannot parse {path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("bundles are not comparable: {0}")]
    Mismatch(String),
}

impl HarnessError {
    /// Errors caused by the user's input files rather than by a run.
    pub fn is_config(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Toml { .. } | HarnessError::Mismatch(_) => true,
            HarnessError::Env(e) => matches!(e, EnvError::Config(_) | EnvError::Toml(_) | EnvError::Io { .. }),
            HarnessError::Learn(e) => matches!(e, LearnError::Config(_) | LearnError::UnknownAgent(_)),
            HarnessError::Io { .. } | HarnessError::Csv { .. } => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub task: String,
    pub episodes: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    format_version: u32,
    #[serde(default)]
    env_config: Option<PathBuf>,
    agent: AgentKind,
    #[serde(default)]
    agent_config: AgentConfig,
    schedule: Vec<Phase>,
    #[serde(default = "one")]
    runs: u64,
    #[serde(default)]
    base_seed: u64,
    output_dir: PathBuf,
}

fn one() -> u64 {
    1
}

/// A validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Environment file; `None` selects the built-in office fixture.
    pub env_path: Option<PathBuf>,
    pub env: Arc<EnvConfig>,
    pub agent: AgentKind,
    pub agent_config: AgentConfig,
    pub schedule: Vec<Phase>,
    pub runs: u64,
    pub base_seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    /// Parse a spec; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let file: SpecFile =
            toml::from_str(text).map_err(|source| HarnessError::Toml { path: "experiment spec".into(), source })?;
        if file.format_version != FORMAT_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                file.format_version
            )));
        }
        let env_path = file.env_config.map(|p| base_dir.join(p));
        let env = match &env_path {
            Some(p) => EnvConfig::load(p)?,
            None => EnvConfig::office7(),
        };
        let spec = ExperimentSpec {
            env_path,
            env: Arc::new(env),
            agent: file.agent,
            agent_config: file.agent_config,
            schedule: file.schedule,
            runs: file.runs,
            base_seed: file.base_seed,
            output_dir: base_dir.join(file.output_dir),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            HarnessError::Toml { source, .. } => HarnessError::Toml { path: path.display().to_string(), source },
            e => e,
        })
    }

    /// In-memory spec over an already loaded environment.
    pub fn new(env: Arc<EnvConfig>, agent: AgentKind, agent_config: AgentConfig, schedule: Vec<Phase>) -> Self {
        ExperimentSpec {
            env_path: None,
            env,
            agent,
            agent_config,
            schedule,
            runs: 1,
            base_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.schedule.is_empty() {
            return Err(HarnessError::Config("schedule must not be empty".into()));
        }
        for ph in &self.schedule {
            if self.env.task(&ph.task).is_none() {
                return Err(HarnessError::Config(format!("unknown task {:?}", ph.task)));
            }
        }
        self.agent_config.validate()?;
        Ok(())
    }

    pub fn total_episodes(&self) -> u64 {
        self.schedule.iter().map(|p| p.episodes).sum()
    }

    /// Seed of run `i`.
    pub fn run_seed(&self, i: u64) -> u64 {
        self.base_seed.wrapping_add(i)
    }
}

/// Metrics of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub returns: Vec<f64>,
    pub steps: Vec<u32>,
    /// Per schedule phase: visits to each area, counted at the state in
    /// which each action was taken.
    pub phase_visits: Vec<BTreeMap<u8, u64>>,
    /// Visits per (area, subarea) cell over the whole run.
    pub heat: BTreeMap<(u8, u8), u64>,
}

impl RunMetrics {
    pub fn area_visits(&self) -> BTreeMap<u8, u64> {
        let mut total = BTreeMap::new();
        for ph in &self.phase_visits {
            for (&a, &n) in ph {
                *total.entry(a).or_insert(0) += n;
            }
        }
        total
    }

    pub fn total_steps(&self) -> u64 {
        self.steps.iter().map(|&s| s as u64).sum()
    }
}

fn empty_visits(env: &EnvConfig) -> BTreeMap<u8, u64> {
    env.areas().into_iter().map(|a| (a, 0)).collect()
}

fn empty_heat(env: &EnvConfig) -> BTreeMap<(u8, u8), u64> {
    env.positions.iter().map(|p| ((p.area, p.subarea), 0)).collect()
}

/// Execute one seed of the schedule with a fresh agent and environment.
pub fn run_single(spec: &ExperimentSpec, planner: Option<Arc<crate::Planner>>, seed: u64) -> Result<RunMetrics, HarnessError> {
    let env_cfg = spec.env.clone();
    let mut agent = match planner {
        Some(p) => Agent::with_planner(spec.agent, spec.agent_config.clone(), env_cfg.clone(), p, seed)?,
        None => Agent::new(spec.agent, spec.agent_config.clone(), env_cfg.clone(), seed)?,
    };
    let mut env = NavEnv::new(env_cfg.clone());
    let total = spec.total_episodes() as usize;
    let mut m = RunMetrics {
        seed,
        returns: Vec::with_capacity(total),
        steps: Vec::with_capacity(total),
        phase_visits: Vec::with_capacity(spec.schedule.len()),
        heat: empty_heat(&env_cfg),
    };
    let mut episode = 0u64;
    for ph in &spec.schedule {
        let task = env_cfg.task(&ph.task).expect("validated task").clone();
        agent.begin_task(&task)?;
        let mut visits = empty_visits(&env_cfg);
        for _ in 0..ph.episodes {
            let trace = agent.run_episode(&mut env, seed, episode)?;
            for t in &trace.transitions {
                let pos = env_cfg.position(t.state.position);
                *visits.entry(pos.area).or_insert(0) += 1;
                *m.heat.entry((pos.area, pos.subarea)).or_insert(0) += 1;
            }
            m.returns.push(trace.total_return);
            m.steps.push(trace.transitions.len() as u32);
            episode += 1;
        }
        m.phase_visits.push(visits);
    }
    Ok(m)
}

/// Results of all runs of a spec.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub agent: AgentKind,
    pub agent_config: AgentConfig,
    pub schedule: Vec<Phase>,
    pub base_seed: u64,
    pub runs: Vec<RunMetrics>,
}

/// Mean and standard error (sample deviation over `sqrt(n)`; zero for one
/// sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl Metrics {
    pub fn episodes(&self) -> usize {
        self.runs.first().map_or(0, |r| r.returns.len())
    }

    /// Per-episode (mean, stderr) of the return across runs.
    pub fn mean_returns(&self) -> Vec<(f64, f64)> {
        (0..self.episodes())
            .map(|e| mean_stderr(&self.runs.iter().map(|r| r.returns[e]).collect::<Vec<_>>()))
            .collect()
    }

    /// Cumulative return of each run after `episodes` episodes.
    pub fn cumulative_at(&self, episodes: usize) -> Vec<f64> {
        self.runs.iter().map(|r| r.returns[..episodes].iter().sum()).collect()
    }

    /// Mean cumulative return after `episodes` episodes.
    pub fn mean_cumulative(&self, episodes: usize) -> f64 {
        mean_stderr(&self.cumulative_at(episodes)).0
    }

    /// Visits per area over runs, optionally restricted to one phase.
    pub fn visit_stats(&self, phase: Option<usize>) -> BTreeMap<u8, (f64, f64)> {
        let per_run: Vec<BTreeMap<u8, u64>> = self
            .runs
            .iter()
            .map(|r| match phase {
                Some(p) => r.phase_visits[p].clone(),
                None => r.area_visits(),
            })
            .collect();
        let areas: Vec<u8> = per_run.first().map(|v| v.keys().copied().collect()).unwrap_or_default();
        areas
            .into_iter()
            .map(|a| {
                let xs: Vec<f64> = per_run.iter().map(|v| *v.get(&a).unwrap_or(&0) as f64).collect();
                (a, mean_stderr(&xs))
            })
            .collect()
    }

    /// Heat grid summed over runs.
    pub fn heat(&self) -> BTreeMap<(u8, u8), u64> {
        let mut out = BTreeMap::new();
        for r in &self.runs {
            for (&k, &n) in &r.heat {
                *out.entry(k).or_insert(0) += n;
            }
        }
        out
    }
}

/// Run every seed of `spec` on a pool of `jobs` workers (0 picks the
/// default). Any failing run aborts the experiment.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<Metrics, HarnessError> {
    spec.validate()?;
    let planner = match spec.agent {
        AgentKind::QLearning | AgentKind::DynaQ => None,
        _ => Some(Arc::new(planner_for(&spec.env))),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let runs = pool.install(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|i| run_single(spec, planner.clone(), spec.run_seed(i)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    log::info!("{}: {} runs x {} episodes done", spec.agent, runs.len(), spec.total_episodes());
    Ok(Metrics {
        agent: spec.agent,
        agent_config: spec.agent_config.clone(),
        schedule: spec.schedule.clone(),
        base_seed: spec.base_seed,
        runs,
    })
}

// ---------------------------------------------------------------------------
// Bundles on disk

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleMeta {
    format_version: u32,
    agent: AgentKind,
    base_seed: u64,
    runs: u64,
    seeds: Vec<u64>,
    schedule: Vec<Phase>,
    agent_config: AgentConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeRow {
    episode: u64,
    #[serde(rename = "return")]
    ret: f64,
    steps: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct VisitRow {
    area: u8,
    visits: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeatRow {
    area: u8,
    subarea: u8,
    count: u64,
}

#[derive(Debug, Serialize)]
struct EpisodeMeanRow {
    episode: u64,
    mean: f64,
    stderr: f64,
}

#[derive(Debug, Serialize)]
struct AreaMeanRow {
    area: u8,
    mean: f64,
    stderr: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(path))
}

fn heat_rows(heat: &BTreeMap<(u8, u8), u64>) -> impl Iterator<Item = HeatRow> + '_ {
    heat.iter().map(|(&(area, subarea), &count)| HeatRow { area, subarea, count })
}

fn run_dir(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("run_{i:03}"))
}

/// Write `metrics` as a bundle under `dir`.
pub fn write_bundle(metrics: &Metrics, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = BundleMeta {
        format_version: FORMAT_VERSION,
        agent: metrics.agent,
        base_seed: metrics.base_seed,
        runs: metrics.runs.len() as u64,
        seeds: metrics.runs.iter().map(|r| r.seed).collect(),
        schedule: metrics.schedule.clone(),
        agent_config: metrics.agent_config.clone(),
    };
    let text = toml::to_string(&meta).map_err(|e| HarnessError::Config(format!("cannot encode metadata: {e}")))?;
    let path = dir.join("bundle.toml");
    fs::write(&path, text).map_err(io_err(&path))?;

    let rows = metrics.mean_returns().into_iter().enumerate().map(|(e, (mean, stderr))| EpisodeMeanRow {
        episode: e as u64 + 1,
        mean,
        stderr,
    });
    write_csv(&dir.join("returns.csv"), rows)?;
    let rows = metrics.visit_stats(None).into_iter().map(|(area, (mean, stderr))| AreaMeanRow {
        area,
        mean,
        stderr,
    });
    write_csv(&dir.join("visits.csv"), rows)?;
    write_csv(&dir.join("heatmap.csv"), heat_rows(&metrics.heat()))?;

    for (i, run) in metrics.runs.iter().enumerate() {
        let rd = run_dir(dir, i);
        fs::create_dir_all(&rd).map_err(io_err(&rd))?;
        let rows = run.returns.iter().zip(&run.steps).enumerate().map(|(e, (&ret, &steps))| EpisodeRow {
            episode: e as u64 + 1,
            ret,
            steps,
        });
        write_csv(&rd.join("returns.csv"), rows)?;
        let visit_rows = |v: &BTreeMap<u8, u64>| v.iter().map(|(&area, &visits)| VisitRow { area, visits }).collect::<Vec<_>>();
        write_csv(&rd.join("visits.csv"), visit_rows(&run.area_visits()))?;
        for (p, v) in run.phase_visits.iter().enumerate() {
            write_csv(&rd.join(format!("visits_{p}.csv")), visit_rows(v))?;
        }
        write_csv(&rd.join("heatmap.csv"), heat_rows(&run.heat))?;
    }
    Ok(())
}

/// Run `spec` and write its bundle to the spec's output directory.
pub fn execute(spec: &ExperimentSpec, jobs: usize) -> Result<Metrics, HarnessError> {
    let metrics = run_experiment(spec, jobs)?;
    write_bundle(&metrics, &spec.output_dir)?;
    Ok(metrics)
}

/// Read a bundle written by [`write_bundle`].
pub fn load_bundle(dir: &Path) -> Result<Metrics, HarnessError> {
    let path = dir.join("bundle.toml");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let meta: BundleMeta =
        toml::from_str(&text).map_err(|source| HarnessError::Toml { path: path.display().to_string(), source })?;
    let mut runs = Vec::with_capacity(meta.seeds.len());
    for (i, &seed) in meta.seeds.iter().enumerate() {
        let rd = run_dir(dir, i);
        let eps: Vec<EpisodeRow> = read_csv(&rd.join("returns.csv"))?;
        let mut phase_visits = Vec::with_capacity(meta.schedule.len());
        for p in 0..meta.schedule.len() {
            let rows: Vec<VisitRow> = read_csv(&rd.join(format!("visits_{p}.csv")))?;
            phase_visits.push(rows.into_iter().map(|r| (r.area, r.visits)).collect());
        }
        let heat: Vec<HeatRow> = read_csv(&rd.join("heatmap.csv"))?;
        runs.push(RunMetrics {
            seed,
            returns: eps.iter().map(|r| r.ret).collect(),
            steps: eps.iter().map(|r| r.steps).collect(),
            phase_visits,
            heat: heat.into_iter().map(|r| ((r.area, r.subarea), r.count)).collect(),
        });
    }
    Ok(Metrics {
        agent: meta.agent,
        agent_config: meta.agent_config,
        schedule: meta.schedule,
        base_seed: meta.base_seed,
        runs,
    })
}

/// Heat grid of a bundle as CSV text (`area,subarea,count`).
pub fn heatmap_csv(metrics: &Metrics) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in heat_rows(&metrics.heat()) {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

// ---------------------------------------------------------------------------
// Comparison

/// Which methods visit an irrelevant area least in one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct IrrFlag {
    pub phase: usize,
    pub task: String,
    pub area: u8,
    /// Labels of the methods attaining the minimum mean.
    pub minimal: Vec<String>,
    pub tie: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub schedule: Vec<Phase>,
    /// `visits[phase][method]`: area -> (mean, stderr).
    pub visits: Vec<Vec<BTreeMap<u8, (f64, f64)>>>,
    /// Checkpoint episode counts.
    pub checkpoints: Vec<usize>,
    /// `cumulative[method][checkpoint]`: (mean, stderr).
    pub cumulative: Vec<Vec<(f64, f64)>>,
    pub irr: Vec<IrrFlag>,
}

/// Episode interval between cumulative-reward checkpoints.
pub const CHECKPOINT_EVERY: usize = 50;

/// Compare labelled bundles that share a schedule.
pub fn compare(env: &EnvConfig, bundles: &[(String, Metrics)]) -> Result<Comparison, HarnessError> {
    if bundles.len() < 2 {
        return Err(HarnessError::Mismatch("need at least two bundles".into()));
    }
    let schedule = bundles[0].1.schedule.clone();
    for (label, m) in &bundles[1..] {
        if m.schedule != schedule {
            return Err(HarnessError::Mismatch(format!("{label} has a different task schedule")));
        }
    }
    let episodes = schedule.iter().map(|p| p.episodes as usize).sum::<usize>();
    let mut checkpoints: Vec<usize> = (1..=episodes / CHECKPOINT_EVERY).map(|k| k * CHECKPOINT_EVERY).collect();
    if episodes % CHECKPOINT_EVERY != 0 {
        checkpoints.push(episodes);
    }
    let visits: Vec<Vec<_>> = (0..schedule.len())
        .map(|p| bundles.iter().map(|(_, m)| m.visit_stats(Some(p))).collect())
        .collect();
    let cumulative = bundles
        .iter()
        .map(|(_, m)| checkpoints.iter().map(|&c| mean_stderr(&m.cumulative_at(c))).collect())
        .collect();
    let mut irr = Vec::new();
    for (p, ph) in schedule.iter().enumerate() {
        let task = env
            .task(&ph.task)
            .ok_or_else(|| HarnessError::Mismatch(format!("task {:?} not in the environment", ph.task)))?;
        for area in irrelevant_areas(env, task) {
            let means: Vec<f64> = visits[p].iter().map(|v| v.get(&area).map_or(0.0, |x| x.0)).collect();
            let best = means.iter().copied().fold(f64::INFINITY, f64::min);
            let minimal: Vec<String> = bundles
                .iter()
                .zip(&means)
                .filter(|(_, &m)| m == best)
                .map(|((l, _), _)| l.clone())
                .collect();
            irr.push(IrrFlag { phase: p, task: ph.task.clone(), area, tie: minimal.len() > 1, minimal });
        }
    }
    Ok(Comparison {
        labels: bundles.iter().map(|(l, _)| l.clone()).collect(),
        schedule,
        visits,
        checkpoints,
        cumulative,
        irr,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (p, ph) in self.schedule.iter().enumerate() {
            writeln!(f, "# area visits, phase {p} (task {}, {} episodes): mean (stderr)", ph.task, ph.episodes)?;
            let areas: Vec<u8> = self.visits[p].first().map(|v| v.keys().copied().collect()).unwrap_or_default();
            write!(f, "method")?;
            for a in &areas {
                write!(f, ",area{a}")?;
            }
            writeln!(f)?;
            for (label, v) in self.labels.iter().zip(&self.visits[p]) {
                write!(f, "{label}")?;
                for a in &areas {
                    let (m, s) = v.get(a).copied().unwrap_or((0.0, 0.0));
                    write!(f, ",{m:.1} ({s:.1})")?;
                }
                writeln!(f)?;
            }
        }
        writeln!(f, "# cumulative reward: mean (stderr)")?;
        write!(f, "method")?;
        for c in &self.checkpoints {
            write!(f, ",ep{c}")?;
        }
        writeln!(f)?;
        for (label, row) in self.labels.iter().zip(&self.cumulative) {
            write!(f, "{label}")?;
            for (m, s) in row {
                write!(f, ",{m:.1} ({s:.1})")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "# fewest visits to irrelevant areas")?;
        writeln!(f, "phase,task,area,minimal,tie")?;
        for fl in &self.irr {
            writeln!(f, "{},{},{},{},{}", fl.phase, fl.task, fl.area, fl.minimal.join("|"), if fl.tie { "tie" } else { "-" })?;
        }
        Ok(())
    }
}
