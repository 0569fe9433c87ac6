//! Tabular agents over the navigation environment: Q-learning, Dyna-Q,
//! guided Dyna-Q, and a plan-filtered Q-learning baseline.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{
    argmax_action, epsilon_greedy, seeded_rng, DomainError, MdpAction, MdpState, QTable, SimRng, TabularMdp, Task,
    WorldModel, DEFAULT_KNOWN_THRESHOLD,
};
use crate::nav_env::{EnvConfig, EnvError, NavEnv};
use crate::planner::{
    action_from_symbolic, map_to_symbolic, plan_pairs, planner_for, Goal, MapError, PlanSet, Planner, DEFAULT_CAP,
    DEFAULT_HORIZON,
};

/// RNG stream for action selection.
const AGENT_STREAM: u64 = 1;
/// RNG stream for simulated experience, kept apart so that agents with
/// different planning budgets still explore on common random numbers.
const PLANNING_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("unknown agent {0:?} (expected gdq, dynaq, qlearning or darling-lite)")]
    UnknownAgent(String),
    #[error("agent has no active task")]
    NoTask,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Gdq,
    DynaQ,
    QLearning,
    DarlingLite,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Gdq, AgentKind::DynaQ, AgentKind::QLearning, AgentKind::DarlingLite];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Gdq => "gdq",
            AgentKind::DynaQ => "dynaq",
            AgentKind::QLearning => "qlearning",
            AgentKind::DarlingLite => "darling-lite",
        }
    }

    fn needs_planner(self) -> bool {
        matches!(self, AgentKind::Gdq | AgentKind::DarlingLite)
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| LearnError::UnknownAgent(s.to_string()))
    }
}

impl Serialize for AgentKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for AgentKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a simulated update uses the learned model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimBackup {
    /// Full expectation over the estimated successors, assigned outright.
    Expected,
    /// One sampled successor, blended in with the learning rate.
    Sample,
}

impl FromStr for SimBackup {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expected" => Ok(SimBackup::Expected),
            "sample" => Ok(SimBackup::Sample),
            _ => Err(LearnError::Config(format!("unknown backup form {s:?}"))),
        }
    }
}

/// Extra plan length tolerated by the plan filter; `None` disables it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slack(pub Option<usize>);

impl Serialize for Slack {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(k) => s.serialize_u64(k as u64),
            None => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Slack {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            N(usize),
            S(String),
        }
        match Repr::deserialize(d)? {
            Repr::N(k) => Ok(Slack(Some(k))),
            Repr::S(s) if s == "inf" => Ok(Slack(None)),
            Repr::S(s) => Err(serde::de::Error::custom(format!("darling_slack must be an integer or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub r_max: f64,
    /// Known-ness threshold.
    pub m: u32,
    /// Plan-guided simulated updates per real step.
    pub n_sim: usize,
    /// Replay updates per real step for Dyna-Q.
    pub dynaq_sweeps: usize,
    pub darling_slack: Slack,
    /// Backup used by plan-guided updates.
    pub sim_backup: SimBackup,
    /// Backup used by Dyna-Q replay.
    pub dynaq_backup: SimBackup,
    /// Also back up plan pairs that are not yet known, against the
    /// optimistic prior. Off by default: unknown pairs keep their value.
    pub simulate_unknown: bool,
    /// Run optimistic initialization at each task start (guided agent only).
    pub optimistic_init: bool,
    pub horizon: usize,
    pub plan_cap: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 0.1,
            gamma: 0.95,
            epsilon: 0.1,
            r_max: 20.0,
            m: DEFAULT_KNOWN_THRESHOLD,
            n_sim: 30,
            dynaq_sweeps: 30,
            darling_slack: Slack(Some(2)),
            sim_backup: SimBackup::Expected,
            dynaq_backup: SimBackup::Sample,
            simulate_unknown: false,
            optimistic_init: true,
            horizon: DEFAULT_HORIZON,
            plan_cap: DEFAULT_CAP,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !self.r_max.is_finite() || self.r_max < 0.0 {
            return bad("r_max must be finite and nonnegative");
        }
        if self.m == 0 {
            return bad("m must be positive");
        }
        if self.horizon == 0 || self.plan_cap == 0 {
            return bad("horizon and plan_cap must be positive");
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Value updates and dynamic programming

/// One temporal-difference step. `next_actions` empty means `next` is
/// terminal. Returns the new value.
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    q: &mut QTable,
    s: MdpState,
    a: MdpAction,
    r: f64,
    next: &MdpState,
    next_actions: &[MdpAction],
    alpha: f64,
    gamma: f64,
) -> f64 {
    let old = q.get(&s, &a);
    let v = old + alpha * (r + gamma * q.max_value(next, next_actions) - old);
    q.set(s, a, v);
    v
}

/// Greedy action per state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Policy {
    actions: HashMap<MdpState, MdpAction>,
}

impl Policy {
    /// Argmax of `q` at every non-terminal state of `mdp`, ties to the
    /// earliest action.
    pub fn greedy(q: &QTable, mdp: &impl TabularMdp) -> Self {
        let mut actions = HashMap::new();
        for s in mdp.states() {
            if mdp.is_terminal(s) {
                continue;
            }
            if let Ok(a) = argmax_action(q, s, &mdp.actions(s)) {
                actions.insert(*s, a);
            }
        }
        Policy { actions }
    }

    pub fn get(&self, s: &MdpState) -> Option<MdpAction> {
        self.actions.get(s).copied()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

const EVAL_TOLERANCE: f64 = 1e-10;
const MAX_PI_ROUNDS: usize = 10_000;

/// Dense view of a tabular model.
struct Compiled {
    states: Vec<MdpState>,
    terminal: Vec<bool>,
    actions: Vec<Vec<MdpAction>>,
    /// `[state][action] -> (reward, [(successor index, p)])`
    rows: Vec<Vec<(f64, Vec<(usize, f64)>)>>,
}

impl Compiled {
    fn new(mdp: &impl TabularMdp) -> Self {
        let states = mdp.states().to_vec();
        let index: HashMap<MdpState, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let mut terminal = Vec::with_capacity(states.len());
        let mut actions = Vec::with_capacity(states.len());
        let mut rows = Vec::with_capacity(states.len());
        for s in &states {
            let term = mdp.is_terminal(s);
            let acts = if term { Vec::new() } else { mdp.actions(s) };
            let row = acts
                .iter()
                .map(|a| {
                    // successors outside the state list count as value zero
                    let succ = mdp
                        .transitions(s, a)
                        .into_iter()
                        .filter_map(|(sp, p)| index.get(&sp).map(|&j| (j, p)))
                        .collect();
                    (mdp.reward(s, a), succ)
                })
                .collect();
            terminal.push(term);
            actions.push(acts);
            rows.push(row);
        }
        Compiled { states, terminal, actions, rows }
    }

    fn backup(&self, i: usize, k: usize, v: &[f64], gamma: f64) -> f64 {
        let (r, succ) = &self.rows[i][k];
        r + gamma * succ.iter().map(|&(j, p)| p * v[j]).sum::<f64>()
    }

    fn write_q(&self, q: &mut QTable, v: &[f64], gamma: f64) {
        for i in 0..self.states.len() {
            for (k, a) in self.actions[i].iter().enumerate() {
                q.set(self.states[i], *a, self.backup(i, k, v, gamma));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyIteration {
    pub policy: Policy,
    /// Improvement rounds until the policy was stable.
    pub rounds: usize,
}

/// Policy iteration from the first-action policy. Every applicable action's
/// Q-value is written for every non-terminal state; terminal states keep
/// value zero.
pub fn policy_iteration(q: &mut QTable, model: &impl TabularMdp, gamma: f64) -> PolicyIteration {
    let c = Compiled::new(model);
    let n = c.states.len();
    let mut pi: Vec<usize> = vec![0; n];
    let mut v = vec![0.0; n];
    let mut rounds = 0;
    loop {
        rounds += 1;
        // evaluation (Gauss-Seidel)
        loop {
            let mut delta: f64 = 0.0;
            for i in 0..n {
                if c.terminal[i] || c.actions[i].is_empty() {
                    continue;
                }
                let nv = c.backup(i, pi[i], &v, gamma);
                delta = delta.max((nv - v[i]).abs());
                v[i] = nv;
            }
            if delta < EVAL_TOLERANCE {
                break;
            }
        }
        // improvement; keep the incumbent unless strictly beaten
        let mut stable = true;
        for i in 0..n {
            if c.actions[i].is_empty() {
                continue;
            }
            let incumbent = c.backup(i, pi[i], &v, gamma);
            let mut best = (pi[i], incumbent);
            for k in 0..c.actions[i].len() {
                let qk = c.backup(i, k, &v, gamma);
                if qk > best.1 + 1e-9 {
                    best = (k, qk);
                }
            }
            if best.0 != pi[i] {
                pi[i] = best.0;
                stable = false;
            }
        }
        if stable || rounds >= MAX_PI_ROUNDS {
            break;
        }
    }
    c.write_q(q, &v, gamma);
    PolicyIteration { policy: Policy::greedy(q, model), rounds }
}

#[derive(Debug, Clone)]
pub struct ValueSolution {
    pub values: HashMap<MdpState, f64>,
    pub q: QTable,
    pub policy: Policy,
}

/// Value iteration to a sup-norm change below `tolerance`.
pub fn value_iteration(model: &impl TabularMdp, gamma: f64, tolerance: f64) -> ValueSolution {
    let c = Compiled::new(model);
    let n = c.states.len();
    let mut v = vec![0.0; n];
    loop {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            if c.actions[i].is_empty() {
                continue;
            }
            let nv = (0..c.actions[i].len()).map(|k| c.backup(i, k, &v, gamma)).fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((nv - v[i]).abs());
            v[i] = nv;
        }
        if delta < tolerance {
            break;
        }
    }
    let mut q = QTable::new();
    c.write_q(&mut q, &v, gamma);
    let policy = Policy::greedy(&q, model);
    let values = c.states.iter().copied().zip(v).collect();
    ValueSolution { values, q, policy }
}

// ---------------------------------------------------------------------------
// Optimistic initialization

/// Prior model: every pair returns to the task start; plan pairs pay `r_max`.
/// With `plan_only`, each state offers only its plan actions, so
/// evaluation never assigns values to off-plan pairs.
struct OptimisticModel<'a> {
    config: &'a EnvConfig,
    states: Vec<MdpState>,
    task: &'a Task,
    optimistic: &'a HashSet<(MdpState, MdpAction)>,
    r_max: f64,
    plan_only: bool,
}

impl TabularMdp for OptimisticModel<'_> {
    fn states(&self) -> &[MdpState] {
        &self.states
    }

    fn actions(&self, s: &MdpState) -> Vec<MdpAction> {
        let mut all = self.config.applicable_actions(s);
        if self.plan_only {
            all.retain(|a| self.optimistic.contains(&(*s, *a)));
        }
        all
    }

    fn is_terminal(&self, s: &MdpState) -> bool {
        self.task.is_goal(s)
    }

    fn transitions(&self, _s: &MdpState, _a: &MdpAction) -> Vec<(MdpState, f64)> {
        vec![(self.task.initial_state(), 1.0)]
    }

    fn reward(&self, s: &MdpState, a: &MdpAction) -> f64 {
        if self.optimistic.contains(&(*s, *a)) {
            self.r_max
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptInit {
    pub q: QTable,
    pub model: WorldModel,
    pub policy: Policy,
    pub plans: PlanSet,
    /// Learner-side pairs of every plan step.
    pub optimistic_pairs: HashSet<(MdpState, MdpAction)>,
    /// Zero when planning failed and the zero fallback was used.
    pub rounds: usize,
}

/// Plan from the task start, give plan pairs reward `r_max` under a prior
/// that returns every pair to the start, and solve the prior by policy
/// iteration. Only plan pairs are evaluated; every other pair keeps its
/// initial value of zero. Touches no environment.
pub fn opt_init(planner: &Planner, config: &EnvConfig, task: &Task, agent: &AgentConfig) -> Result<OptInit, LearnError> {
    let goal = goal_of(config, task);
    let s0 = map_to_symbolic(config, &task.initial_state());
    let plans = planner.enumerate_shortest_plans(&s0, &goal, agent.horizon, agent.plan_cap);
    let optimistic_pairs: HashSet<_> = plan_pairs(config, &plans)?.into_iter().flatten().collect();
    let mut q = QTable::new();
    let model = WorldModel::new(agent.m);
    let mut prior = OptimisticModel {
        config,
        states: config.reachable_states(),
        task,
        optimistic: &optimistic_pairs,
        r_max: agent.r_max,
        plan_only: true,
    };
    let rounds = if optimistic_pairs.is_empty() {
        log::warn!("no plan for task {} within horizon {}; starting from zero Q-values", task.name, agent.horizon);
        0
    } else {
        policy_iteration(&mut q, &prior, agent.gamma).rounds
    };
    prior.plan_only = false;
    let policy = Policy::greedy(&q, &prior);
    Ok(OptInit { q, model, policy, plans, optimistic_pairs, rounds })
}

fn goal_of(config: &EnvConfig, task: &Task) -> Goal {
    Goal::at(config.position(task.goal).id.clone())
}

// ---------------------------------------------------------------------------
// Plan-constrained action filter

/// Applicable actions at `s` whose optimistic successor still admits a plan
/// of total length at most `L_min + slack`. Falls back to every applicable
/// action when no plan exists or `slack` is `None`.
pub fn darling_action_filter(
    planner: &Planner,
    config: &EnvConfig,
    s: &MdpState,
    task: &Task,
    slack: Option<usize>,
    horizon: usize,
) -> Vec<MdpAction> {
    let all = config.applicable_actions(s);
    let Some(k) = slack else {
        return all;
    };
    let goal = goal_of(config, task);
    let sym = map_to_symbolic(config, s);
    let Some(lmin) = planner.shortest_length(&sym, &goal, horizon) else {
        return all;
    };
    if lmin == 0 {
        return all;
    }
    let budget = lmin + k;
    let mut ok = HashSet::new();
    for (idx, next) in planner.successors(&sym) {
        let Ok(a) = action_from_symbolic(config, &planner.actions()[idx]) else {
            continue;
        };
        if let Some(d) = planner.shortest_length(&next, &goal, budget - 1) {
            if d < budget {
                ok.insert(a);
            }
        }
    }
    let allowed: Vec<MdpAction> = all.iter().copied().filter(|a| ok.contains(a)).collect();
    if allowed.is_empty() {
        all
    } else {
        allowed
    }
}

// ---------------------------------------------------------------------------
// Agents

/// One real step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: MdpState,
    pub action: MdpAction,
    pub reward: f64,
    pub next: MdpState,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub transitions: Vec<Transition>,
    pub total_return: f64,
    pub success: bool,
}

impl EpisodeTrace {
    pub fn steps(&self) -> usize {
        self.transitions.len()
    }
}

type PairPlans = Arc<Vec<Vec<(MdpState, MdpAction)>>>;

struct TaskContext {
    task: Task,
    goal: Goal,
    start: MdpState,
    optimistic: HashSet<(MdpState, MdpAction)>,
    plans: HashMap<MdpState, PairPlans>,
    allowed: HashMap<MdpState, Arc<[MdpAction]>>,
}

pub struct Agent {
    kind: AgentKind,
    config: AgentConfig,
    env: Arc<EnvConfig>,
    planner: Option<Arc<Planner>>,
    q: QTable,
    model: WorldModel,
    rng: SimRng,
    plan_rng: SimRng,
    actions: HashMap<MdpState, Arc<[MdpAction]>>,
    ctx: Option<TaskContext>,
    last_simulated: Vec<(MdpState, MdpAction)>,
}

impl Agent {
    /// Fresh agent; decisions draw from a stream derived from `seed`.
    pub fn new(kind: AgentKind, config: AgentConfig, env: Arc<EnvConfig>, seed: u64) -> Result<Self, LearnError> {
        let planner = kind.needs_planner().then(|| Arc::new(planner_for(&env)));
        Self::build(kind, config, env, planner, seed)
    }

    /// Like [`Agent::new`] but reusing an existing planner for `env`.
    pub fn with_planner(
        kind: AgentKind,
        config: AgentConfig,
        env: Arc<EnvConfig>,
        planner: Arc<Planner>,
        seed: u64,
    ) -> Result<Self, LearnError> {
        Self::build(kind, config, env, Some(planner), seed)
    }

    fn build(
        kind: AgentKind,
        config: AgentConfig,
        env: Arc<EnvConfig>,
        planner: Option<Arc<Planner>>,
        seed: u64,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        Ok(Agent {
            kind,
            model: WorldModel::new(config.m),
            config,
            env,
            planner,
            q: QTable::new(),
            rng: seeded_rng(seed, AGENT_STREAM),
            plan_rng: seeded_rng(seed, PLANNING_STREAM),
            actions: HashMap::new(),
            ctx: None,
            last_simulated: Vec::new(),
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn model(&self) -> &WorldModel {
        &self.model
    }

    pub fn task(&self) -> Option<&Task> {
        self.ctx.as_ref().map(|c| &c.task)
    }

    /// Pairs touched by simulated updates during the latest step.
    pub fn last_simulated(&self) -> &[(MdpState, MdpAction)] {
        &self.last_simulated
    }

    /// Switch to `task`. The learned model persists; the guided agent
    /// re-initializes Q optimistically, the others keep it.
    pub fn begin_task(&mut self, task: &Task) -> Result<(), LearnError> {
        let mut ctx = TaskContext {
            task: task.clone(),
            goal: goal_of(&self.env, task),
            start: task.initial_state(),
            optimistic: HashSet::new(),
            plans: HashMap::new(),
            allowed: HashMap::new(),
        };
        if self.kind == AgentKind::Gdq && self.config.optimistic_init {
            let planner = self.planner.as_ref().expect("guided agent has a planner");
            let init = opt_init(planner, &self.env, task, &self.config)?;
            self.q = init.q;
            ctx.optimistic = init.optimistic_pairs;
        }
        self.ctx = Some(ctx);
        Ok(())
    }

    /// Greedy action at `s` among the agent's candidates.
    pub fn greedy_action(&mut self, s: &MdpState) -> Result<MdpAction, LearnError> {
        let cands = self.candidates(s)?;
        Ok(argmax_action(&self.q, s, &cands)?)
    }

    /// Reset `env` for `episode` and act until it terminates.
    pub fn run_episode(&mut self, env: &mut NavEnv, seed: u64, episode: u64) -> Result<EpisodeTrace, LearnError> {
        let task = self.ctx.as_ref().ok_or(LearnError::NoTask)?.task.clone();
        env.reset(&task, seed, episode)?;
        let mut trace = EpisodeTrace::default();
        while !env.is_done() {
            let t = self.step(env)?;
            trace.total_return += t.reward;
            trace.success = t.done && task.is_goal(&t.next);
            trace.transitions.push(t);
        }
        Ok(trace)
    }

    /// One real step followed by the agent's planning updates.
    pub fn step(&mut self, env: &mut NavEnv) -> Result<Transition, LearnError> {
        if self.ctx.is_none() {
            return Err(LearnError::NoTask);
        }
        self.last_simulated.clear();
        let s = env.state();
        let cands = self.candidates(&s)?;
        let a = epsilon_greedy(&self.q, &s, &cands, self.config.epsilon, &mut self.rng)?;
        let out = env.step(a)?;
        let next = out.next_state;
        let v_next = self.state_value(&next)?;
        let old = self.q.get(&s, &a);
        self.q.set(s, a, old + self.config.alpha * (out.reward + self.config.gamma * v_next - old));

        match self.kind {
            AgentKind::QLearning | AgentKind::DarlingLite => {}
            AgentKind::DynaQ => {
                self.model.update(s, a, next, out.reward);
                self.replay_updates()?;
            }
            AgentKind::Gdq => {
                self.model.update(s, a, next, out.reward);
                // plans are taken from the state the step was chosen in
                self.guided_updates(&s)?;
            }
        }
        Ok(Transition { state: s, action: a, reward: out.reward, next, done: out.done })
    }

    fn ctx(&self) -> &TaskContext {
        self.ctx.as_ref().expect("active task")
    }

    fn applicable(&mut self, s: &MdpState) -> Arc<[MdpAction]> {
        let env = &self.env;
        self.actions.entry(*s).or_insert_with(|| env.applicable_actions(s).into()).clone()
    }

    fn candidates(&mut self, s: &MdpState) -> Result<Arc<[MdpAction]>, LearnError> {
        if self.kind != AgentKind::DarlingLite {
            return Ok(self.applicable(s));
        }
        let ctx = self.ctx.as_mut().ok_or(LearnError::NoTask)?;
        if let Some(a) = ctx.allowed.get(s) {
            return Ok(a.clone());
        }
        let planner = self.planner.as_ref().expect("filtered agent has a planner");
        let allowed: Arc<[MdpAction]> = darling_action_filter(
            planner,
            &self.env,
            s,
            &ctx.task,
            self.config.darling_slack.0,
            self.config.horizon,
        )
        .into();
        ctx.allowed.insert(*s, allowed.clone());
        Ok(allowed)
    }

    /// `max_a Q(s, a)` over the candidates, zero at the goal.
    fn state_value(&mut self, s: &MdpState) -> Result<f64, LearnError> {
        if self.ctx().task.is_goal(s) {
            return Ok(0.0);
        }
        let cands = self.candidates(s)?;
        Ok(self.q.max_value(s, &cands))
    }

    fn expected_value(&mut self, dist: &[(MdpState, f64)]) -> Result<f64, LearnError> {
        let mut acc = 0.0;
        for (sp, p) in dist {
            acc += p * self.state_value(sp)?;
        }
        Ok(acc)
    }

    fn sample_successor(&mut self, dist: &[(MdpState, f64)]) -> MdpState {
        let u: f64 = self.plan_rng.gen();
        let mut acc = 0.0;
        for (sp, p) in dist {
            acc += p;
            if u < acc {
                return *sp;
            }
        }
        dist.last().expect("nonempty distribution").0
    }

    /// Apply a simulated update with reward `r` and successor distribution
    /// `dist`.
    fn model_backup(
        &mut self,
        backup: SimBackup,
        s: MdpState,
        a: MdpAction,
        r: f64,
        dist: &[(MdpState, f64)],
    ) -> Result<(), LearnError> {
        let gamma = self.config.gamma;
        match backup {
            SimBackup::Expected => {
                let v = self.expected_value(dist)?;
                self.q.set(s, a, r + gamma * v);
            }
            SimBackup::Sample => {
                let sp = self.sample_successor(dist);
                let v = self.state_value(&sp)?;
                let old = self.q.get(&s, &a);
                self.q.set(s, a, old + self.config.alpha * (r + gamma * v - old));
            }
        }
        self.last_simulated.push((s, a));
        Ok(())
    }

    /// Simulated update on a plan pair. Pairs below the known-ness threshold
    /// are skipped unless `simulate_unknown` is set, in which case they use
    /// the optimistic prior.
    fn simulated_backup(&mut self, s: MdpState, a: MdpAction) -> Result<(), LearnError> {
        let known = match (self.model.t_hat(&s, &a), self.model.r_hat(&s, &a)) {
            (Some(t), Some(r)) => Some((t.to_vec(), r)),
            _ => None,
        };
        let (dist, r) = match known {
            Some(k) => k,
            None if !self.config.simulate_unknown => return Ok(()),
            None => {
                let ctx = self.ctx();
                let r = if ctx.optimistic.contains(&(s, a)) { self.config.r_max } else { 0.0 };
                (vec![(ctx.start, 1.0)], r)
            }
        };
        self.model_backup(self.config.sim_backup, s, a, r, &dist)
    }

    fn plans_from(&mut self, s: &MdpState) -> Result<PairPlans, LearnError> {
        let ctx = self.ctx.as_mut().expect("active task");
        if let Some(p) = ctx.plans.get(s) {
            return Ok(p.clone());
        }
        let planner = self.planner.as_ref().expect("guided agent has a planner");
        let sym = map_to_symbolic(&self.env, s);
        let set = planner.replan(&sym, &ctx.goal, self.config.horizon, self.config.plan_cap);
        let pairs: Vec<_> = plan_pairs(&self.env, &set)?.into_iter().filter(|p| !p.is_empty()).collect();
        let pairs = Arc::new(pairs);
        ctx.plans.insert(*s, pairs.clone());
        Ok(pairs)
    }

    fn guided_updates(&mut self, from: &MdpState) -> Result<(), LearnError> {
        if self.config.n_sim == 0 || self.ctx().task.is_goal(from) {
            return Ok(());
        }
        let plans = self.plans_from(from)?;
        if plans.is_empty() {
            log::debug!("no plan from {}; skipping simulated updates", self.env.mdp_state_name(from));
            return Ok(());
        }
        for _ in 0..self.config.n_sim {
            let p = &plans[self.plan_rng.gen_range(0..plans.len())];
            let (s, a) = p[self.plan_rng.gen_range(0..p.len())];
            self.simulated_backup(s, a)?;
        }
        Ok(())
    }

    fn replay_updates(&mut self) -> Result<(), LearnError> {
        let n = self.model.visited_pairs().len();
        if n == 0 {
            return Ok(());
        }
        for _ in 0..self.config.dynaq_sweeps {
            let (s, a) = self.model.visited_pairs()[self.plan_rng.gen_range(0..n)];
            let (dist, r) = self.model.empirical(&s, &a).expect("visited pair");
            self.model_backup(self.config.dynaq_backup, s, a, r, &dist)?;
        }
        Ok(())
    }
}
