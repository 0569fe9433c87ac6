//! Discrete stochastic simulator of a multi-room office: areas joined by
//! doors or by direct corridors, four navigation action types, seeded door
//! outcomes, and the reward scheme (success bonus, failure penalty, per-step
//! costs).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    seeded_rng, ActionKind, Door, DoorId, MdpAction, MdpState, PosId, Position, SimRng, TabularMdp,
    Target, Task,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("step called before reset")]
    NotReset,
}

fn cfg_err<T>(msg: impl Into<String>) -> Result<T, EnvError> {
    Err(EnvError::Config(msg.into()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DoorFile {
    id: String,
    connects: [u8; 2],
    success_rate: f64,
    open_cost: f64,
    /// Approach point on each side, in `connects` order.
    approach: [String; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TaskFile {
    name: String,
    start: String,
    goal: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnvFile {
    format_version: u32,
    r_max: f64,
    step_cost: f64,
    max_steps: u32,
    within_area_cost: f64,
    adjacent_area_cost: f64,
    #[serde(default)]
    adjacency: Vec<[u8; 2]>,
    positions: Vec<Position>,
    doors: Vec<DoorFile>,
    #[serde(default)]
    tasks: Vec<TaskFile>,
}

/// Validated environment description.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub positions: Vec<Position>,
    pub doors: Vec<Door>,
    /// Door-free direct-access area pairs.
    pub area_adjacency: Vec<(u8, u8)>,
    /// Approach point of each door on each side, in `connects` order.
    pub approach_points: Vec<[PosId; 2]>,
    pub reward_success: f64,
    pub penalty_failure: f64,
    pub step_cost: f64,
    pub max_steps: u32,
    /// `goto` cost between positions; `None` where `goto` is not possible.
    pub move_cost_matrix: Vec<Vec<Option<f64>>>,
    pub tasks: Vec<Task>,
    within_area_cost: f64,
    adjacent_area_cost: f64,
}

/// The shipped seven-area office fixture.
pub const OFFICE7_ENV: &str = include_str!("../fixtures/office7.env");

impl EnvConfig {
    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let file: EnvFile = toml::from_str(text)?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| EnvError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn office7() -> Self {
        Self::from_toml(OFFICE7_ENV).expect("shipped fixture is valid")
    }

    fn from_file(f: EnvFile) -> Result<Self, EnvError> {
        if f.format_version != FORMAT_VERSION {
            return cfg_err(format!("unsupported format_version {}", f.format_version));
        }
        if f.positions.is_empty() || f.positions.len() > 255 {
            return cfg_err("need between 1 and 255 positions");
        }
        if f.doors.len() > 32 {
            return cfg_err("at most 32 doors are supported");
        }
        if f.r_max < 0.0 || f.step_cost < 0.0 || f.within_area_cost < 0.0 || f.adjacent_area_cost < 0.0 {
            return cfg_err("rewards and costs must be nonnegative");
        }
        if f.max_steps == 0 {
            return cfg_err("max_steps must be positive");
        }
        let mut seen = BTreeSet::new();
        for p in &f.positions {
            if !seen.insert(p.id.clone()) {
                return cfg_err(format!("duplicate position {}", p.id));
            }
            if p.area == 0 || p.subarea > 3 {
                return cfg_err(format!("position {} has invalid area/subarea", p.id));
            }
        }
        let areas: BTreeSet<u8> = f.positions.iter().map(|p| p.area).collect();
        let pos_id = |name: &str| -> Result<PosId, EnvError> {
            f.positions
                .iter()
                .position(|p| p.id == name)
                .map(|i| PosId(i as u8))
                .ok_or_else(|| EnvError::Config(format!("unknown position {name}")))
        };

        let mut doors = Vec::new();
        let mut approach_points = Vec::new();
        for d in &f.doors {
            if !seen.insert(d.id.clone()) {
                return cfg_err(format!("duplicate identifier {}", d.id));
            }
            let [a1, a2] = d.connects;
            if a1 == a2 || !areas.contains(&a1) || !areas.contains(&a2) {
                return cfg_err(format!("door {} must connect two distinct existing areas", d.id));
            }
            if !(0.0..=1.0).contains(&d.success_rate) || d.open_cost < 0.0 {
                return cfg_err(format!("door {} has invalid success rate or cost", d.id));
            }
            let sides = [pos_id(&d.approach[0])?, pos_id(&d.approach[1])?];
            for (side, area) in sides.iter().zip([a1, a2]) {
                if f.positions[side.0 as usize].area != area {
                    return cfg_err(format!("approach point of door {} is not in area {area}", d.id));
                }
            }
            doors.push(Door {
                id: d.id.clone(),
                connects: (a1, a2),
                success_rate: d.success_rate,
                open_cost: d.open_cost,
            });
            approach_points.push(sides);
        }
        let mut area_adjacency = Vec::new();
        for &[a, b] in &f.adjacency {
            if a == b || !areas.contains(&a) || !areas.contains(&b) {
                return cfg_err(format!("adjacency ({a},{b}) must join two distinct existing areas"));
            }
            area_adjacency.push((a, b));
        }

        let mut cfg = EnvConfig {
            positions: f.positions.clone(),
            doors,
            area_adjacency,
            approach_points,
            reward_success: f.r_max,
            penalty_failure: -f.r_max,
            step_cost: f.step_cost,
            max_steps: f.max_steps,
            move_cost_matrix: Vec::new(),
            tasks: Vec::new(),
            within_area_cost: f.within_area_cost,
            adjacent_area_cost: f.adjacent_area_cost,
        };
        cfg.move_cost_matrix = cfg.build_move_costs();

        // area graph must be connected
        let mut reached = BTreeSet::from([*areas.iter().next().expect("nonempty")]);
        let mut queue: VecDeque<u8> = reached.iter().copied().collect();
        while let Some(a) = queue.pop_front() {
            for b in cfg.neighbor_areas(a) {
                if reached.insert(b) {
                    queue.push_back(b);
                }
            }
        }
        if reached != areas {
            return cfg_err("area connectivity graph is not connected");
        }

        for t in &f.tasks {
            let task = Task::new(t.name.clone(), pos_id(&t.start)?, pos_id(&t.goal)?)
                .map_err(|e| EnvError::Config(e.to_string()))?;
            cfg.tasks.push(task);
        }
        Ok(cfg)
    }

    fn build_move_costs(&self) -> Vec<Vec<Option<f64>>> {
        let n = self.positions.len();
        let mut m = vec![vec![None; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                if i == j {
                    continue;
                }
                let (ai, aj) = (self.positions[i].area, self.positions[j].area);
                if ai == aj {
                    *cell = Some(self.within_area_cost);
                } else if self.areas_adjacent(ai, aj) {
                    *cell = Some(self.adjacent_area_cost);
                }
            }
        }
        m
    }

    fn neighbor_areas(&self, a: u8) -> Vec<u8> {
        let mut out = Vec::new();
        for d in &self.doors {
            if d.connects.0 == a {
                out.push(d.connects.1);
            } else if d.connects.1 == a {
                out.push(d.connects.0);
            }
        }
        for &(x, y) in &self.area_adjacency {
            if x == a {
                out.push(y);
            } else if y == a {
                out.push(x);
            }
        }
        out
    }

    pub fn areas_adjacent(&self, a: u8, b: u8) -> bool {
        self.area_adjacency.iter().any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b))
    }

    /// Sorted area indices.
    pub fn areas(&self) -> Vec<u8> {
        let set: BTreeSet<u8> = self.positions.iter().map(|p| p.area).collect();
        set.into_iter().collect()
    }

    pub fn position(&self, p: PosId) -> &Position {
        &self.positions[p.0 as usize]
    }

    pub fn door(&self, d: DoorId) -> &Door {
        &self.doors[d.0 as usize]
    }

    pub fn area_of(&self, p: PosId) -> u8 {
        self.position(p).area
    }

    pub fn position_id(&self, name: &str) -> Option<PosId> {
        self.positions.iter().position(|p| p.id == name).map(|i| PosId(i as u8))
    }

    pub fn door_id(&self, name: &str) -> Option<DoorId> {
        self.doors.iter().position(|d| d.id == name).map(|i| DoorId(i as u8))
    }

    pub fn task(&self, name: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.name == name)
    }

    fn door_ids(&self) -> impl Iterator<Item = DoorId> {
        (0..self.doors.len() as u8).map(DoorId)
    }

    /// Approach point of `d` on the side of `area`, if `d` borders it.
    pub fn approach_point(&self, d: DoorId, area: u8) -> Option<PosId> {
        let door = self.door(d);
        let sides = self.approach_points[d.0 as usize];
        if door.connects.0 == area {
            Some(sides[0])
        } else if door.connects.1 == area {
            Some(sides[1])
        } else {
            None
        }
    }

    /// Approach point on the far side of `d` from `p`, if `p` is one of its
    /// approach points.
    pub fn far_side(&self, d: DoorId, p: PosId) -> Option<PosId> {
        let [a, b] = self.approach_points[d.0 as usize];
        if p == a {
            Some(b)
        } else if p == b {
            Some(a)
        } else {
            None
        }
    }

    pub fn mdp_action_name(&self, a: &MdpAction) -> String {
        match a.target() {
            Target::Position(p) => format!("{}({})", a.kind(), self.position(p).id),
            Target::Door(d) => format!("{}({})", a.kind(), self.door(d).id),
        }
    }

    pub fn mdp_state_name(&self, s: &MdpState) -> String {
        let open: Vec<&str> = s.open_doors.iter().map(|d| self.door(d).id.as_str()).collect();
        format!("{}[{}]", self.position(s.position).id, open.join(","))
    }

    /// Actions whose requirements hold at `s`, in a fixed order: `goto` by
    /// position, then `approach`, `opendoor`, `gothrough` by door.
    pub fn applicable_actions(&self, s: &MdpState) -> Vec<MdpAction> {
        let here = s.position;
        let area = self.area_of(here);
        let mut out = Vec::new();
        for (j, cost) in self.move_cost_matrix[here.0 as usize].iter().enumerate() {
            if cost.is_some() {
                out.push(MdpAction::goto(PosId(j as u8)));
            }
        }
        for d in self.door_ids() {
            if self.approach_point(d, area).is_some() {
                out.push(MdpAction::approach(d));
            }
        }
        for d in self.door_ids() {
            if self.approach_point(d, area) == Some(here) {
                out.push(MdpAction::open_door(d));
            }
        }
        for d in self.door_ids() {
            if s.open_doors.contains(d) && self.approach_point(d, area) == Some(here) {
                out.push(MdpAction::go_through(d));
            }
        }
        out
    }

    /// Outcome distribution of `a` at `s` (ignoring the goal and the step
    /// budget): successor, probability, cost, annotation.
    pub fn outcomes(&self, s: &MdpState, a: &MdpAction) -> Vec<(MdpState, f64, f64, &'static str)> {
        let here = s.position;
        let area = self.area_of(here);
        let illegal = vec![(*s, 1.0, self.step_cost, "illegal")];
        match (a.kind(), a.target()) {
            (ActionKind::Goto, Target::Position(p)) => match self.move_cost_matrix[here.0 as usize][p.0 as usize] {
                Some(cost) => vec![(MdpState::at(p), 1.0, cost, "moved")],
                None => illegal,
            },
            (ActionKind::Approach, Target::Door(d)) => match self.approach_point(d, area) {
                Some(p) => vec![(MdpState { position: p, open_doors: s.open_doors }, 1.0, self.step_cost, "approached")],
                None => illegal,
            },
            (ActionKind::OpenDoor, Target::Door(d)) => {
                if self.approach_point(d, area) != Some(here) {
                    return illegal;
                }
                let door = self.door(d);
                let opened = MdpState { position: here, open_doors: s.open_doors.with(d) };
                let p = door.success_rate;
                if opened == *s || p >= 1.0 {
                    vec![(opened, 1.0, door.open_cost, "door_opened")]
                } else if p <= 0.0 {
                    vec![(*s, 1.0, door.open_cost, "door_open_failed")]
                } else {
                    vec![(opened, p, door.open_cost, "door_opened"), (*s, 1.0 - p, door.open_cost, "door_open_failed")]
                }
            }
            (ActionKind::GoThrough, Target::Door(d)) => {
                if !s.open_doors.contains(d) || self.approach_point(d, area) != Some(here) {
                    return illegal;
                }
                let far = self.far_side(d, here).expect("approach point");
                vec![(MdpState::at(far), 1.0, self.step_cost, "went_through")]
            }
            _ => illegal,
        }
    }

    /// Every state reachable from any position with all doors closed, sorted.
    pub fn reachable_states(&self) -> Vec<MdpState> {
        let mut seen: BTreeSet<MdpState> = (0..self.positions.len() as u8).map(|p| MdpState::at(PosId(p))).collect();
        let mut queue: VecDeque<MdpState> = seen.iter().copied().collect();
        while let Some(s) = queue.pop_front() {
            for a in self.applicable_actions(&s) {
                for (next, _, _, _) in self.outcomes(&s, &a) {
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Largest single-step cost in the domain.
    pub fn max_step_cost(&self) -> f64 {
        let moves = self.move_cost_matrix.iter().flatten().flatten().copied();
        let doors = self.doors.iter().map(|d| d.open_cost);
        moves.chain(doors).fold(self.step_cost, f64::max)
    }

    /// Action-language source describing this environment for the planner.
    pub fn domain_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# generated from the environment configuration\n");
        out.push_str("types: position door area\n");
        let names: Vec<&str> = self.positions.iter().map(|p| p.id.as_str()).collect();
        out.push_str(&format!("objects: position {}\n", names.join(" ")));
        let names: Vec<&str> = self.doors.iter().map(|d| d.id.as_str()).collect();
        if !names.is_empty() {
            out.push_str(&format!("objects: door {}\n", names.join(" ")));
        }
        let areas: Vec<String> = self.areas().iter().map(|a| format!("A{a}")).collect();
        out.push_str(&format!("objects: area {}\n", areas.join(" ")));
        out.push_str(
            "predicates: at(position) open(door) in(position,area) acc(area,door,area) \
             adj(area,area) side(door,area,position)\n",
        );
        for p in &self.positions {
            out.push_str(&format!("statics: in({},A{})\n", p.id, p.area));
        }
        for (i, d) in self.doors.iter().enumerate() {
            let (a, b) = d.connects;
            let [pa, pb] = self.approach_points[i];
            out.push_str(&format!(
                "statics: acc(A{a},{id},A{b}) acc(A{b},{id},A{a}) side({id},A{a},{}) side({id},A{b},{})\n",
                self.position(pa).id,
                self.position(pb).id,
                id = d.id
            ));
        }
        for &(a, b) in &self.area_adjacency {
            out.push_str(&format!("statics: adj(A{a},A{b}) adj(A{b},A{a})\n"));
        }
        out.push_str(NAV_SCHEMAS);
        out
    }
}

/// The four navigation operators.
pub const NAV_SCHEMAS: &str = "\
action: goto(P:position)
  pre: at(Q), in(Q,AR), in(P,AR), neq(Q,P) | at(Q), in(Q,R1), in(P,R2), adj(R1,R2)
  add: at(P)
  del: at(Q), open(_)
action: approach(D:door)
  pre: at(Q), in(Q,AR), side(D,AR,X)
  add: at(X)
  del: at(Q)
action: opendoor(D:door)
  pre: at(X), side(D,AR,X)
  add: open(D)
  del:
action: gothrough(D:door)
  pre: at(X), open(D), side(D,R1,X), acc(R1,D,R2), side(D,R2,Y)
  add: at(Y)
  del: at(X), open(_)
";

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: MdpState,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub info: &'static str,
}

/// Seed of the environment stream for `episode` of a run seeded `seed`.
pub fn episode_seed(seed: u64, episode: u64) -> (u64, u64) {
    (seed, 0x656e_7600_0000_0000 | episode)
}

/// One episode at a time over a shared configuration.
#[derive(Debug, Clone)]
pub struct NavEnv {
    config: Arc<EnvConfig>,
    task: Option<Task>,
    state: MdpState,
    steps: u32,
    done: bool,
    total_steps: u64,
    rng: SimRng,
}

impl NavEnv {
    pub fn new(config: Arc<EnvConfig>) -> Self {
        NavEnv {
            config,
            task: None,
            state: MdpState::at(PosId(0)),
            steps: 0,
            done: true,
            total_steps: 0,
            rng: seeded_rng(0, 0),
        }
    }

    pub fn config(&self) -> &Arc<EnvConfig> {
        &self.config
    }

    /// Begin an episode. The door-outcome stream depends only on
    /// `(seed, episode)`.
    pub fn reset(&mut self, task: &Task, seed: u64, episode: u64) -> Result<MdpState, EnvError> {
        let n = self.config.positions.len();
        if task.start.0 as usize >= n || task.goal.0 as usize >= n {
            return cfg_err(format!("task {} references an unknown position", task.name));
        }
        if task.start == task.goal {
            return cfg_err(format!("task {}: start equals goal", task.name));
        }
        let (s, stream) = episode_seed(seed, episode);
        self.rng = seeded_rng(s, stream);
        self.task = Some(task.clone());
        self.state = task.initial_state();
        self.steps = 0;
        self.done = false;
        Ok(self.state)
    }

    pub fn state(&self) -> MdpState {
        self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Steps taken across every episode on this instance.
    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn applicable_actions(&self) -> Vec<MdpAction> {
        self.config.applicable_actions(&self.state)
    }

    pub fn step(&mut self, action: MdpAction) -> Result<StepOutcome, EnvError> {
        let task = self.task.as_ref().ok_or(EnvError::NotReset)?;
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let outcomes = self.config.outcomes(&self.state, &action);
        let (next, cost, info) = if outcomes.len() == 1 {
            (outcomes[0].0, outcomes[0].2, outcomes[0].3)
        } else {
            let u: f64 = self.rng.gen();
            let mut acc = 0.0;
            let mut pick = outcomes.last().expect("nonempty");
            for o in &outcomes {
                acc += o.1;
                if u < acc {
                    pick = o;
                    break;
                }
            }
            (pick.0, pick.2, pick.3)
        };
        self.steps += 1;
        self.total_steps += 1;
        self.state = next;
        let mut reward = -cost;
        let success = task.is_goal(&next);
        if success {
            reward += self.config.reward_success;
        } else if self.steps >= self.config.max_steps {
            reward += self.config.penalty_failure;
        }
        self.done = success || self.steps >= self.config.max_steps;
        Ok(StepOutcome { next_state: next, reward, done: self.done, success, info })
    }
}

/// Exact transition and reward model of a configuration for a fixed goal.
///
/// Rewards are the expected step reward including the success bonus; the
/// step-budget penalty is time-dependent and therefore excluded.
#[derive(Debug, Clone)]
pub struct GroundTruth<'a> {
    config: &'a EnvConfig,
    goal: Option<PosId>,
    states: Vec<MdpState>,
}

pub fn ground_truth_model(config: &EnvConfig, goal: Option<PosId>) -> GroundTruth<'_> {
    GroundTruth { config, goal, states: config.reachable_states() }
}

impl GroundTruth<'_> {
    pub fn distribution(&self, s: &MdpState, a: &MdpAction) -> BTreeMap<MdpState, f64> {
        let mut out = BTreeMap::new();
        for (next, p, _, _) in self.config.outcomes(s, a) {
            *out.entry(next).or_insert(0.0) += p;
        }
        out
    }
}

impl TabularMdp for GroundTruth<'_> {
    fn states(&self) -> &[MdpState] {
        &self.states
    }

    fn actions(&self, s: &MdpState) -> Vec<MdpAction> {
        self.config.applicable_actions(s)
    }

    fn is_terminal(&self, s: &MdpState) -> bool {
        self.goal == Some(s.position)
    }

    fn transitions(&self, s: &MdpState, a: &MdpAction) -> Vec<(MdpState, f64)> {
        self.distribution(s, a).into_iter().collect()
    }

    fn reward(&self, s: &MdpState, a: &MdpAction) -> f64 {
        self.config
            .outcomes(s, a)
            .iter()
            .map(|(next, p, cost, _)| {
                let bonus = if self.goal == Some(next.position) { self.config.reward_success } else { 0.0 };
                p * (bonus - cost)
            })
            .sum()
    }
}

/// Areas on no optimal route for the four fixture tasks of the office
/// domain, identified by their start and goal positions. Other tasks get an
/// empty set.
pub fn irrelevant_areas(config: &EnvConfig, task: &Task) -> BTreeSet<u8> {
    let name = |p: PosId| config.position(p).id.as_str();
    let labels: &[u8] = match (name(task.start), name(task.goal)) {
        ("P1", "P3") => &[1, 2, 3],
        ("P1", "P4") => &[1, 2, 3, 6],
        ("P2", "P3") => &[4, 5, 7],
        ("P2", "P4") => &[2, 5],
        _ => {
            log::warn!("no irrelevance labels for task {}", task.name);
            &[]
        }
    };
    labels.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DoorSet;

    fn env() -> (Arc<EnvConfig>, NavEnv) {
        let cfg = Arc::new(EnvConfig::office7());
        (cfg.clone(), NavEnv::new(cfg))
    }

    fn pos(cfg: &EnvConfig, name: &str) -> PosId {
        cfg.position_id(name).unwrap()
    }

    fn door(cfg: &EnvConfig, name: &str) -> DoorId {
        cfg.door_id(name).unwrap()
    }

    #[test]
    fn fixture_shape() {
        let cfg = EnvConfig::office7();
        assert_eq!(cfg.positions.len(), 19);
        assert_eq!(cfg.doors.len(), 6);
        assert_eq!(cfg.areas(), vec![1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(cfg.tasks.len(), 5);
        assert_eq!(cfg.door(door(&cfg, "D3")).success_rate, 0.98);
    }

    #[test]
    fn reset_task_a() {
        let (cfg, mut env) = env();
        let task = cfg.task("A").unwrap().clone();
        let s = env.reset(&task, 1, 0).unwrap();
        assert_eq!(s, MdpState::at(pos(&cfg, "P1")));
    }

    #[test]
    fn reset_rejects_degenerate_task() {
        let (cfg, mut env) = env();
        let p = pos(&cfg, "P1");
        let task = Task { name: "bad".into(), start: p, goal: p };
        assert!(matches!(env.reset(&task, 1, 0), Err(EnvError::Config(_))));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (cfg, mut env) = env();
        let task = cfg.task("C").unwrap().clone();
        let d0 = door(&cfg, "D0");
        let script = [MdpAction::approach(d0), MdpAction::open_door(d0), MdpAction::open_door(d0), MdpAction::open_door(d0)];
        let run = |env: &mut NavEnv| {
            env.reset(&task, 42, 7).unwrap();
            script.iter().map(|a| env.step(*a).unwrap()).collect::<Vec<_>>()
        };
        let first = run(&mut env);
        assert_eq!(first, run(&mut env));
    }

    #[test]
    fn opendoor_d3_success_rate() {
        let (cfg, mut env) = env();
        let d3 = door(&cfg, "D3");
        let at_d3 = cfg.approach_point(d3, 2).unwrap();
        let task = Task::new("probe", at_d3, pos(&cfg, "P3")).unwrap();
        let mut ok = 0;
        for e in 0..10_000 {
            env.reset(&task, 9, e).unwrap();
            if env.step(MdpAction::open_door(d3)).unwrap().info == "door_opened" {
                ok += 1;
            }
        }
        assert!((9680..=9920).contains(&ok), "opened {ok} times");
    }

    #[test]
    fn gothrough_closed_door_is_illegal() {
        let (cfg, mut env) = env();
        let task = cfg.task("C").unwrap().clone();
        env.reset(&task, 1, 0).unwrap();
        let d0 = door(&cfg, "D0");
        env.step(MdpAction::approach(d0)).unwrap();
        let before = env.state();
        let out = env.step(MdpAction::go_through(d0)).unwrap();
        assert_eq!(out.next_state, before);
        assert_eq!(out.reward, -cfg.step_cost);
        assert_eq!(out.info, "illegal");
    }

    #[test]
    fn reaching_goal_pays_r_max() {
        let (cfg, mut env) = env();
        let task = cfg.task("A").unwrap().clone();
        env.reset(&task, 1, 0).unwrap();
        // P1 (area 4) -> area 7 -> P3 (area 6) through the door-free corridor
        let p19 = pos(&cfg, "P19");
        let out = env.step(MdpAction::goto(p19)).unwrap();
        assert!(!out.done);
        let out = env.step(MdpAction::goto(pos(&cfg, "P3"))).unwrap();
        assert!(out.done && out.success);
        assert_eq!(out.reward, 20.0 - 2.0);
    }

    #[test]
    fn step_budget_ends_with_penalty() {
        let (cfg, mut env) = env();
        let task = cfg.task("A").unwrap().clone();
        env.reset(&task, 1, 0).unwrap();
        let p5 = pos(&cfg, "P5");
        let p1 = pos(&cfg, "P1");
        let mut last = None;
        for i in 0..20 {
            let target = if i % 2 == 0 { p5 } else { p1 };
            last = Some(env.step(MdpAction::goto(target)).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && !last.success);
        assert_eq!(last.reward, -1.0 - 20.0);
        assert!(matches!(env.step(MdpAction::goto(p5)), Err(EnvError::EpisodeDone)));
    }

    #[test]
    fn ground_truth_point_masses_and_door_mass() {
        let cfg = EnvConfig::office7();
        let gt = ground_truth_model(&cfg, None);
        let s = MdpState::at(pos(&cfg, "P2"));
        let a = MdpAction::goto(pos(&cfg, "P6"));
        assert_eq!(gt.transitions(&s, &a), vec![(MdpState::at(pos(&cfg, "P6")), 1.0)]);
        assert_eq!(gt.reward(&s, &a), -1.0);

        let d2 = door(&cfg, "D2");
        let at = cfg.approach_point(d2, 3).unwrap();
        let s = MdpState::at(at);
        let dist = gt.distribution(&s, &MdpAction::open_door(d2));
        let opened = MdpState { position: at, open_doors: DoorSet::EMPTY.with(d2) };
        assert_eq!(dist[&opened], cfg.door(d2).success_rate);
    }

    #[test]
    fn open_doors_stay_adjacent() {
        let cfg = EnvConfig::office7();
        for s in cfg.reachable_states() {
            let area = cfg.area_of(s.position);
            for d in s.open_doors.iter() {
                let (a, b) = cfg.door(d).connects;
                assert!(a == area || b == area, "{}", cfg.mdp_state_name(&s));
            }
        }
    }

    #[test]
    fn irrelevance_labels() {
        let cfg = EnvConfig::office7();
        assert_eq!(irrelevant_areas(&cfg, cfg.task("A").unwrap()), BTreeSet::from([1, 2, 3]));
        assert_eq!(irrelevant_areas(&cfg, cfg.task("D").unwrap()), BTreeSet::from([2, 5]));
        assert!(irrelevant_areas(&cfg, cfg.task("E").unwrap()).is_empty());
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad_rate = OFFICE7_ENV.replacen("success_rate = 0.98", "success_rate = 1.5", 1);
        assert!(EnvConfig::from_toml(&bad_rate).is_err());
        let bad_version = OFFICE7_ENV.replacen("format_version = 1", "format_version = 9", 1);
        assert!(EnvConfig::from_toml(&bad_version).is_err());
    }
}
