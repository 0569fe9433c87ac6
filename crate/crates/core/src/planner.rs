//! Enumeration of every shortest plan between symbolic states, and the
//! mapping between planner states/actions and learner states/actions.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::action_lang::{apply, ground_actions, DomainSpec, Fluent, GroundAction, SymbolicState};
use crate::domain::{ActionKind, DoorSet, MdpAction, MdpState, Target};
use crate::nav_env::EnvConfig;

pub const DEFAULT_HORIZON: usize = 20;
pub const DEFAULT_CAP: usize = 100;

/// Goal condition: the robot is at a given position. Door fluents are
/// unconstrained.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Goal {
    pub position: String,
}

impl Goal {
    pub fn at(position: impl Into<String>) -> Self {
        Goal { position: position.into() }
    }

    pub fn satisfied(&self, s: &SymbolicState) -> bool {
        s.fluents
            .iter()
            .any(|f| f.predicate == "at" && f.args.len() == 1 && f.args[0] == self.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub state: SymbolicState,
    pub action: Arc<GroundAction>,
}

/// Action sequence from a start state to a goal-satisfying terminal state.
/// A plan from a state that already satisfies the goal has no steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub terminal: SymbolicState,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// States visited, start through terminal.
    pub fn states(&self) -> impl Iterator<Item = &SymbolicState> {
        self.steps.iter().map(|s| &s.state).chain(std::iter::once(&self.terminal))
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<String> = self.steps.iter().map(|s| s.action.to_string()).collect();
        f.write_str(&tokens.join(" "))
    }
}

/// All minimal-length plans, in lexicographic action order. Empty when the
/// goal is out of reach within the horizon.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlanSet {
    pub plans: Vec<Plan>,
    pub length: usize,
    /// Set when more than `cap` minimal plans existed.
    pub truncated: bool,
}

impl PlanSet {
    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }
}

/// Grounded domain ready for search.
#[derive(Debug, Clone)]
pub struct Planner {
    spec: Arc<DomainSpec>,
    actions: Vec<Arc<GroundAction>>,
}

struct Layers {
    states: Vec<SymbolicState>,
    depth: Vec<usize>,
    /// Outgoing edges (action index, successor index) per state, in action order.
    edges: Vec<Vec<(usize, usize)>>,
    goal_depth: Option<usize>,
}

impl Planner {
    pub fn new(spec: DomainSpec) -> Self {
        let actions = ground_actions(&spec).into_iter().map(Arc::new).collect();
        Planner { spec: Arc::new(spec), actions }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn actions(&self) -> &[Arc<GroundAction>] {
        &self.actions
    }

    pub fn find_action(&self, name: &str, args: &[&str]) -> Option<&Arc<GroundAction>> {
        self.actions
            .iter()
            .find(|a| a.name == name && a.args.len() == args.len() && a.args.iter().zip(args).all(|(x, y)| x == y))
    }

    /// Applicable actions at `s` with their successors, in action order.
    pub fn successors(&self, s: &SymbolicState) -> Vec<(usize, SymbolicState)> {
        self.actions
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.applicable_variant(s).map(|v| (i, v.apply(s))))
            .collect()
    }

    fn layers(&self, s0: &SymbolicState, goal: &Goal, horizon: usize) -> Layers {
        let mut index: HashMap<SymbolicState, usize> = HashMap::new();
        let mut l = Layers { states: vec![s0.clone()], depth: vec![0], edges: vec![Vec::new()], goal_depth: None };
        index.insert(s0.clone(), 0);
        if goal.satisfied(s0) {
            l.goal_depth = Some(0);
            return l;
        }
        let mut frontier = vec![0usize];
        for d in 0..horizon {
            let mut next_frontier = Vec::new();
            for &si in &frontier {
                let succ = self.successors(&l.states[si]);
                for (ai, t) in succ {
                    let ti = match index.get(&t) {
                        Some(&ti) => ti,
                        None => {
                            let ti = l.states.len();
                            index.insert(t.clone(), ti);
                            l.states.push(t);
                            l.depth.push(d + 1);
                            l.edges.push(Vec::new());
                            next_frontier.push(ti);
                            ti
                        }
                    };
                    if l.depth[ti] == d + 1 {
                        l.edges[si].push((ai, ti));
                    }
                }
            }
            if next_frontier.iter().any(|&t| goal.satisfied(&l.states[t])) {
                l.goal_depth = Some(d + 1);
                break;
            }
            if next_frontier.is_empty() {
                break;
            }
            frontier = next_frontier;
        }
        l
    }

    /// Length of a shortest plan from `s0`, if one exists within `horizon`.
    pub fn shortest_length(&self, s0: &SymbolicState, goal: &Goal, horizon: usize) -> Option<usize> {
        self.layers(s0, goal, horizon).goal_depth
    }

    /// Every plan of minimal length `L <= horizon` from `s0`, at most `cap`
    /// of them (the lexicographically first by action order).
    pub fn enumerate_shortest_plans(&self, s0: &SymbolicState, goal: &Goal, horizon: usize, cap: usize) -> PlanSet {
        let l = self.layers(s0, goal, horizon);
        let Some(length) = l.goal_depth else {
            return PlanSet::default();
        };
        if length == 0 {
            return PlanSet { plans: vec![Plan { steps: Vec::new(), terminal: s0.clone() }], length: 0, truncated: false };
        }

        // states from which a goal state in the final layer is reachable
        let n = l.states.len();
        let mut useful = vec![false; n];
        let mut order: Vec<usize> = (0..n).filter(|&i| l.depth[i] <= length).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(l.depth[i]));
        for i in order {
            useful[i] = if l.depth[i] == length {
                goal.satisfied(&l.states[i])
            } else {
                l.edges[i].iter().any(|&(_, t)| useful[t])
            };
        }

        let mut plans = Vec::new();
        let mut truncated = false;
        let mut path: Vec<(usize, usize)> = Vec::new();
        self.collect(&l, &useful, 0, length, cap, &mut path, &mut plans, &mut truncated);
        if truncated {
            log::debug!("plan set truncated to {cap} plans of length {length}");
        }
        let set = PlanSet { plans, length, truncated };
        assert!(validate(&set, s0, goal), "planner produced an invalid plan");
        set
    }

    #[allow(clippy::too_many_arguments)]
    fn collect(
        &self,
        l: &Layers,
        useful: &[bool],
        si: usize,
        length: usize,
        cap: usize,
        path: &mut Vec<(usize, usize)>,
        plans: &mut Vec<Plan>,
        truncated: &mut bool,
    ) {
        if l.depth[si] == length {
            if plans.len() == cap {
                *truncated = true;
                return;
            }
            let mut steps = Vec::with_capacity(path.len());
            let mut from = 0;
            for &(ai, ti) in path.iter() {
                steps.push(PlanStep { state: l.states[from].clone(), action: self.actions[ai].clone() });
                from = ti;
            }
            plans.push(Plan { steps, terminal: l.states[si].clone() });
            return;
        }
        for &(ai, ti) in &l.edges[si] {
            if *truncated {
                return;
            }
            if useful[ti] {
                path.push((ai, ti));
                self.collect(l, useful, ti, length, cap, path, plans, truncated);
                path.pop();
            }
        }
    }

    /// Plans from an arbitrary current state.
    pub fn replan(&self, current: &SymbolicState, goal: &Goal, horizon: usize, cap: usize) -> PlanSet {
        self.enumerate_shortest_plans(current, goal, horizon, cap)
    }
}

/// Chained application reaches the goal for every plan, all plans share the
/// set's length, and every plan starts at `s0`.
pub fn validate(set: &PlanSet, s0: &SymbolicState, goal: &Goal) -> bool {
    set.plans.iter().all(|p| {
        if p.len() != set.length {
            return false;
        }
        let mut s = s0.clone();
        for step in &p.steps {
            if step.state != s {
                return false;
            }
            match apply(&s, &step.action) {
                Ok(next) => s = next,
                Err(_) => return false,
            }
        }
        s == p.terminal && goal.satisfied(&s)
    })
}

/// Memoized plan sets keyed by (state, goal).
#[derive(Debug, Default)]
pub struct PlanCache {
    map: HashMap<(SymbolicState, Goal), Arc<PlanSet>>,
}

impl PlanCache {
    pub fn get_or_plan(
        &mut self,
        planner: &Planner,
        s: &SymbolicState,
        goal: &Goal,
        horizon: usize,
        cap: usize,
    ) -> Arc<PlanSet> {
        self.map
            .entry((s.clone(), goal.clone()))
            .or_insert_with(|| Arc::new(planner.replan(s, goal, horizon, cap)))
            .clone()
    }
}

// ---------------------------------------------------------------------------
// Mapping between planner and learner spaces

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("fluent {0} is outside the navigation vocabulary")]
    UnknownFluent(String),
    #[error("symbolic state must contain exactly one at/1 fluent, found {0}")]
    AtCount(usize),
    #[error("action {0} is outside the navigation vocabulary")]
    UnknownAction(String),
}

/// `O`: learner state to planner state.
pub fn map_to_symbolic(cfg: &EnvConfig, s: &MdpState) -> SymbolicState {
    let mut fluents = vec![Fluent::new("at", &[&cfg.position(s.position).id])];
    fluents.extend(s.open_doors.iter().map(|d| Fluent::new("open", &[&cfg.door(d).id])));
    SymbolicState::new(fluents)
}

/// `O^-1` on states.
pub fn state_from_symbolic(cfg: &EnvConfig, s: &SymbolicState) -> Result<MdpState, MapError> {
    let mut position = None;
    let mut at_count = 0;
    let mut open = DoorSet::EMPTY;
    for f in &s.fluents {
        match (f.predicate.as_str(), f.args.as_slice()) {
            ("at", [p]) => {
                at_count += 1;
                position = Some(cfg.position_id(p).ok_or_else(|| MapError::UnknownFluent(f.to_string()))?);
            }
            ("open", [d]) => {
                open = open.with(cfg.door_id(d).ok_or_else(|| MapError::UnknownFluent(f.to_string()))?);
            }
            _ => return Err(MapError::UnknownFluent(f.to_string())),
        }
    }
    match (at_count, position) {
        (1, Some(p)) => Ok(MdpState { position: p, open_doors: open }),
        _ => Err(MapError::AtCount(at_count)),
    }
}

/// `O^-1` on actions.
pub fn action_from_symbolic(cfg: &EnvConfig, a: &GroundAction) -> Result<MdpAction, MapError> {
    let bad = || MapError::UnknownAction(a.to_string());
    let kind = ActionKind::from_name(&a.name).ok_or_else(bad)?;
    let [arg] = a.args.as_slice() else {
        return Err(bad());
    };
    match kind {
        ActionKind::Goto => Ok(MdpAction::goto(cfg.position_id(arg).ok_or_else(bad)?)),
        k => MdpAction::door(k, cfg.door_id(arg).ok_or_else(bad)?).ok_or_else(bad),
    }
}

/// `O^-1` on a state-action pair.
pub fn map_from_symbolic(
    cfg: &EnvConfig,
    s: &SymbolicState,
    a: &GroundAction,
) -> Result<(MdpState, MdpAction), MapError> {
    Ok((state_from_symbolic(cfg, s)?, action_from_symbolic(cfg, a)?))
}

/// Name and argument of the planner action for a learner action.
pub fn action_to_symbolic(cfg: &EnvConfig, a: &MdpAction) -> (String, String) {
    let arg = match a.target() {
        Target::Position(p) => cfg.position(p).id.clone(),
        Target::Door(d) => cfg.door(d).id.clone(),
    };
    (a.kind().name().to_string(), arg)
}

/// Learner-side state-action pairs of every step of every plan.
pub fn plan_pairs(cfg: &EnvConfig, set: &PlanSet) -> Result<Vec<Vec<(MdpState, MdpAction)>>, MapError> {
    set.plans
        .iter()
        .map(|p| p.steps.iter().map(|st| map_from_symbolic(cfg, &st.state, &st.action)).collect())
        .collect()
}

/// Sequence of areas a plan passes through, consecutive repeats collapsed.
pub fn area_route(cfg: &EnvConfig, plan: &Plan) -> Vec<u8> {
    let mut route: Vec<u8> = Vec::new();
    for s in plan.states() {
        if let Ok(ms) = state_from_symbolic(cfg, s) {
            let area = cfg.area_of(ms.position);
            if route.last() != Some(&area) {
                route.push(area);
            }
        }
    }
    route
}

/// Planner for an environment configuration's generated domain.
pub fn planner_for(cfg: &EnvConfig) -> Planner {
    let text = cfg.domain_text();
    Planner::new(crate::action_lang::parse_domain(&text).expect("generated domain is valid"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DoorId, PosId};

    fn setup() -> (EnvConfig, Planner) {
        let cfg = EnvConfig::office7();
        let planner = planner_for(&cfg);
        (cfg, planner)
    }

    #[test]
    fn start_at_goal_gives_empty_plan() {
        let (cfg, planner) = setup();
        let s = map_to_symbolic(&cfg, &MdpState::at(cfg.position_id("P3").unwrap()));
        let set = planner.enumerate_shortest_plans(&s, &Goal::at("P3"), 20, 100);
        assert_eq!(set.len(), 1);
        assert_eq!(set.length, 0);
        assert!(set.plans[0].is_empty());
    }

    #[test]
    fn horizon_too_short_is_empty() {
        let (cfg, planner) = setup();
        let s = map_to_symbolic(&cfg, &MdpState::at(cfg.position_id("P2").unwrap()));
        let set = planner.enumerate_shortest_plans(&s, &Goal::at("P3"), 6, 100);
        assert!(set.is_empty());
    }

    #[test]
    fn cap_truncates_deterministically() {
        let (cfg, planner) = setup();
        let s = map_to_symbolic(&cfg, &MdpState::at(cfg.position_id("P2").unwrap()));
        let full = planner.enumerate_shortest_plans(&s, &Goal::at("P3"), 20, 1000);
        let two = planner.enumerate_shortest_plans(&s, &Goal::at("P3"), 20, 2);
        assert!(two.truncated);
        assert_eq!(two.plans, full.plans[..2].to_vec());
    }

    #[test]
    fn mapping_round_trips() {
        let cfg = EnvConfig::office7();
        let p1 = cfg.position_id("P1").unwrap();
        assert_eq!(map_to_symbolic(&cfg, &MdpState::at(p1)), SymbolicState::new([Fluent::new("at", &["P1"])]));

        let s = MdpState { position: cfg.position_id("P2").unwrap(), open_doors: DoorSet::EMPTY.with(DoorId(0)) };
        let sym = map_to_symbolic(&cfg, &s);
        assert_eq!(sym, SymbolicState::new([Fluent::new("at", &["P2"]), Fluent::new("open", &["D0"])]));
        assert_eq!(state_from_symbolic(&cfg, &sym).unwrap(), s);

        for s in cfg.reachable_states() {
            assert_eq!(state_from_symbolic(&cfg, &map_to_symbolic(&cfg, &s)).unwrap(), s);
        }
    }

    #[test]
    fn action_mapping() {
        let (cfg, planner) = setup();
        let a = planner.find_action("gothrough", &["D2"]).unwrap();
        assert_eq!(action_from_symbolic(&cfg, a).unwrap(), MdpAction::go_through(cfg.door_id("D2").unwrap()));
        let g = planner.find_action("goto", &["P4"]).unwrap();
        assert_eq!(action_from_symbolic(&cfg, g).unwrap(), MdpAction::goto(PosId(3)));
    }

    #[test]
    fn foreign_fluents_are_rejected() {
        let cfg = EnvConfig::office7();
        let s = SymbolicState::new([Fluent::new("at", &["P1"]), Fluent::new("holding", &["X"])]);
        assert!(matches!(state_from_symbolic(&cfg, &s), Err(MapError::UnknownFluent(_))));
        let s = SymbolicState::new([Fluent::new("open", &["D1"])]);
        assert_eq!(state_from_symbolic(&cfg, &s), Err(MapError::AtCount(0)));
    }

    #[test]
    fn planner_and_env_agree_on_applicability() {
        let (cfg, planner) = setup();
        for s in cfg.reachable_states() {
            let sym = map_to_symbolic(&cfg, &s);
            let mut from_planner: Vec<MdpAction> = planner
                .successors(&sym)
                .into_iter()
                .map(|(i, _)| action_from_symbolic(&cfg, &planner.actions()[i]).unwrap())
                .collect();
            let mut from_env = cfg.applicable_actions(&s);
            from_planner.sort();
            from_env.sort();
            assert_eq!(from_planner, from_env, "at {}", cfg.mdp_state_name(&s));

            // successors agree with the successful outcome of each action
            for (i, next) in planner.successors(&sym) {
                let a = action_from_symbolic(&cfg, &planner.actions()[i]).unwrap();
                let outs = cfg.outcomes(&s, &a);
                let expected = map_to_symbolic(&cfg, &outs[0].0);
                assert_eq!(next, expected, "{} at {}", planner.actions()[i], cfg.mdp_state_name(&s));
            }
        }
    }

    #[test]
    fn replan_from_goal() {
        let (cfg, planner) = setup();
        let s = map_to_symbolic(&cfg, &MdpState::at(cfg.position_id("P4").unwrap()));
        let set = planner.replan(&s, &Goal::at("P4"), 20, 100);
        assert_eq!(set.length, 0);
    }

    #[test]
    fn plan_cache_returns_same_set() {
        let (cfg, planner) = setup();
        let mut cache = PlanCache::default();
        let s = map_to_symbolic(&cfg, &MdpState::at(cfg.position_id("P2").unwrap()));
        let a = cache.get_or_plan(&planner, &s, &Goal::at("P4"), 20, 100);
        let b = cache.get_or_plan(&planner, &s, &Goal::at("P4"), 20, 100);
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, planner.replan(&s, &Goal::at("P4"), 20, 100));
    }
}
