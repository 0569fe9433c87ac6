//! Learner-side vocabulary shared by the environment, the planner mapping and
//! every agent: positions, doors, states, actions, tasks, the Q-table and the
//! learned world model.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Portable seeded generator used everywhere randomness is needed.
///
/// ChaCha8 with `seed_from_u64` expansion: the stream depends only on the
/// 64-bit seed, never on the platform.
pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `stream` of `seed`. Distinct streams of one seed are
/// statistically independent.
pub fn seeded_rng(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(mix_seed(seed ^ mix_seed(stream)))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("no applicable actions")]
    NoApplicableActions,
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

/// Index of a position in its environment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PosId(pub u8);

/// Index of a door in its environment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DoorId(pub u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub id: String,
    /// Area index, 1..=7 in the office domain.
    pub area: u8,
    /// Subarea index 0..=3 within the area.
    pub subarea: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub id: String,
    pub connects: (u8, u8),
    pub success_rate: f64,
    pub open_cost: f64,
}

/// Set of open doors as a bitmask over door indices (at most 32 doors).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DoorSet(u32);

impl DoorSet {
    pub const EMPTY: DoorSet = DoorSet(0);

    pub fn contains(self, d: DoorId) -> bool {
        self.0 & (1 << d.0) != 0
    }

    pub fn with(self, d: DoorId) -> DoorSet {
        DoorSet(self.0 | (1 << d.0))
    }

    pub fn without(self, d: DoorId) -> DoorSet {
        DoorSet(self.0 & !(1 << d.0))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = DoorId> {
        (0..32u8).filter(move |i| self.0 & (1 << i) != 0).map(DoorId)
    }
}

impl FromIterator<DoorId> for DoorSet {
    fn from_iter<I: IntoIterator<Item = DoorId>>(iter: I) -> Self {
        iter.into_iter().fold(DoorSet::EMPTY, DoorSet::with)
    }
}

/// Grounded learner state: where the robot is and which nearby doors are open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MdpState {
    pub position: PosId,
    pub open_doors: DoorSet,
}

impl MdpState {
    pub fn at(position: PosId) -> Self {
        MdpState { position, open_doors: DoorSet::EMPTY }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Goto,
    Approach,
    OpenDoor,
    GoThrough,
}

impl ActionKind {
    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Goto => "goto",
            ActionKind::Approach => "approach",
            ActionKind::OpenDoor => "opendoor",
            ActionKind::GoThrough => "gothrough",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "goto" => Some(ActionKind::Goto),
            "approach" => Some(ActionKind::Approach),
            "opendoor" => Some(ActionKind::OpenDoor),
            "gothrough" => Some(ActionKind::GoThrough),
            _ => None,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Target of an action: a position for `goto`, a door for everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Position(PosId),
    Door(DoorId),
}

/// Parameterized learner action. Construct through [`MdpAction::goto`] or
/// [`MdpAction::door`] so the target kind always matches the action kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MdpAction {
    kind: ActionKind,
    target: Target,
}

impl MdpAction {
    pub fn goto(p: PosId) -> Self {
        MdpAction { kind: ActionKind::Goto, target: Target::Position(p) }
    }

    pub fn approach(d: DoorId) -> Self {
        MdpAction { kind: ActionKind::Approach, target: Target::Door(d) }
    }

    pub fn open_door(d: DoorId) -> Self {
        MdpAction { kind: ActionKind::OpenDoor, target: Target::Door(d) }
    }

    pub fn go_through(d: DoorId) -> Self {
        MdpAction { kind: ActionKind::GoThrough, target: Target::Door(d) }
    }

    /// Door action of `kind`; `None` for `goto`.
    pub fn door(kind: ActionKind, d: DoorId) -> Option<Self> {
        match kind {
            ActionKind::Goto => None,
            _ => Some(MdpAction { kind, target: Target::Door(d) }),
        }
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn target(&self) -> Target {
        self.target
    }
}

/// A navigation task: reach `goal` from `start`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Task {
    pub name: String,
    pub start: PosId,
    pub goal: PosId,
}

impl Task {
    pub fn new(name: impl Into<String>, start: PosId, goal: PosId) -> Result<Self, DomainError> {
        let name = name.into();
        if start == goal {
            return Err(DomainError::InvalidTask(format!("task {name}: start equals goal")));
        }
        Ok(Task { name, start, goal })
    }

    pub fn initial_state(&self) -> MdpState {
        MdpState::at(self.start)
    }

    pub fn is_goal(&self, s: &MdpState) -> bool {
        s.position == self.goal
    }
}

/// Tabular action values. Unseen pairs read as `0.0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QTable {
    values: HashMap<(MdpState, MdpAction), f64>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, s: &MdpState, a: &MdpAction) -> f64 {
        self.values.get(&(*s, *a)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, s: MdpState, a: MdpAction, v: f64) {
        self.values.insert((s, a), v);
    }

    /// `max_a Q(s, a)` over `candidates`; `0.0` when there are none.
    pub fn max_value(&self, s: &MdpState, candidates: &[MdpAction]) -> f64 {
        candidates
            .iter()
            .map(|a| self.get(s, a))
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Candidate with maximal Q-value; ties go to the earliest candidate.
pub fn argmax_action(
    q: &QTable,
    s: &MdpState,
    candidates: &[MdpAction],
) -> Result<MdpAction, DomainError> {
    let mut best: Option<(MdpAction, f64)> = None;
    for a in candidates {
        let v = q.get(s, a);
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((*a, v)),
        }
    }
    best.map(|(a, _)| a).ok_or(DomainError::NoApplicableActions)
}

/// Explore with probability `epsilon`, otherwise act greedily.
///
/// Always consumes one draw for the explore decision and one more when
/// exploring, so agents sharing a seed stay in lockstep.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q: &QTable,
    s: &MdpState,
    candidates: &[MdpAction],
    epsilon: f64,
    rng: &mut R,
) -> Result<MdpAction, DomainError> {
    if candidates.is_empty() {
        return Err(DomainError::NoApplicableActions);
    }
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        Ok(candidates[rng.gen_range(0..candidates.len())])
    } else {
        argmax_action(q, s, candidates)
    }
}

/// Default known-ness threshold `m`.
pub const DEFAULT_KNOWN_THRESHOLD: u32 = 1;

/// Counts-based transition and reward model.
///
/// Estimates for a pair are (re)computed only once its visit total exceeds
/// the known-ness threshold; below it the pair stays "unknown".
#[derive(Debug, Clone)]
pub struct WorldModel {
    counts: HashMap<(MdpState, MdpAction), BTreeMap<MdpState, u32>>,
    reward_sums: HashMap<(MdpState, MdpAction), f64>,
    t_hat: HashMap<(MdpState, MdpAction), Vec<(MdpState, f64)>>,
    r_hat: HashMap<(MdpState, MdpAction), f64>,
    /// Pairs in first-visit order.
    visited: Vec<(MdpState, MdpAction)>,
    known_threshold: u32,
}

impl Default for WorldModel {
    fn default() -> Self {
        Self::new(DEFAULT_KNOWN_THRESHOLD)
    }
}

impl WorldModel {
    pub fn new(known_threshold: u32) -> Self {
        WorldModel {
            counts: HashMap::new(),
            reward_sums: HashMap::new(),
            t_hat: HashMap::new(),
            r_hat: HashMap::new(),
            visited: Vec::new(),
            known_threshold,
        }
    }

    pub fn known_threshold(&self) -> u32 {
        self.known_threshold
    }

    /// Record one real transition.
    pub fn update(&mut self, s: MdpState, a: MdpAction, next: MdpState, r: f64) {
        let key = (s, a);
        let row = self.counts.entry(key).or_insert_with(|| {
            self.visited.push(key);
            BTreeMap::new()
        });
        *row.entry(next).or_insert(0) += 1;
        let sum = self.reward_sums.entry(key).or_insert(0.0);
        *sum += r;

        let total: u32 = row.values().sum();
        if total > self.known_threshold {
            let n = f64::from(total);
            let dist = row.iter().map(|(sp, &c)| (*sp, f64::from(c) / n)).collect();
            self.t_hat.insert(key, dist);
            self.r_hat.insert(key, *sum / n);
        }
    }

    pub fn visits(&self, s: &MdpState, a: &MdpAction) -> u32 {
        self.counts.get(&(*s, *a)).map_or(0, |row| row.values().sum())
    }

    pub fn count(&self, s: &MdpState, a: &MdpAction, next: &MdpState) -> u32 {
        self.counts
            .get(&(*s, *a))
            .and_then(|row| row.get(next))
            .copied()
            .unwrap_or(0)
    }

    pub fn reward_sum(&self, s: &MdpState, a: &MdpAction) -> f64 {
        self.reward_sums.get(&(*s, *a)).copied().unwrap_or(0.0)
    }

    pub fn is_known(&self, s: &MdpState, a: &MdpAction) -> bool {
        self.t_hat.contains_key(&(*s, *a))
    }

    /// Estimated successor distribution, ordered by successor state.
    pub fn t_hat(&self, s: &MdpState, a: &MdpAction) -> Option<&[(MdpState, f64)]> {
        self.t_hat.get(&(*s, *a)).map(Vec::as_slice)
    }

    pub fn r_hat(&self, s: &MdpState, a: &MdpAction) -> Option<f64> {
        self.r_hat.get(&(*s, *a)).copied()
    }

    /// Raw empirical distribution and mean reward, ignoring the threshold.
    pub fn empirical(&self, s: &MdpState, a: &MdpAction) -> Option<(Vec<(MdpState, f64)>, f64)> {
        let row = self.counts.get(&(*s, *a))?;
        let n = f64::from(row.values().sum::<u32>());
        let dist = row.iter().map(|(sp, &c)| (*sp, f64::from(c) / n)).collect();
        Some((dist, self.reward_sum(s, a) / n))
    }

    /// Every pair observed at least once, in first-visit order.
    pub fn visited_pairs(&self) -> &[(MdpState, MdpAction)] {
        &self.visited
    }
}

/// Finite MDP with explicit transition distributions, consumed by the
/// dynamic-programming routines.
pub trait TabularMdp {
    /// Every non-absorbing and absorbing state, in a fixed order.
    fn states(&self) -> &[MdpState];
    /// Applicable actions at `s`, in a fixed order.
    fn actions(&self, s: &MdpState) -> Vec<MdpAction>;
    /// Terminal states have value zero and are never updated.
    fn is_terminal(&self, s: &MdpState) -> bool;
    fn transitions(&self, s: &MdpState, a: &MdpAction) -> Vec<(MdpState, f64)>;
    fn reward(&self, s: &MdpState, a: &MdpAction) -> f64;
}
