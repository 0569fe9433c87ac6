//! Guided Dyna-Q: a tabular model-based learner whose simulated experience
//! comes from optimistic plans computed over declarative action knowledge,
//! together with the baselines, the office navigation simulator and the
//! experiment harness used to compare them.

pub mod action_lang;
pub mod domain;
pub mod harness;
pub mod learners;
pub mod nav_env;
pub mod planner;

pub use action_lang::{parse_domain, DomainSpec, Fluent, GroundAction, SymbolicState};
pub use domain::{
    argmax_action, epsilon_greedy, ActionKind, DoorId, DoorSet, MdpAction, MdpState, PosId, QTable, Task,
    WorldModel,
};
pub use nav_env::{EnvConfig, NavEnv, StepOutcome};
pub use planner::{Goal, Plan, PlanSet, Planner};
pub use learners::{Agent, AgentConfig, AgentKind, EpisodeTrace, Policy, SimBackup, Transition};
pub use harness::{compare, execute, load_bundle, run_experiment, write_bundle, ExperimentSpec, HarnessError, Metrics, Phase};
