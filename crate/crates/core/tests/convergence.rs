//! Every learner, run long enough on a tiny office, ends up acting
//! optimally with respect to exact value iteration.

use std::sync::Arc;

use gdq_core::domain::TabularMdp;
use gdq_core::learners::{value_iteration, Agent, AgentConfig, AgentKind};
use gdq_core::nav_env::{ground_truth_model, EnvConfig, NavEnv};

// start S and the door's near side B share area 1; the goal G is behind D0
const CHAIN: &str = r#"
format_version = 1
r_max = 20.0
step_cost = 1.0
max_steps = 20
within_area_cost = 1.0
adjacent_area_cost = 2.0

[[positions]]
id = "S"
area = 1
subarea = 0
[[positions]]
id = "B"
area = 1
subarea = 1
[[positions]]
id = "G"
area = 2
subarea = 0

[[doors]]
id = "D0"
connects = [1, 2]
success_rate = 0.7
open_cost = 2.0
approach = ["B", "G"]

[[tasks]]
name = "T"
start = "S"
goal = "G"
"#;

#[test]
fn all_agents_reach_the_optimal_policy_on_a_chain() {
    let cfg = Arc::new(EnvConfig::from_toml(CHAIN).unwrap());
    let task = cfg.task("T").unwrap().clone();
    let conf = AgentConfig::default();
    let truth = ground_truth_model(&cfg, Some(task.goal));
    let opt = value_iteration(&truth, conf.gamma, 1e-12);
    let start = task.initial_state();
    let v_star = opt.values[&start];
    // S -> B, open, go through: 20 - 1 - 2/0.7 in expectation, discounted
    assert!(v_star > 10.0 && v_star < 20.0);

    for kind in AgentKind::ALL {
        let mut agent = Agent::new(kind, conf.clone(), cfg.clone(), 3).unwrap();
        agent.begin_task(&task).unwrap();
        let mut env = NavEnv::new(cfg.clone());
        for e in 0..400 {
            agent.run_episode(&mut env, 3, e).unwrap();
        }
        // greedy actions along the intended path are optimal
        let mut s = start;
        for _ in 0..10 {
            if task.is_goal(&s) {
                break;
            }
            let a = agent.greedy_action(&s).unwrap();
            let best = truth.actions(&s).iter().map(|b| opt.q.get(&s, b)).fold(f64::NEG_INFINITY, f64::max);
            assert!(opt.q.get(&s, &a) >= best - 1e-9, "{kind}: suboptimal {} at {}", cfg.mdp_action_name(&a), cfg.mdp_state_name(&s));
            s = cfg.outcomes(&s, &a).into_iter().filter(|(n, ..)| *n != s).max_by(|x, y| x.1.total_cmp(&y.1)).unwrap().0;
        }
        assert!(task.is_goal(&s), "{kind}: greedy path does not reach the goal");
        let best = agent.greedy_action(&start).unwrap();
        let learned = agent.q().get(&start, &best);
        assert!((learned - v_star).abs() <= 0.1 * v_star, "{kind}: Q(start) {learned} vs V* {v_star}");
    }
}
