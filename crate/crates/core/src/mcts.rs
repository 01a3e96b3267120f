//! Goal-oriented Monte Carlo tree search over the simulator.
//!
//! Each iteration runs the four phases: select a promising node by UCT,
//! expand one unexplored action, roll out to termination under the rollout
//! policy, and backpropagate the episode return through the visited edges.
//! Every simulated episode (tree path plus rollout tail) is kept and labeled,
//! so search doubles as the experience collector.
//!
//! The tree has a single writer; rollouts draw from per-iteration RNG streams
//! split off the seed up front, so results do not depend on evaluation order.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed_indexed, rng_from_seed, Rng};
use crate::world::{
    apply, goal_satisfied, legal_actions, step_reward, Action, GoalSpec, RewardParams, WorldResult,
    WorldState,
};
use rand::RngExt as _;

#[derive(Debug, Error)]
pub enum MctsError {
    #[error("uct undefined for unvisited edge (n_sa = 0)")]
    Domain,
    #[error("nothing to expand: no untried actions")]
    NothingToExpand,
    #[error("world error during search: {0}")]
    World(#[from] crate::world::WorldError),
}

/// Scores candidate actions for guided rollouts. Implemented by the policy
/// bundle; search itself only needs relative log-weights.
pub trait ActionScorer: Send + Sync {
    fn score_actions(
        &self,
        goal: &GoalSpec,
        history: &[Action],
        candidates: &[Action],
    ) -> Vec<f64>;
}

/// How rollout actions are drawn.
#[derive(Clone)]
pub enum RolloutPolicy {
    /// Uniform over legal actions.
    Uniform,
    /// Softmax over an external scorer's log-weights.
    PolicyGuided(Arc<dyn ActionScorer>),
}

impl std::fmt::Debug for RolloutPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RolloutPolicy::Uniform => write!(f, "Uniform"),
            RolloutPolicy::PolicyGuided(_) => write!(f, "PolicyGuided(..)"),
        }
    }
}

/// Search hyperparameters. The exploration constant, budget, depth cap, and
/// tie-breaking rule are all echoed into run metadata.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// UCT exploration constant.
    pub exploration_c: f64,
    /// Number of select-expand-rollout-backprop iterations.
    pub simulations: usize,
    /// Step cap per episode, counted from the root state.
    pub max_depth: usize,
    pub rollout_policy: RolloutPolicy,
    pub seed: u64,
    pub reward: RewardParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            exploration_c: std::f64::consts::SQRT_2,
            simulations: 2000,
            max_depth: 20,
            rollout_policy: RolloutPolicy::Uniform,
            seed: 0,
            reward: RewardParams::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        if self.exploration_c < 0.0 || !self.exploration_c.is_finite() {
            return Err(MctsError::Domain);
        }
        if self.simulations == 0 || self.max_depth == 0 {
            return Err(MctsError::Domain);
        }
        Ok(())
    }
}

/// Positive iff all goal predicates hold in the episode's final state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryLabel {
    Positive,
    Negative,
}

/// Where a trajectory came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryOrigin {
    Search,
    RedundancyInjection,
}

/// One step of a trajectory: the action taken and the reward it earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: Action,
    pub reward: f64,
}

/// An ordered action sequence with per-step rewards, its goal, and the
/// positive/negative label assigned from the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub goal: GoalSpec,
    pub steps: Vec<TrajectoryStep>,
    pub total_return: f64,
    pub label: TrajectoryLabel,
    pub origin: TrajectoryOrigin,
}

impl Trajectory {
    pub fn plan(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    pub fn is_positive(&self) -> bool {
        self.label == TrajectoryLabel::Positive
    }
}

pub type NodeId = usize;

/// One node of the search tree. Children live in an arena indexed by
/// `NodeId`; maps are ordered so iteration is deterministic.
#[derive(Debug)]
pub struct SearchNode {
    pub state: WorldState,
    pub incoming_action: Option<Action>,
    /// Reward earned by the incoming transition.
    pub incoming_reward: f64,
    /// Mean of all returns backpropagated through (this node, action).
    pub q: BTreeMap<Action, f64>,
    pub n_sa: BTreeMap<Action, u64>,
    /// Total visits; equals the sum of `n_sa` plus one creation visit.
    pub n_s: u64,
    pub children: BTreeMap<Action, NodeId>,
    /// Unexpanded legal actions, in canonical order.
    pub untried: Vec<Action>,
    /// Goal satisfied here; nothing expands below this node.
    pub goal_reached: bool,
    pub depth: usize,
}

/// Arena-allocated search tree for one (start state, goal) pair.
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    goal: GoalSpec,
}

impl SearchTree {
    pub fn new(start: WorldState, goal: GoalSpec) -> WorldResult<SearchTree> {
        let goal_reached = goal_satisfied(&start, &goal)?;
        let untried = if goal_reached {
            Vec::new()
        } else {
            legal_actions(&start)
        };
        let root = SearchNode {
            state: start,
            incoming_action: None,
            incoming_reward: 0.0,
            q: BTreeMap::new(),
            n_sa: BTreeMap::new(),
            n_s: 1,
            children: BTreeMap::new(),
            untried,
            goal_reached,
            depth: 0,
        };
        Ok(SearchTree {
            nodes: vec![root],
            goal,
        })
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    fn is_terminal(&self, id: NodeId, max_depth: usize) -> bool {
        let node = self.node(id);
        node.goal_reached
            || node.depth >= max_depth
            || (node.untried.is_empty() && node.children.is_empty())
    }

    /// Walk from the root following the UCT-maximal child until reaching a
    /// node with untried actions or a terminal node. Unvisited children are
    /// taken before any scored child; ties break by canonical action order.
    pub fn select(&self, cfg: &SearchConfig) -> Vec<NodeId> {
        let mut path = vec![0];
        let mut id = 0;
        loop {
            let node = &self.nodes[id];
            if node.goal_reached
                || !node.untried.is_empty()
                || node.children.is_empty()
                || node.depth >= cfg.max_depth
            {
                return path;
            }
            let mut best: Option<(f64, NodeId)> = None;
            for (action, &child) in &node.children {
                let visits = node.n_sa[action];
                if visits == 0 {
                    best = Some((f64::INFINITY, child));
                    break;
                }
                let score = uct_score(node.q[action], node.n_s, visits, cfg.exploration_c)
                    .expect("visited edge");
                if best.map_or(true, |(b, _)| score > b) {
                    best = Some((score, child));
                }
            }
            id = best.expect("non-leaf node has children").1;
            path.push(id);
        }
    }

    /// Expand the first untried action (canonical order) into a new child,
    /// registered with zero visits pending backpropagation.
    pub fn expand(&mut self, id: NodeId, reward: &RewardParams) -> Result<NodeId, MctsError> {
        if self.nodes[id].untried.is_empty() {
            return Err(MctsError::NothingToExpand);
        }
        let action = self.nodes[id].untried.remove(0);
        let state = apply(&self.nodes[id].state, &action)?;
        let step = step_reward(&self.nodes[id].state, &state, &self.goal, reward)?;
        let goal_reached = goal_satisfied(&state, &self.goal)?;
        let untried = if goal_reached {
            Vec::new()
        } else {
            legal_actions(&state)
        };
        let depth = self.nodes[id].depth + 1;
        let child = SearchNode {
            state,
            incoming_action: Some(action.clone()),
            incoming_reward: step,
            q: BTreeMap::new(),
            n_sa: BTreeMap::new(),
            n_s: 1,
            children: BTreeMap::new(),
            untried,
            goal_reached,
            depth,
        };
        let child_id = self.nodes.len();
        self.nodes.push(child);
        let node = self.node_mut(id);
        node.children.insert(action.clone(), child_id);
        node.q.insert(action.clone(), 0.0);
        node.n_sa.insert(action, 0);
        Ok(child_id)
    }

    /// Update visit counts and running-mean Q along the edges of a path.
    pub fn backprop(&mut self, path: &[NodeId], ret: f64) {
        for pair in path.windows(2) {
            let action = self.nodes[pair[1]]
                .incoming_action
                .clone()
                .expect("non-root node has incoming action");
            let node = &mut self.nodes[pair[0]];
            let n = node.n_sa.get_mut(&action).expect("edge registered");
            *n += 1;
            node.n_s += 1;
            let q = node.q.get_mut(&action).expect("edge registered");
            *q += (ret - *q) / *n as f64;
        }
    }

    /// Actions along a path with the per-step rewards cached at expansion.
    fn path_steps(&self, path: &[NodeId]) -> Vec<TrajectoryStep> {
        path[1..]
            .iter()
            .map(|&id| TrajectoryStep {
                action: self.nodes[id].incoming_action.clone().unwrap(),
                reward: self.nodes[id].incoming_reward,
            })
            .collect()
    }

    /// Greedy descent for the final plan: max visit count, Q as tie-break,
    /// canonical order after that.
    pub fn best_plan_actions(&self) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut id = 0;
        loop {
            let node = &self.nodes[id];
            if node.goal_reached || node.children.is_empty() {
                return actions;
            }
            let mut best: Option<(u64, f64, NodeId)> = None;
            let mut best_action: Option<&Action> = None;
            for (action, &child) in &node.children {
                let n = node.n_sa[action];
                let q = node.q[action];
                let better = match best {
                    None => true,
                    Some((bn, bq, _)) => n > bn || (n == bn && q > bq),
                };
                if better {
                    best = Some((n, q, child));
                    best_action = Some(action);
                }
            }
            actions.push(best_action.unwrap().clone());
            id = best.unwrap().2;
        }
    }
}

/// The UCT selection score `q + c * sqrt(ln(n_s) / n_sa)`.
///
/// Natural logarithm. Unvisited children must be selected before scoring
/// applies; `n_sa = 0` is a domain error.
pub fn uct_score(q: f64, n_s: u64, n_sa: u64, c: f64) -> Result<f64, MctsError> {
    if n_sa == 0 || n_s == 0 {
        return Err(MctsError::Domain);
    }
    if !q.is_finite() || !c.is_finite() {
        return Err(MctsError::Domain);
    }
    Ok(q + c * ((n_s as f64).ln() / n_sa as f64).sqrt())
}

/// Simulate from `state` until the goal is satisfied or the depth budget
/// runs out, drawing actions from the rollout policy. Returns the summed
/// reward and the (action, reward) tail. Deterministic given the RNG stream.
pub fn rollout(
    state: &WorldState,
    goal: &GoalSpec,
    cfg: &SearchConfig,
    depth_budget: usize,
    rng: &mut Rng,
) -> WorldResult<(f64, Vec<TrajectoryStep>)> {
    let mut current = state.clone();
    let mut tail = Vec::new();
    let mut total = 0.0;
    let mut history: Vec<Action> = Vec::new();
    for _ in 0..depth_budget {
        if goal_satisfied(&current, goal)? {
            break;
        }
        let actions = legal_actions(&current);
        if actions.is_empty() {
            break;
        }
        let action = match &cfg.rollout_policy {
            RolloutPolicy::Uniform => actions[rng.random_range(0..actions.len())].clone(),
            RolloutPolicy::PolicyGuided(scorer) => {
                let scores = scorer.score_actions(goal, &history, &actions);
                sample_softmax(&actions, &scores, rng)
            }
        };
        let next = apply(&current, &action)?;
        let reward = step_reward(&current, &next, goal, &cfg.reward)?;
        total += reward;
        tail.push(TrajectoryStep {
            action: action.clone(),
            reward,
        });
        history.push(action);
        current = next;
    }
    Ok((total, tail))
}

fn sample_softmax(actions: &[Action], log_weights: &[f64], rng: &mut Rng) -> Action {
    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let mut dart = rng.random::<f64>() * sum;
    for (a, w) in actions.iter().zip(&weights) {
        dart -= w;
        if dart <= 0.0 {
            return a.clone();
        }
    }
    actions.last().unwrap().clone()
}

/// Outcome of a search run: the greedy final plan, every explored episode in
/// iteration order, and a warning flag when no positive episode was found.
#[derive(Debug)]
pub struct SearchResult {
    pub best_plan: Trajectory,
    pub explored: Vec<Trajectory>,
    /// Set when the budget produced no goal-satisfying episode. Returned,
    /// not raised: callers decide whether a bigger budget is worth it.
    pub budget_too_small: bool,
    /// Nodes in the final tree, for run metadata.
    pub tree_size: usize,
}

/// Run the full search: `cfg.simulations` iterations of the four phases,
/// then extract the visit-count-greedy plan. Deterministic given the seed.
pub fn search(
    start: &WorldState,
    goal: &GoalSpec,
    cfg: &SearchConfig,
) -> Result<SearchResult, MctsError> {
    cfg.validate()?;
    let mut tree = SearchTree::new(start.clone(), goal.clone())?;

    if tree.root().goal_reached {
        let done = Trajectory {
            goal: goal.clone(),
            steps: Vec::new(),
            total_return: 0.0,
            label: TrajectoryLabel::Positive,
            origin: TrajectoryOrigin::Search,
        };
        return Ok(SearchResult {
            best_plan: done.clone(),
            explored: vec![done],
            budget_too_small: false,
            tree_size: 1,
        });
    }

    let mut explored = Vec::with_capacity(cfg.simulations);
    let mut found_positive = false;
    for iter in 0..cfg.simulations {
        let mut path = tree.select(cfg);
        let leaf = *path.last().unwrap();

        let (rollout_return, tail, endpoint) = if tree.is_terminal(leaf, cfg.max_depth) {
            (0.0, Vec::new(), leaf)
        } else {
            let child = tree.expand(leaf, &cfg.reward)?;
            path.push(child);
            let mut rng = rng_from_seed(derive_seed_indexed(cfg.seed, "rollout", iter as u64));
            let budget = cfg.max_depth.saturating_sub(tree.node(child).depth);
            let (ret, tail) = rollout(&tree.node(child).state, goal, cfg, budget, &mut rng)?;
            (ret, tail, child)
        };

        let mut steps = tree.path_steps(&path);
        let tree_return: f64 = steps.iter().map(|s| s.reward).sum();
        steps.extend(tail.iter().cloned());
        let total_return = tree_return + rollout_return;
        tree.backprop(&path, total_return);

        let label = if tail.is_empty() {
            if tree.node(endpoint).goal_reached {
                TrajectoryLabel::Positive
            } else {
                TrajectoryLabel::Negative
            }
        } else {
            let tail_plan: Vec<Action> = tail.iter().map(|s| s.action.clone()).collect();
            let final_state = crate::world::replay(&tree.node(endpoint).state, &tail_plan)?
                .pop()
                .unwrap();
            if goal_satisfied(&final_state, goal)? {
                TrajectoryLabel::Positive
            } else {
                TrajectoryLabel::Negative
            }
        };
        found_positive |= label == TrajectoryLabel::Positive;
        explored.push(Trajectory {
            goal: goal.clone(),
            steps,
            total_return,
            label,
            origin: TrajectoryOrigin::Search,
        });
    }

    let plan = tree.best_plan_actions();
    let rewards = crate::world::replay_rewards(start, &plan, goal, &cfg.reward)?;
    let final_state = crate::world::replay(start, &plan)?.pop().unwrap();
    let best_plan = Trajectory {
        goal: goal.clone(),
        steps: plan
            .into_iter()
            .zip(rewards.iter().copied())
            .map(|(action, reward)| TrajectoryStep { action, reward })
            .collect(),
        total_return: rewards.iter().sum(),
        label: if goal_satisfied(&final_state, goal)? {
            TrajectoryLabel::Positive
        } else {
            TrajectoryLabel::Negative
        },
        origin: TrajectoryOrigin::Search,
    };
    Ok(SearchResult {
        best_plan,
        explored,
        budget_too_small: !found_positive,
        tree_size: tree.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::world::replay;

    fn goal(name: &str) -> GoalSpec {
        fixtures::apartment_goals()
            .into_iter()
            .find(|g| g.task_name == name)
            .unwrap()
    }

    fn cfg(simulations: usize, seed: u64) -> SearchConfig {
        SearchConfig {
            simulations,
            seed,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn uct_zero_log_at_single_visit() {
        assert_eq!(uct_score(0.0, 1, 1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn uct_pure_exploitation_at_c_zero() {
        for (q, n_s, n_sa) in [(0.3, 10, 2), (-1.0, 100, 50), (2.0, 7, 1)] {
            assert_eq!(uct_score(q, n_s, n_sa, 0.0).unwrap(), q);
        }
    }

    #[test]
    fn uct_matches_scalar_oracle() {
        // 0.5 + 1.4 * sqrt(ln(10) / 2), evaluated independently.
        let expected = 0.5 + 1.4 * (10f64.ln() / 2.0).sqrt();
        let got = uct_score(0.5, 10, 2, 1.4).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 2.00218).abs() < 1e-5);
    }

    #[test]
    fn uct_rejects_unvisited_edge() {
        assert!(matches!(uct_score(0.0, 5, 0, 1.0), Err(MctsError::Domain)));
    }

    #[test]
    fn fresh_root_selects_itself() {
        let tree = SearchTree::new(fixtures::apartment(), goal("tv_on")).unwrap();
        let path = tree.select(&cfg(1, 0));
        assert_eq!(path, vec![0]);
    }

    #[test]
    fn select_prefers_higher_q_at_equal_visits() {
        let mut tree = SearchTree::new(fixtures::apartment(), goal("tv_on")).unwrap();
        while !tree.root().untried.is_empty() {
            tree.expand(0, &RewardParams::default()).unwrap();
        }
        let actions: Vec<Action> = tree.root().children.keys().cloned().collect();
        for a in &actions {
            *tree.nodes[0].n_sa.get_mut(a).unwrap() = 5;
            *tree.nodes[0].q.get_mut(a).unwrap() = 0.0;
            tree.nodes[0].n_s += 5;
        }
        let favored = actions[3].clone();
        *tree.nodes[0].q.get_mut(&favored).unwrap() = 1.0;
        let path = tree.select(&cfg(1, 0));
        assert_eq!(
            tree.node(path[1]).incoming_action.as_ref().unwrap(),
            &favored
        );
    }

    #[test]
    fn select_prefers_less_visited_at_equal_q() {
        let mut tree = SearchTree::new(fixtures::apartment(), goal("tv_on")).unwrap();
        while !tree.root().untried.is_empty() {
            tree.expand(0, &RewardParams::default()).unwrap();
        }
        let actions: Vec<Action> = tree.root().children.keys().cloned().collect();
        for a in &actions {
            *tree.nodes[0].n_sa.get_mut(a).unwrap() = 5;
            tree.nodes[0].n_s += 5;
        }
        let rare = actions[2].clone();
        *tree.nodes[0].n_sa.get_mut(&rare).unwrap() = 1;
        // Oracle: the exploration term sqrt(ln n_s / n_sa) is strictly
        // larger for the less-visited edge, so it must win at equal Q.
        let n_s = tree.root().n_s;
        let rare_score = uct_score(0.0, n_s, 1, 1.4).unwrap();
        let common_score = uct_score(0.0, n_s, 5, 1.4).unwrap();
        assert!(rare_score > common_score);
        let path = tree.select(&cfg(1, 0));
        assert_eq!(tree.node(path[1]).incoming_action.as_ref().unwrap(), &rare);
    }

    #[test]
    fn expand_follows_canonical_order_and_replays() {
        let start = fixtures::apartment();
        let mut tree = SearchTree::new(start.clone(), goal("tv_on")).unwrap();
        let expected = crate::world::legal_actions(&start);
        let mut seen = Vec::new();
        while !tree.root().untried.is_empty() {
            let child = tree.expand(0, &RewardParams::default()).unwrap();
            let action = tree.node(child).incoming_action.clone().unwrap();
            // Replay oracle: the child state equals apply(start, action).
            let expect_state = replay(&start, &[action.clone()]).unwrap().pop().unwrap();
            assert_eq!(tree.node(child).state, expect_state);
            seen.push(action);
        }
        assert_eq!(seen, expected);
        assert!(matches!(
            tree.expand(0, &RewardParams::default()),
            Err(MctsError::NothingToExpand)
        ));
    }

    #[test]
    fn backprop_keeps_running_mean() {
        let mut tree = SearchTree::new(fixtures::apartment(), goal("tv_on")).unwrap();
        let child = tree.expand(0, &RewardParams::default()).unwrap();
        let path = vec![0, child];
        tree.backprop(&path, 3.6);
        let action = tree.node(child).incoming_action.clone().unwrap();
        assert_eq!(tree.root().q[&action], 3.6);
        assert_eq!(tree.root().n_sa[&action], 1);

        let mut tree2 = SearchTree::new(fixtures::apartment(), goal("tv_on")).unwrap();
        let child2 = tree2.expand(0, &RewardParams::default()).unwrap();
        let path2 = vec![0, child2];
        tree2.backprop(&path2, 2.0);
        tree2.backprop(&path2, 0.0);
        let action2 = tree2.node(child2).incoming_action.clone().unwrap();
        assert!((tree2.root().q[&action2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backprop_mean_matches_independent_recompute() {
        let mut tree = SearchTree::new(fixtures::apartment(), goal("tv_on")).unwrap();
        let child = tree.expand(0, &RewardParams::default()).unwrap();
        let path = vec![0, child];
        let mut rng = rng_from_seed(99);
        let returns: Vec<f64> = (0..100).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
        for &r in &returns {
            tree.backprop(&path, r);
        }
        let mean: f64 = returns.iter().sum::<f64>() / returns.len() as f64;
        let action = tree.node(child).incoming_action.clone().unwrap();
        assert!((tree.root().q[&action] - mean).abs() < 1e-12);
    }

    #[test]
    fn rollout_on_satisfied_goal_is_empty() {
        let start = fixtures::apartment();
        let satisfied = replay(&start, &[Action::parse("switch_on tv").unwrap()])
            .unwrap()
            .pop()
            .unwrap();
        let mut rng = rng_from_seed(1);
        let (ret, tail) = rollout(&satisfied, &goal("tv_on"), &cfg(1, 1), 20, &mut rng).unwrap();
        assert_eq!(ret, 0.0);
        assert!(tail.is_empty());
    }

    #[test]
    fn rollout_depth_one_irrelevant_pays_penalty() {
        // Single empty side room: the only action walks away from the goal.
        let spec = "format_version: 1\nrooms:\n  den\n  hall\nadjacency:\n  den hall\nobjects:\n  tv device hall off\nagent:\n  den\n";
        let state = crate::world::load_scene(spec).unwrap();
        let g = GoalSpec {
            task_name: "t".into(),
            predicates: vec![crate::world::Predicate::parse("state tv on").unwrap()],
        };
        let mut rng = rng_from_seed(5);
        let (ret, tail) = rollout(&state, &g, &cfg(1, 5), 1, &mut rng).unwrap();
        assert_eq!(tail.len(), 1);
        assert!((ret - -0.1).abs() < 1e-15);
    }

    #[test]
    fn rollout_is_deterministic_per_seed() {
        let start = fixtures::apartment();
        let g = goal("cup_on_table");
        let c = cfg(1, 42);
        let mut rng1 = rng_from_seed(42);
        let mut rng2 = rng_from_seed(42);
        let a = rollout(&start, &g, &c, 20, &mut rng1).unwrap();
        let b = rollout(&start, &g, &c, 20, &mut rng2).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn satisfied_goal_short_circuits() {
        let start = fixtures::apartment();
        let satisfied = replay(&start, &[Action::parse("switch_on tv").unwrap()])
            .unwrap()
            .pop()
            .unwrap();
        let result = search(&satisfied, &goal("tv_on"), &cfg(50, 3)).unwrap();
        assert!(result.best_plan.steps.is_empty());
        assert_eq!(result.best_plan.label, TrajectoryLabel::Positive);
    }

    #[test]
    fn one_step_task_found_with_small_budget() {
        // Exhaustive oracle over depth-1 plans: switch_on tv is the only
        // single action satisfying the goal.
        let start = fixtures::apartment();
        let g = goal("tv_on");
        let single_step_solutions: Vec<Action> = crate::world::legal_actions(&start)
            .into_iter()
            .filter(|a| {
                let s = apply(&start, a).unwrap();
                goal_satisfied(&s, &g).unwrap()
            })
            .collect();
        assert_eq!(
            single_step_solutions,
            vec![Action::parse("switch_on tv").unwrap()]
        );

        let result = search(&start, &g, &cfg(50, 11)).unwrap();
        assert_eq!(result.best_plan.plan(), single_step_solutions);
        assert!((result.best_plan.total_return - 2.0).abs() < 1e-12);
        assert_eq!(result.best_plan.label, TrajectoryLabel::Positive);
    }

    #[test]
    fn bundled_four_step_task_solved_at_default_budget() {
        let start = fixtures::apartment();
        let g = goal("cup_on_table");
        let result = search(&start, &g, &cfg(2000, 7)).unwrap();
        assert_eq!(result.best_plan.label, TrajectoryLabel::Positive);
        let final_state = replay(&start, &result.best_plan.plan())
            .unwrap()
            .pop()
            .unwrap();
        let sat = crate::world::eval_predicates(&final_state, &g).unwrap();
        assert!(sat.iter().all(|&b| b));
    }

    #[test]
    fn count_conservation_and_q_bounds() {
        let start = fixtures::apartment();
        let g = goal("remote_in_box");
        let c = cfg(300, 13);
        let mut tree = SearchTree::new(start, g.clone()).unwrap();
        for iter in 0..c.simulations {
            let mut path = tree.select(&c);
            let leaf = *path.last().unwrap();
            let ret = if tree.is_terminal(leaf, c.max_depth) {
                tree.path_steps(&path).iter().map(|s| s.reward).sum()
            } else {
                let child = tree.expand(leaf, &c.reward).unwrap();
                path.push(child);
                let mut rng = rng_from_seed(derive_seed_indexed(c.seed, "rollout", iter as u64));
                let budget = c.max_depth - tree.node(child).depth;
                let (ret, _) = rollout(&tree.node(child).state, &g, &c, budget, &mut rng).unwrap();
                ret + tree.path_steps(&path).iter().map(|s| s.reward).sum::<f64>()
            };
            tree.backprop(&path, ret);
            assert_eq!(tree.root().n_s, iter as u64 + 2);
        }
        // Count conservation on every node.
        for node in &tree.nodes {
            let sum: u64 = node.n_sa.values().sum();
            assert_eq!(node.n_s, sum + 1);
        }
        // Q bounded by the achievable return range. A bonus-earning step
        // needs a following un-satisfying step before the bonus can repeat,
        // so at most ceil(depth/2) bonus events fit in one episode.
        let preds = g.predicates.len() as f64;
        let max_ret = c.reward.predicate_bonus * preds * (c.max_depth as f64 / 2.0).ceil();
        let min_ret = c.reward.irrelevant_step_penalty * c.max_depth as f64;
        for node in &tree.nodes {
            for q in node.q.values() {
                assert!(*q >= min_ret - 1e-9 && *q <= max_ret + 1e-9, "q={q}");
            }
        }
    }

    #[test]
    fn single_predicate_returns_within_one_bonus() {
        // With one predicate the episode ends at first satisfaction, so no
        // explored return can exceed a single bonus.
        let start = fixtures::apartment();
        let g = goal("tv_on");
        let c = cfg(400, 17);
        let result = search(&start, &g, &c).unwrap();
        for t in &result.explored {
            assert!(t.total_return <= 2.0 + 1e-12);
            assert!(t.total_return >= -0.1 * c.max_depth as f64 - 1e-12);
        }
    }

    #[test]
    fn search_is_bit_deterministic() {
        let start = fixtures::apartment();
        let g = goal("cup_on_table");
        let a = search(&start, &g, &cfg(400, 7)).unwrap();
        let b = search(&start, &g, &cfg(400, 7)).unwrap();
        assert_eq!(a.best_plan, b.best_plan);
        assert_eq!(a.explored, b.explored);
    }

    #[test]
    fn budget_too_small_flag_reported() {
        let start = fixtures::apartment();
        let g = goal("grand_reset");
        let result = search(&start, &g, &cfg(2, 1)).unwrap();
        assert!(result.budget_too_small);
    }
}
