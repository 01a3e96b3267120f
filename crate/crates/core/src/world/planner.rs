//! Breadth-first optimal planner over the micro-world.
//!
//! The state space is small enough (hundreds of thousands of reachable
//! states) that exhaustive search is cheap. Used to label tasks with their
//! gold plan lengths and as an independent oracle for the tree search.

use std::collections::{HashMap, VecDeque};

use super::{apply, goal_satisfied, legal_actions, Action, GoalSpec, WorldResult, WorldState};

/// Find a shortest plan reaching the goal, or `None` if no plan of length
/// `<= max_depth` exists. Ties between equally short plans are broken by
/// canonical action order, so the result is deterministic.
pub fn bfs_plan(
    start: &WorldState,
    goal: &GoalSpec,
    max_depth: usize,
) -> WorldResult<Option<Vec<Action>>> {
    if goal_satisfied(start, goal)? {
        return Ok(Some(Vec::new()));
    }
    let mut visited: HashMap<String, usize> = HashMap::new();
    let mut queue: VecDeque<(WorldState, Vec<Action>)> = VecDeque::new();
    visited.insert(start.canonical_key(), 0);
    queue.push_back((start.clone(), Vec::new()));
    while let Some((state, plan)) = queue.pop_front() {
        if plan.len() >= max_depth {
            continue;
        }
        for action in legal_actions(&state) {
            let next = apply(&state, &action)?;
            let key = next.canonical_key();
            if visited.contains_key(&key) {
                continue;
            }
            visited.insert(key, plan.len() + 1);
            let mut next_plan = plan.clone();
            next_plan.push(action);
            if goal_satisfied(&next, goal)? {
                return Ok(Some(next_plan));
            }
            queue.push_back((next, next_plan));
        }
    }
    Ok(None)
}
