//! Procedural task families over a scene: enumerate goal candidates, label
//! each with its optimal plan via breadth-first search, and split them into
//! seen/held-out sets per seed. Gold lengths key the complexity bins.

use rand::RngExt as _;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed};
use crate::world::{bfs_plan, Action, Flag, GoalSpec, Predicate, WorldState};

/// A goal with its optimal plan and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub goal: GoalSpec,
    pub gold_plan: Vec<Action>,
    pub gold_len: usize,
}

fn slug(predicates: &[Predicate]) -> String {
    let mut s = String::from("gen");
    for p in predicates {
        s.push('_');
        s.push_str(&p.canonical().replace(' ', "_"));
    }
    s
}

/// Candidate single predicates that are unsatisfied at the start state.
fn candidate_predicates(start: &WorldState) -> Vec<Predicate> {
    let scene = start.scene();
    let mut out = Vec::new();
    for (id, spec) in &scene.objects {
        let st = start.object_state(id).unwrap();
        if spec.switchable {
            out.push(Predicate::State {
                obj: id.clone(),
                flag: if st.on == Some(true) { Flag::Off } else { Flag::On },
            });
        }
        if spec.openable {
            out.push(Predicate::State {
                obj: id.clone(),
                flag: if st.open == Some(true) { Flag::Closed } else { Flag::Open },
            });
        }
        if spec.cleanable && st.clean == Some(false) {
            out.push(Predicate::State {
                obj: id.clone(),
                flag: Flag::Clean,
            });
        }
        if spec.grabbable {
            out.push(Predicate::Holds { obj: id.clone() });
            for (dest, dest_spec) in &scene.objects {
                if dest != id && dest_spec.surface {
                    let already = st.location == crate::world::Location::Object(dest.clone());
                    if !already {
                        out.push(Predicate::At {
                            obj: id.clone(),
                            loc: dest.clone(),
                        });
                    }
                }
            }
        }
    }
    out
}

fn compatible(a: &Predicate, b: &Predicate) -> bool {
    let subject = |p: &Predicate| match p {
        Predicate::At { obj, .. } | Predicate::Holds { obj } | Predicate::State { obj, .. } => {
            obj.clone()
        }
    };
    // One constraint per object keeps conjunctions satisfiable and the BFS
    // lengths roughly additive.
    subject(a) != subject(b)
}

/// Enumerate solvable tasks with one or two predicates, labeled by BFS.
/// Cheap enough to run at startup: the micro-world's reachable state space
/// is small.
pub fn enumerate_tasks(start: &WorldState, max_len: usize, max_predicates: usize) -> Vec<Task> {
    let singles = candidate_predicates(start);
    let mut goals: Vec<Vec<Predicate>> = singles.iter().map(|p| vec![p.clone()]).collect();
    if max_predicates >= 2 {
        for i in 0..singles.len() {
            for j in (i + 1)..singles.len() {
                if compatible(&singles[i], &singles[j]) {
                    goals.push(vec![singles[i].clone(), singles[j].clone()]);
                }
            }
        }
    }
    let mut tasks = Vec::new();
    for predicates in goals {
        let goal = GoalSpec {
            task_name: slug(&predicates),
            predicates,
        };
        if let Ok(Some(plan)) = bfs_plan(start, &goal, max_len) {
            if !plan.is_empty() && plan.len() <= max_len {
                tasks.push(Task {
                    gold_len: plan.len(),
                    gold_plan: plan,
                    goal,
                });
            }
        }
    }
    tasks
}

/// Extend long tasks with one extra cheap predicate to reach a target gold
/// length. Candidates come from base tasks within two steps of the target;
/// each gets one compatible state predicate added and is re-labeled by
/// search. Returns up to `count` tasks of exactly the target length.
pub fn augment_to_length(
    start: &WorldState,
    base: &[Task],
    target_len: usize,
    count: usize,
    seed: u64,
) -> Vec<Task> {
    let singles: Vec<Predicate> = candidate_predicates(start)
        .into_iter()
        .filter(|p| matches!(p, Predicate::State { .. }))
        .collect();
    let mut candidates: Vec<Task> = base
        .iter()
        .filter(|t| t.gold_len + 2 >= target_len && t.gold_len < target_len)
        .cloned()
        .collect();
    let mut rng = rng_from_seed(derive_seed(seed, "augment"));
    for i in (1..candidates.len()).rev() {
        let j = rng.random_range(0..=i);
        candidates.swap(i, j);
    }
    let mut out = Vec::new();
    'outer: for task in candidates {
        for single in &singles {
            if !task.goal.predicates.iter().all(|p| compatible(p, single)) {
                continue;
            }
            let mut predicates = task.goal.predicates.clone();
            predicates.push(single.clone());
            let goal = GoalSpec {
                task_name: slug(&predicates),
                predicates,
            };
            if let Ok(Some(plan)) = bfs_plan(start, &goal, target_len) {
                if plan.len() == target_len {
                    out.push(Task {
                        gold_len: plan.len(),
                        gold_plan: plan,
                        goal,
                    });
                    if out.len() >= count {
                        break 'outer;
                    }
                    break;
                }
            }
        }
    }
    out
}

/// A seeded split of a task family into a pretraining pool and a held-out
/// episodic suite with a bounded number of tasks per gold length.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    pub pretrain: Vec<Task>,
    pub episodic: Vec<Task>,
}

/// Split: every single-predicate task goes to pretraining (broad coverage of
/// the primitives); two-predicate tasks are shuffled per seed, a capped
/// number per length bin is held out for the episodic suite, and the rest
/// join pretraining.
pub fn split_tasks(tasks: &[Task], seed: u64, held_out_per_len: usize) -> TaskSplit {
    let mut pretrain: Vec<Task> = Vec::new();
    let mut pairs: Vec<Task> = Vec::new();
    for t in tasks {
        if t.goal.predicates.len() == 1 {
            pretrain.push(t.clone());
        } else {
            pairs.push(t.clone());
        }
    }
    let mut rng = rng_from_seed(derive_seed(seed, "task-split"));
    for i in (1..pairs.len()).rev() {
        let j = rng.random_range(0..=i);
        pairs.swap(i, j);
    }
    let mut episodic: Vec<Task> = Vec::new();
    let mut per_len: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for t in pairs {
        let n = per_len.entry(t.gold_len).or_default();
        if *n < held_out_per_len {
            *n += 1;
            episodic.push(t);
        } else {
            pretrain.push(t);
        }
    }
    episodic.sort_by(|a, b| (a.gold_len, &a.goal.task_name).cmp(&(b.gold_len, &b.goal.task_name)));
    pretrain.sort_by(|a, b| (a.gold_len, &a.goal.task_name).cmp(&(b.gold_len, &b.goal.task_name)));
    TaskSplit { pretrain, episodic }
}
