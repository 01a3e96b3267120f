//! Turn explored trajectories into instruction data `(x, y)` and preference
//! data `(x, y+, y-)`, including verbose negatives built by injecting
//! no-progress steps into successful plans.
//!
//! Records serialize as JSON Lines with plans as lists of canonical action
//! strings. The prompt template is fixed and versioned so tokenization is
//! stable across runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::RngExt as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcts::{Trajectory, TrajectoryLabel};
use crate::policy::{PolicyError, TokenId, Vocabulary};
use crate::rng::Rng;
use crate::world::{
    goal_satisfied, legal_actions, replay, replay_rewards, Action, GoalSpec, Location, Predicate,
    RewardParams, WorldState, VERBS,
};

/// Version stamp embedded in every instruction record; bump when the prompt
/// wording changes.
pub const TEMPLATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("replay error: {0}")]
    Replay(#[from] crate::world::WorldError),
    #[error("cannot inflate plan: no legal no-progress insertion exists")]
    CannotInflate,
    #[error("no positive trajectories to build a dataset from")]
    EmptyDataset,
    #[error("task `{0}` has positives but no pairable negative")]
    UnpairableTask(String),
    #[error("tokenization error: {0}")]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CorpusResult<T> = Result<T, CorpusError>;

/// One supervised example: prompt text, target plan, and the task tag used
/// for loss weighting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub x: String,
    pub y: Vec<String>,
    pub task: String,
    pub template_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegKind {
    Failed,
    Verbose,
}

/// A preference pair: the chosen plan replays to full goal satisfaction, the
/// rejected one either fails the goal or is a strictly longer inflation of
/// the chosen plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub x: String,
    pub y_pos: Vec<String>,
    pub y_neg: Vec<String>,
    pub neg_kind: NegKind,
}

/// Per-task loss weights; tasks default to 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TaskWeights {
    pub weights: BTreeMap<String, f64>,
}

impl TaskWeights {
    pub fn uniform() -> TaskWeights {
        TaskWeights::default()
    }

    pub fn get(&self, task: &str) -> f64 {
        self.weights.get(task).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> CorpusResult<()> {
        if self.weights.values().any(|w| *w <= 0.0 || !w.is_finite()) {
            return Err(CorpusError::Json(serde::de::Error::custom(
                "task weights must be positive",
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Vocabulary and prompt template
// ---------------------------------------------------------------------------

/// Keywords the prompt templates use beyond scene identifiers.
const KEYWORDS: [&str; 8] = [
    "init", "goal", "plan", "after", "where", "choices", "answer", "agent",
];
const PREDICATE_NAMES: [&str; 3] = ["at", "holds", "state"];
const FLAG_WORDS: [&str; 6] = ["open", "closed", "on", "off", "clean", "dirty"];

/// Build the run vocabulary for a scene: specials, verbs, predicate names,
/// flag words, template keywords, rooms, then objects. Duplicates (`open`
/// and `clean` double as verbs) collapse to one token.
pub fn scene_vocabulary(state: &WorldState) -> Vocabulary {
    let mut words: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |w: &str, words: &mut Vec<String>| {
        if seen.insert(w.to_string()) {
            words.push(w.to_string());
        }
    };
    for v in VERBS {
        push(v, &mut words);
    }
    for p in PREDICATE_NAMES {
        push(p, &mut words);
    }
    for f in FLAG_WORDS {
        push(f, &mut words);
    }
    for k in KEYWORDS {
        push(k, &mut words);
    }
    for r in &state.scene().rooms {
        push(r, &mut words);
    }
    for o in state.scene().objects.keys() {
        push(o, &mut words);
    }
    Vocabulary::new(words).expect("scene vocabulary is duplicate-free")
}

/// Render the fixed instruction prompt: the object initial states, then the
/// goal predicates, then the `plan` cue. The goal sits last so it stays
/// inside a small decoding window when generation begins; the init block is
/// constant per scene. No in-context demonstrations by default.
pub fn render_prompt(start: &WorldState, goal: &GoalSpec) -> String {
    let mut parts: Vec<String> = vec!["init".into()];
    for (id, _) in &start.scene().objects {
        let st = start.object_state(id).unwrap();
        parts.push(id.clone());
        parts.push(match &st.location {
            Location::Room(r) => r.clone(),
            Location::Object(o) => o.clone(),
            Location::Agent => "agent".into(),
        });
        if let Some(open) = st.open {
            parts.push(if open { "open" } else { "closed" }.into());
        }
        if let Some(on) = st.on {
            parts.push(if on { "on" } else { "off" }.into());
        }
        if let Some(clean) = st.clean {
            parts.push(if clean { "clean" } else { "dirty" }.into());
        }
    }
    parts.push("goal".into());
    for p in &goal.predicates {
        parts.push(p.canonical());
    }
    parts.push("plan".into());
    parts.join(" ")
}

// ---------------------------------------------------------------------------
// Labeling and redundancy injection
// ---------------------------------------------------------------------------

/// Replay a trajectory from the task's start state and label it: positive
/// iff every goal predicate holds in the final state.
pub fn label_trajectory(
    start: &WorldState,
    traj: &Trajectory,
    goal: &GoalSpec,
) -> CorpusResult<TrajectoryLabel> {
    let states = replay(start, &traj.plan())?;
    Ok(if goal_satisfied(states.last().unwrap(), goal)? {
        TrajectoryLabel::Positive
    } else {
        TrajectoryLabel::Negative
    })
}

/// Two states are interchangeable for inflation purposes when everything but
/// the clock matches.
fn same_outcome(a: &WorldState, b: &WorldState) -> bool {
    a.agent_room() == b.agent_room()
        && a.agent_holding() == b.agent_holding()
        && a
            .scene()
            .objects
            .keys()
            .all(|id| a.object_state(id) == b.object_state(id))
}

/// A candidate no-progress insertion: one or two steps spliced in before
/// original position `pos`.
#[derive(Debug, Clone)]
struct Insertion {
    pos: usize,
    steps: Vec<Action>,
}

fn insertion_candidates(
    start: &WorldState,
    plan: &[Action],
    max_steps: usize,
) -> CorpusResult<Vec<Insertion>> {
    let states = replay(start, plan)?;
    let mut out = Vec::new();
    for (pos, state) in states.iter().enumerate() {
        let room = state.agent_room().to_string();
        let neighbors: Vec<String> = state
            .scene()
            .adjacency
            .get(&room)
            .map(|n| n.iter().cloned().collect())
            .unwrap_or_default();
        // Single detour walk: valid only right before an original walk the
        // detour room also reaches.
        if max_steps >= 1 {
            if let Some(Action::Walk(dest)) = plan.get(pos) {
                for r in &neighbors {
                    if r == dest {
                        continue;
                    }
                    let reaches_dest = state
                        .scene()
                        .adjacency
                        .get(r)
                        .is_some_and(|n| n.contains(dest));
                    if reaches_dest {
                        out.push(Insertion {
                            pos,
                            steps: vec![Action::Walk(r.clone())],
                        });
                    }
                }
            }
        }
        if max_steps >= 2 {
            // Walk there and back.
            for r in &neighbors {
                out.push(Insertion {
                    pos,
                    steps: vec![Action::Walk(r.clone()), Action::Walk(room.clone())],
                });
            }
            // Toggle pairs over currently legal flag actions.
            for action in legal_actions(state) {
                let inverse = match &action {
                    Action::Open(o) => Action::Close(o.clone()),
                    Action::Close(o) => Action::Open(o.clone()),
                    Action::SwitchOn(o) => Action::SwitchOff(o.clone()),
                    Action::SwitchOff(o) => Action::SwitchOn(o.clone()),
                    _ => continue,
                };
                out.push(Insertion {
                    pos,
                    steps: vec![action, inverse],
                });
            }
            // Pick an object up and put it straight back.
            if state.agent_holding().is_none() {
                for (id, spec) in &state.scene().objects {
                    if !spec.grabbable {
                        continue;
                    }
                    if let Location::Object(holder) = &state.object_state(id).unwrap().location {
                        let grab = Action::Grab(id.clone());
                        let put = Action::Put(id.clone(), holder.clone());
                        if crate::world::apply(state, &grab).is_ok() {
                            out.push(Insertion {
                                pos,
                                steps: vec![grab, put],
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Validate an insertion against the no-progress contract: the new plan
/// replays legally, the inserted steps each earn only the step penalty, and
/// the final state matches the uninflated plan's final state.
fn insertion_is_valid(
    start: &WorldState,
    goal: &GoalSpec,
    plan: &[Action],
    ins: &Insertion,
    params: &RewardParams,
) -> bool {
    let mut inflated = plan[..ins.pos].to_vec();
    inflated.extend(ins.steps.iter().cloned());
    inflated.extend(plan[ins.pos..].iter().cloned());
    let Ok(states) = replay(start, &inflated) else {
        return false;
    };
    let Ok(original_states) = replay(start, plan) else {
        return false;
    };
    if !same_outcome(states.last().unwrap(), original_states.last().unwrap()) {
        return false;
    }
    let Ok(rewards) = replay_rewards(start, &inflated, goal, params) else {
        return false;
    };
    rewards[ins.pos..ins.pos + ins.steps.len()]
        .iter()
        .all(|r| (*r - params.irrelevant_step_penalty).abs() < 1e-12)
}

fn try_inflate(
    start: &WorldState,
    goal: &GoalSpec,
    plan: &[Action],
    remaining: usize,
    params: &RewardParams,
    rng: &mut Rng,
) -> CorpusResult<Option<Vec<Action>>> {
    if remaining == 0 {
        return Ok(Some(plan.to_vec()));
    }
    let mut candidates: Vec<Insertion> = insertion_candidates(start, plan, remaining.min(2))?
        .into_iter()
        .filter(|ins| ins.steps.len() <= remaining)
        .filter(|ins| insertion_is_valid(start, goal, plan, ins, params))
        .collect();
    // Seeded shuffle, then backtrack through the candidates in order.
    for i in (1..candidates.len()).rev() {
        let j = rng.random_range(0..=i);
        candidates.swap(i, j);
    }
    for ins in candidates {
        let mut inflated = plan[..ins.pos].to_vec();
        inflated.extend(ins.steps.iter().cloned());
        inflated.extend(plan[ins.pos..].iter().cloned());
        if let Some(done) = try_inflate(
            start,
            goal,
            &inflated,
            remaining - ins.steps.len(),
            params,
            rng,
        )? {
            return Ok(Some(done));
        }
    }
    Ok(None)
}

/// Insert exactly `k` no-progress steps (detour walks, there-and-back walks,
/// toggle pairs, grab/put-back pairs) into a legal plan. The original plan
/// stays a subsequence, the final state is unchanged up to the clock, and
/// goal satisfaction is untouched. Errors with `CannotInflate` when no
/// combination of legal insertions sums to `k`.
pub fn inject_redundancy(
    start: &WorldState,
    goal: &GoalSpec,
    plan: &[Action],
    k: usize,
    rng: &mut Rng,
) -> CorpusResult<Vec<Action>> {
    assert!(k >= 1, "k must be at least 1");
    let params = RewardParams::default();
    replay(start, plan)?;
    match try_inflate(start, goal, plan, k, &params, rng)? {
        Some(plan) => Ok(plan),
        None => Err(CorpusError::CannotInflate),
    }
}

// ---------------------------------------------------------------------------
// Dataset builders
// ---------------------------------------------------------------------------

/// One instruction record per positive trajectory, deduplicated on `(x, y)`
/// and sorted by `(task, y)` for a deterministic file layout.
pub fn build_instruction_dataset(
    start: &WorldState,
    explored: &[Trajectory],
    weights: &TaskWeights,
) -> CorpusResult<Vec<InstructionRecord>> {
    weights.validate()?;
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    for traj in explored.iter().filter(|t| t.is_positive()) {
        let x = render_prompt(start, &traj.goal);
        let y: Vec<String> = traj.plan().iter().map(Action::canonical).collect();
        if seen.insert((x.clone(), y.clone())) {
            records.push(InstructionRecord {
                x,
                y,
                task: traj.goal.task_name.clone(),
                template_version: TEMPLATE_VERSION,
            });
        }
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    records.sort_by(|a, b| (&a.task, &a.y).cmp(&(&b.task, &b.y)));
    Ok(records)
}

/// Pair every positive trajectory with a same-task failed trajectory when
/// one exists (round-robin over the pool) and, with probability
/// `redundancy_ratio`, with a verbose inflation of itself. Deduplicated on
/// `(x, y_pos, y_neg)`. A task whose positives admit no negative at all is
/// an `UnpairableTask` error.
pub fn build_preference_dataset(
    start: &WorldState,
    explored: &[Trajectory],
    redundancy_ratio: f64,
    rng: &mut Rng,
) -> CorpusResult<Vec<PreferenceRecord>> {
    assert!((0.0..=1.0).contains(&redundancy_ratio));
    let mut by_task: BTreeMap<String, (Vec<&Trajectory>, Vec<&Trajectory>)> = BTreeMap::new();
    for t in explored {
        let entry = by_task.entry(t.goal.task_name.clone()).or_default();
        match t.label {
            TrajectoryLabel::Positive => entry.0.push(t),
            TrajectoryLabel::Negative => entry.1.push(t),
        }
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |rec: PreferenceRecord, records: &mut Vec<PreferenceRecord>| {
        let key = (rec.x.clone(), rec.y_pos.clone(), rec.y_neg.clone());
        if seen.insert(key) {
            records.push(rec);
        }
    };

    for (task, (positives, negatives)) in &by_task {
        if positives.is_empty() {
            continue;
        }
        let mut paired_any = false;
        for (i, pos) in positives.iter().enumerate() {
            let x = render_prompt(start, &pos.goal);
            let y_pos: Vec<String> = pos.plan().iter().map(Action::canonical).collect();
            if !negatives.is_empty() {
                let neg = negatives[i % negatives.len()];
                push(
                    PreferenceRecord {
                        x: x.clone(),
                        y_pos: y_pos.clone(),
                        y_neg: neg.plan().iter().map(Action::canonical).collect(),
                        neg_kind: NegKind::Failed,
                    },
                    &mut records,
                );
                paired_any = true;
            }
            if rng.random::<f64>() < redundancy_ratio {
                let k = rng.random_range(1..=3usize);
                // Fall back through the other insertion sizes before giving
                // up on a verbose negative for this plan.
                let mut tries: Vec<usize> = vec![k];
                tries.extend((1..=3).filter(|v| *v != k));
                for k_try in tries {
                    if let Ok(verbose) =
                        inject_redundancy(start, &pos.goal, &pos.plan(), k_try, rng)
                    {
                        push(
                            PreferenceRecord {
                                x: x.clone(),
                                y_pos: y_pos.clone(),
                                y_neg: verbose.iter().map(Action::canonical).collect(),
                                neg_kind: NegKind::Verbose,
                            },
                            &mut records,
                        );
                        paired_any = true;
                        break;
                    }
                }
            }
        }
        if !paired_any {
            return Err(CorpusError::UnpairableTask(task.clone()));
        }
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Tokenization bridges
// ---------------------------------------------------------------------------

/// A tokenized training sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqExample {
    pub x: Vec<TokenId>,
    pub y: Vec<TokenId>,
    pub task: String,
}

/// A tokenized preference pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefExample {
    pub x: Vec<TokenId>,
    pub y_pos: Vec<TokenId>,
    pub y_neg: Vec<TokenId>,
}

pub fn tokenize_instruction(
    record: &InstructionRecord,
    vocab: &Vocabulary,
) -> CorpusResult<SeqExample> {
    Ok(SeqExample {
        x: vocab.encode_prompt(&record.x)?,
        y: vocab.encode_plan(&record.y)?,
        task: record.task.clone(),
    })
}

pub fn tokenize_preference(
    record: &PreferenceRecord,
    vocab: &Vocabulary,
) -> CorpusResult<PrefExample> {
    Ok(PrefExample {
        x: vocab.encode_prompt(&record.x)?,
        y_pos: vocab.encode_plan(&record.y_pos)?,
        y_neg: vocab.encode_plan(&record.y_neg)?,
    })
}

/// Parse a decoded token stream back into actions using verb arity. Returns
/// `None` when the stream is not a well-formed plan.
pub fn tokens_to_plan(tokens: &[TokenId], vocab: &Vocabulary) -> Option<Vec<Action>> {
    let mut actions = Vec::new();
    let mut it = tokens.iter().peekable();
    while let Some(&tok) = it.next() {
        if tok == crate::policy::EOS {
            return Some(actions);
        }
        let verb = vocab.token(tok).ok()?;
        let arity = match verb {
            "put" => 2,
            v if VERBS.contains(&v) => 1,
            _ => return None,
        };
        let mut args = Vec::with_capacity(arity);
        for _ in 0..arity {
            let arg_tok = *it.next()?;
            if arg_tok == crate::policy::EOS {
                return None;
            }
            args.push(vocab.token(arg_tok).ok()?.to_string());
        }
        let arg_refs: Vec<&str> = args.iter().map(String::as_str).collect();
        actions.push(Action::from_parts(verb, &arg_refs).ok()?);
    }
    // Ran out of tokens without <eos>: still a readable plan.
    Some(actions)
}

// ---------------------------------------------------------------------------
// JSON Lines io
// ---------------------------------------------------------------------------

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> CorpusResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CorpusResult<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line)?);
    }
    Ok(items)
}

/// Goals serialize inside trajectories; expose the predicate list as
/// canonical strings for convenience elsewhere.
pub fn goal_text(goal: &GoalSpec) -> String {
    goal.predicates
        .iter()
        .map(Predicate::canonical)
        .collect::<Vec<_>>()
        .join(" ")
}
