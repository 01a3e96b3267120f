//! Deterministic closed-world household simulator: symbolic states, legal
//! actions, pure transitions, goal predicates, the step reward, and thematic
//! vocabulary remapping.
//!
//! All operations are pure functions over immutable values. `apply` returns a
//! fresh state and never mutates its input, so any number of callers can
//! evaluate transitions concurrently.

mod planner;
mod scene;
mod theme;

pub use planner::bfs_plan;
pub use scene::{load_goals, load_scene};
pub use scene::validate_goal;
pub use theme::{load_theme, remap_theme, ThemeMap, ThemeName};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by simulator operations.
#[derive(Debug, Error)]
pub enum WorldError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("missing theme mapping for identifier: {0}")]
    MissingMapping(String),
}

pub type WorldResult<T> = Result<T, WorldError>;

/// Where an object currently sits: directly in a room, on/in another object,
/// or in the agent's hand.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Location {
    Room(String),
    Object(String),
    Agent,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Room(r) => write!(f, "{r}"),
            Location::Object(o) => write!(f, "{o}"),
            Location::Agent => write!(f, "agent"),
        }
    }
}

/// Static description of one object: its type tag and capabilities, plus the
/// initial dynamic state it spawns with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSpec {
    pub kind: String,
    pub grabbable: bool,
    pub surface: bool,
    pub openable: bool,
    pub switchable: bool,
    pub cleanable: bool,
    pub init_location: Location,
    pub init_open: bool,
    pub init_on: bool,
    pub init_clean: bool,
}

/// Immutable scene topology shared by every state derived from it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    pub rooms: BTreeSet<String>,
    pub adjacency: BTreeMap<String, BTreeSet<String>>,
    pub objects: BTreeMap<String, ObjectSpec>,
    pub agent_start: String,
}

impl Scene {
    pub fn is_room(&self, id: &str) -> bool {
        self.rooms.contains(id)
    }

    pub fn is_object(&self, id: &str) -> bool {
        self.objects.contains_key(id)
    }

    /// Every identifier that can appear in goals and plans.
    pub fn identifiers(&self) -> impl Iterator<Item = &str> {
        self.rooms
            .iter()
            .map(String::as_str)
            .chain(self.objects.keys().map(String::as_str))
    }
}

/// Per-object dynamic state. Flag fields are `Some` only when the object has
/// the corresponding capability.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ObjectState {
    pub location: Location,
    pub open: Option<bool>,
    pub on: Option<bool>,
    pub clean: Option<bool>,
}

/// Complete symbolic snapshot of the micro-world.
///
/// Invariants: every location refers to an existing room, surface object, or
/// the agent; at most one object is held; `clock` never decreases across
/// transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    scene: Arc<Scene>,
    object_states: BTreeMap<String, ObjectState>,
    agent_room: String,
    agent_holding: Option<String>,
    clock: u64,
}

/// The eight primitive verbs, in canonical order.
pub const VERBS: [&str; 8] = [
    "walk",
    "grab",
    "put",
    "open",
    "close",
    "switch_on",
    "switch_off",
    "clean",
];

/// A primitive action. Arity is fixed per verb: `walk` takes a room, `put`
/// takes an object and a destination, the rest take one object.
///
/// Serializes as its canonical string form (`"grab cup"`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Walk(String),
    Grab(String),
    Put(String, String),
    Open(String),
    Close(String),
    SwitchOn(String),
    SwitchOff(String),
    Clean(String),
}

impl Action {
    pub fn verb(&self) -> &'static str {
        match self {
            Action::Walk(_) => "walk",
            Action::Grab(_) => "grab",
            Action::Put(_, _) => "put",
            Action::Open(_) => "open",
            Action::Close(_) => "close",
            Action::SwitchOn(_) => "switch_on",
            Action::SwitchOff(_) => "switch_off",
            Action::Clean(_) => "clean",
        }
    }

    pub fn args(&self) -> Vec<&str> {
        match self {
            Action::Walk(a)
            | Action::Grab(a)
            | Action::Open(a)
            | Action::Close(a)
            | Action::SwitchOn(a)
            | Action::SwitchOff(a)
            | Action::Clean(a) => vec![a],
            Action::Put(a, b) => vec![a, b],
        }
    }

    /// Canonical string form, e.g. `grab cup` or `put cup table`.
    pub fn canonical(&self) -> String {
        let mut s = self.verb().to_string();
        for a in self.args() {
            s.push(' ');
            s.push_str(a);
        }
        s
    }

    /// Parse the canonical string form back into an action.
    pub fn parse(s: &str) -> WorldResult<Action> {
        let mut it = s.split_whitespace();
        let verb = it.next().ok_or_else(|| WorldError::Parse {
            line: 0,
            msg: "empty action".into(),
        })?;
        let args: Vec<&str> = it.collect();
        Self::from_parts(verb, &args)
    }

    /// Build an action from a verb and argument list, checking arity.
    pub fn from_parts(verb: &str, args: &[&str]) -> WorldResult<Action> {
        let arity_err = || WorldError::Parse {
            line: 0,
            msg: format!("verb `{verb}` with {} argument(s)", args.len()),
        };
        let one = || args.first().copied().ok_or_else(arity_err);
        let action = match verb {
            "walk" if args.len() == 1 => Action::Walk(one()?.to_string()),
            "grab" if args.len() == 1 => Action::Grab(one()?.to_string()),
            "put" if args.len() == 2 => Action::Put(args[0].to_string(), args[1].to_string()),
            "open" if args.len() == 1 => Action::Open(one()?.to_string()),
            "close" if args.len() == 1 => Action::Close(one()?.to_string()),
            "switch_on" if args.len() == 1 => Action::SwitchOn(one()?.to_string()),
            "switch_off" if args.len() == 1 => Action::SwitchOff(one()?.to_string()),
            "clean" if args.len() == 1 => Action::Clean(one()?.to_string()),
            "walk" | "grab" | "put" | "open" | "close" | "switch_on" | "switch_off" | "clean" => {
                return Err(arity_err())
            }
            _ => {
                return Err(WorldError::Parse {
                    line: 0,
                    msg: format!("unknown verb `{verb}`"),
                })
            }
        };
        Ok(action)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.canonical())
    }
}

impl Serialize for Action {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Action::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One goal condition over the scene vocabulary.
///
/// Serializes as its canonical string form (`"at cup table"`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    /// Object is directly at the given room or object.
    At { obj: String, loc: String },
    /// Agent holds the object.
    Holds { obj: String },
    /// Object's flag has the given value.
    State { obj: String, flag: Flag },
}

/// Flag values usable in `state` predicates and scene files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    Open,
    Closed,
    On,
    Off,
    Clean,
    Dirty,
}

impl Flag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::Open => "open",
            Flag::Closed => "closed",
            Flag::On => "on",
            Flag::Off => "off",
            Flag::Clean => "clean",
            Flag::Dirty => "dirty",
        }
    }

    pub fn parse(s: &str) -> Option<Flag> {
        Some(match s {
            "open" => Flag::Open,
            "closed" => Flag::Closed,
            "on" => Flag::On,
            "off" => Flag::Off,
            "clean" => Flag::Clean,
            "dirty" => Flag::Dirty,
            _ => return None,
        })
    }
}

impl Predicate {
    /// Canonical string form, e.g. `at cup table` or `state tv on`.
    pub fn canonical(&self) -> String {
        match self {
            Predicate::At { obj, loc } => format!("at {obj} {loc}"),
            Predicate::Holds { obj } => format!("holds {obj}"),
            Predicate::State { obj, flag } => format!("state {obj} {}", flag.as_str()),
        }
    }

    pub fn parse(s: &str) -> WorldResult<Predicate> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = |msg: &str| WorldError::Parse {
            line: 0,
            msg: msg.to_string(),
        };
        match parts.as_slice() {
            ["at", obj, loc] => Ok(Predicate::At {
                obj: obj.to_string(),
                loc: loc.to_string(),
            }),
            ["holds", obj] => Ok(Predicate::Holds {
                obj: obj.to_string(),
            }),
            ["state", obj, flag] => Ok(Predicate::State {
                obj: obj.to_string(),
                flag: Flag::parse(flag).ok_or_else(|| bad(&format!("unknown flag `{flag}`")))?,
            }),
            _ => Err(bad(&format!("unparseable predicate `{s}`"))),
        }
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Predicate::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A named task: a non-empty list of predicates that must all hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    #[serde(rename = "task")]
    pub task_name: String,
    pub predicates: Vec<Predicate>,
}

/// Reward shaping constants for trajectory scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Reward paid per goal predicate newly satisfied by a step.
    pub predicate_bonus: f64,
    /// Reward paid by a step that satisfies no new predicate.
    pub irrelevant_step_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            predicate_bonus: 2.0,
            irrelevant_step_penalty: -0.1,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> WorldResult<()> {
        if self.predicate_bonus <= 0.0 {
            return Err(WorldError::Parse {
                line: 0,
                msg: "predicate_bonus must be positive".into(),
            });
        }
        if self.irrelevant_step_penalty > 0.0 {
            return Err(WorldError::Parse {
                line: 0,
                msg: "irrelevant_step_penalty must be <= 0".into(),
            });
        }
        Ok(())
    }
}

impl WorldState {
    pub(crate) fn from_scene(scene: Scene) -> WorldState {
        let object_states = scene
            .objects
            .iter()
            .map(|(id, spec)| {
                let st = ObjectState {
                    location: spec.init_location.clone(),
                    open: spec.openable.then_some(spec.init_open),
                    on: spec.switchable.then_some(spec.init_on),
                    clean: spec.cleanable.then_some(spec.init_clean),
                };
                (id.clone(), st)
            })
            .collect();
        let agent_room = scene.agent_start.clone();
        let agent_holding = scene
            .objects
            .iter()
            .find(|(_, spec)| spec.init_location == Location::Agent)
            .map(|(id, _)| id.clone());
        WorldState {
            scene: Arc::new(scene),
            object_states,
            agent_room,
            agent_holding,
            clock: 0,
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn agent_room(&self) -> &str {
        &self.agent_room
    }

    pub fn agent_holding(&self) -> Option<&str> {
        self.agent_holding.as_deref()
    }

    pub fn object_state(&self, id: &str) -> Option<&ObjectState> {
        self.object_states.get(id)
    }

    pub fn location_of(&self, id: &str) -> Option<&Location> {
        self.object_states.get(id).map(|s| &s.location)
    }

    /// An object is reachable when it sits in the agent's room, inside an
    /// open (or non-openable) surface in that room, or in the agent's hand.
    fn reachable(&self, obj: &str) -> bool {
        match &self.object_states[obj].location {
            Location::Agent => true,
            Location::Room(r) => r == &self.agent_room,
            Location::Object(holder) => {
                let holder_state = &self.object_states[holder];
                let holder_spec = &self.scene.objects[holder];
                matches!(&holder_state.location, Location::Room(r) if r == &self.agent_room)
                    && (!holder_spec.openable || holder_state.open == Some(true))
            }
        }
    }

    /// Why an action is inapplicable, allocation-free. `legal_actions`
    /// filters on this directly; `apply` renders it into a rich error. Both
    /// go through the same predicate, which keeps them consistent.
    fn violation(&self, action: &Action) -> Option<&'static str> {
        let known = |id: &String| self.scene.is_object(id);
        match action {
            Action::Walk(room) => {
                if !self.scene.is_room(room) {
                    return Some("unknown room");
                }
                if room == &self.agent_room {
                    return Some("already in that room");
                }
                let adjacent = self
                    .scene
                    .adjacency
                    .get(&self.agent_room)
                    .is_some_and(|n| n.contains(room));
                if !adjacent {
                    return Some("room not adjacent");
                }
            }
            Action::Grab(obj) => {
                if !known(obj) {
                    return Some("unknown object");
                }
                if !self.scene.objects[obj].grabbable {
                    return Some("object not grabbable");
                }
                if self.agent_holding.is_some() {
                    return Some("hands full");
                }
                if self.object_states[obj].location == Location::Agent {
                    return Some("already holding it");
                }
                if !self.reachable(obj) {
                    return Some("object out of reach");
                }
            }
            Action::Put(obj, dest) => {
                if !known(obj) || !known(dest) {
                    return Some("unknown object");
                }
                if self.agent_holding.as_deref() != Some(obj.as_str()) {
                    return Some("not holding the object");
                }
                if obj == dest {
                    return Some("cannot put an object onto itself");
                }
                let dest_spec = &self.scene.objects[dest];
                let dest_state = &self.object_states[dest];
                if !dest_spec.surface {
                    return Some("destination cannot hold objects");
                }
                if !matches!(&dest_state.location, Location::Room(r) if r == &self.agent_room) {
                    return Some("destination not in this room");
                }
                if dest_spec.openable && dest_state.open != Some(true) {
                    return Some("destination is closed");
                }
            }
            Action::Open(obj) => {
                if !known(obj) {
                    return Some("unknown object");
                }
                if !self.scene.objects[obj].openable {
                    return Some("object does not open");
                }
                if self.object_states[obj].open == Some(true) {
                    return Some("already open");
                }
                if !self.reachable(obj) {
                    return Some("object out of reach");
                }
            }
            Action::Close(obj) => {
                if !known(obj) {
                    return Some("unknown object");
                }
                if !self.scene.objects[obj].openable {
                    return Some("object does not close");
                }
                if self.object_states[obj].open != Some(true) {
                    return Some("already closed");
                }
                if !self.reachable(obj) {
                    return Some("object out of reach");
                }
            }
            Action::SwitchOn(obj) => {
                if !known(obj) {
                    return Some("unknown object");
                }
                if !self.scene.objects[obj].switchable {
                    return Some("object has no switch");
                }
                if self.object_states[obj].on == Some(true) {
                    return Some("already on");
                }
                if !self.reachable(obj) {
                    return Some("object out of reach");
                }
            }
            Action::SwitchOff(obj) => {
                if !known(obj) {
                    return Some("unknown object");
                }
                if !self.scene.objects[obj].switchable {
                    return Some("object has no switch");
                }
                if self.object_states[obj].on != Some(true) {
                    return Some("already off");
                }
                if !self.reachable(obj) {
                    return Some("object out of reach");
                }
            }
            Action::Clean(obj) => {
                if !known(obj) {
                    return Some("unknown object");
                }
                if !self.scene.objects[obj].cleanable {
                    return Some("object cannot be cleaned");
                }
                if self.object_states[obj].clean == Some(true) {
                    return Some("already clean");
                }
                if !self.reachable(obj) {
                    return Some("object out of reach");
                }
            }
        }
        None
    }

    fn check(&self, action: &Action) -> WorldResult<()> {
        match self.violation(action) {
            None => Ok(()),
            Some(why) => Err(WorldError::IllegalAction(format!(
                "`{}`: {why}",
                action.canonical()
            ))),
        }
    }

    /// A compact canonical key for the dynamic part of the state (clock
    /// excluded), used for visited sets in search.
    pub fn canonical_key(&self) -> String {
        use fmt::Write as _;
        let mut key = String::new();
        let _ = write!(key, "@{}|", self.agent_room);
        for (id, st) in &self.object_states {
            let _ = write!(key, "{id}:{}", st.location);
            if let Some(v) = st.open {
                let _ = write!(key, ",o{}", u8::from(v));
            }
            if let Some(v) = st.on {
                let _ = write!(key, ",p{}", u8::from(v));
            }
            if let Some(v) = st.clean {
                let _ = write!(key, ",c{}", u8::from(v));
            }
            key.push(';');
        }
        key
    }
}

/// Enumerate every applicable action in canonical order: verb order, then
/// lexicographic arguments. The list is deterministic and duplicate-free, and
/// `apply` succeeds on exactly these actions.
pub fn legal_actions(state: &WorldState) -> Vec<Action> {
    let scene = state.scene();
    let mut out = Vec::new();
    let mut push_if_legal = |a: Action| {
        if state.violation(&a).is_none() {
            out.push(a);
        }
    };
    for room in &scene.rooms {
        push_if_legal(Action::Walk(room.clone()));
    }
    for obj in scene.objects.keys() {
        push_if_legal(Action::Grab(obj.clone()));
    }
    if let Some(held) = state.agent_holding() {
        for dest in scene.objects.keys() {
            push_if_legal(Action::Put(held.to_string(), dest.clone()));
        }
    }
    for obj in scene.objects.keys() {
        push_if_legal(Action::Open(obj.clone()));
    }
    for obj in scene.objects.keys() {
        push_if_legal(Action::Close(obj.clone()));
    }
    for obj in scene.objects.keys() {
        push_if_legal(Action::SwitchOn(obj.clone()));
    }
    for obj in scene.objects.keys() {
        push_if_legal(Action::SwitchOff(obj.clone()));
    }
    for obj in scene.objects.keys() {
        push_if_legal(Action::Clean(obj.clone()));
    }
    out
}

/// Apply an action to a state, returning the successor. The input state is
/// untouched; the clock advances by one; only fields touched by the verb
/// change. Errors with `IllegalAction` when preconditions fail.
pub fn apply(state: &WorldState, action: &Action) -> WorldResult<WorldState> {
    state.check(action)?;
    let mut next = state.clone();
    next.clock += 1;
    match action {
        Action::Walk(room) => {
            next.agent_room = room.clone();
        }
        Action::Grab(obj) => {
            next.object_states.get_mut(obj).unwrap().location = Location::Agent;
            next.agent_holding = Some(obj.clone());
        }
        Action::Put(obj, dest) => {
            next.object_states.get_mut(obj).unwrap().location = Location::Object(dest.clone());
            next.agent_holding = None;
        }
        Action::Open(obj) => {
            next.object_states.get_mut(obj).unwrap().open = Some(true);
        }
        Action::Close(obj) => {
            next.object_states.get_mut(obj).unwrap().open = Some(false);
        }
        Action::SwitchOn(obj) => {
            next.object_states.get_mut(obj).unwrap().on = Some(true);
        }
        Action::SwitchOff(obj) => {
            next.object_states.get_mut(obj).unwrap().on = Some(false);
        }
        Action::Clean(obj) => {
            next.object_states.get_mut(obj).unwrap().clean = Some(true);
        }
    }
    Ok(next)
}

/// Evaluate each goal predicate against a state. Entry `i` is true iff
/// predicate `i` holds; order matches the goal. Errors with `UnknownEntity`
/// when a predicate references an identifier absent from the scene.
pub fn eval_predicates(state: &WorldState, goal: &GoalSpec) -> WorldResult<Vec<bool>> {
    let scene = state.scene();
    goal.predicates
        .iter()
        .map(|p| match p {
            Predicate::At { obj, loc } => {
                if !scene.is_object(obj) {
                    return Err(WorldError::UnknownEntity(obj.clone()));
                }
                if loc != "agent" && !scene.is_room(loc) && !scene.is_object(loc) {
                    return Err(WorldError::UnknownEntity(loc.clone()));
                }
                let location = state.location_of(obj).unwrap();
                Ok(match location {
                    Location::Room(r) => r == loc,
                    Location::Object(o) => o == loc,
                    Location::Agent => loc == "agent",
                })
            }
            Predicate::Holds { obj } => {
                if !scene.is_object(obj) {
                    return Err(WorldError::UnknownEntity(obj.clone()));
                }
                Ok(state.agent_holding() == Some(obj.as_str()))
            }
            Predicate::State { obj, flag } => {
                if !scene.is_object(obj) {
                    return Err(WorldError::UnknownEntity(obj.clone()));
                }
                let st = state.object_state(obj).unwrap();
                Ok(match flag {
                    Flag::Open => st.open == Some(true),
                    Flag::Closed => st.open == Some(false),
                    Flag::On => st.on == Some(true),
                    Flag::Off => st.on == Some(false),
                    Flag::Clean => st.clean == Some(true),
                    Flag::Dirty => st.clean == Some(false),
                })
            }
        })
        .collect()
}

/// True when every goal predicate holds.
pub fn goal_satisfied(state: &WorldState, goal: &GoalSpec) -> WorldResult<bool> {
    Ok(eval_predicates(state, goal)?.iter().all(|&b| b))
}

/// Reward for the transition `prev -> next`: `predicate_bonus` per predicate
/// newly true in `next`, or `irrelevant_step_penalty` when nothing new was
/// satisfied. A predicate that flips true, false, true earns the bonus again;
/// newly-satisfied is judged per step.
pub fn step_reward(
    prev: &WorldState,
    next: &WorldState,
    goal: &GoalSpec,
    params: &RewardParams,
) -> WorldResult<f64> {
    let before = eval_predicates(prev, goal)?;
    let after = eval_predicates(next, goal)?;
    let newly = before
        .iter()
        .zip(after.iter())
        .filter(|(b, a)| !**b && **a)
        .count();
    Ok(if newly > 0 {
        params.predicate_bonus * newly as f64
    } else {
        params.irrelevant_step_penalty
    })
}

/// Replay a plan from a start state, returning the visited states (including
/// the start) or the offending action's error.
pub fn replay(start: &WorldState, plan: &[Action]) -> WorldResult<Vec<WorldState>> {
    let mut states = Vec::with_capacity(plan.len() + 1);
    states.push(start.clone());
    for action in plan {
        let next = apply(states.last().unwrap(), action)?;
        states.push(next);
    }
    Ok(states)
}

/// Per-step rewards for a plan replayed from `start`.
pub fn replay_rewards(
    start: &WorldState,
    plan: &[Action],
    goal: &GoalSpec,
    params: &RewardParams,
) -> WorldResult<Vec<f64>> {
    let states = replay(start, plan)?;
    states
        .windows(2)
        .map(|w| step_reward(&w[0], &w[1], goal, params))
        .collect()
}
