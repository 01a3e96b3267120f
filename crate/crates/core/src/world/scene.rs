//! Parsers for the structured-text scene and task formats.
//!
//! Both formats start with a `format_version: 1` line and are organized into
//! sections introduced by `name:` headers, one entry per line. Identifiers
//! are lowercase snake-case strings; `agent` is reserved.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    Flag, GoalSpec, Location, ObjectSpec, Predicate, Scene, WorldError, WorldResult, WorldState,
};

const FORMAT_VERSION: &str = "1";

fn parse_err(line: usize, msg: impl Into<String>) -> WorldError {
    WorldError::Parse {
        line,
        msg: msg.into(),
    }
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty()
        && s != "agent"
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Split a spec file into (section name, entry lines with line numbers),
/// after validating the leading `format_version` line.
fn sections(text: &str) -> WorldResult<Vec<(String, Vec<(usize, String)>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, first)) if first == format!("format_version: {FORMAT_VERSION}") => {}
        Some((n, other)) => {
            return Err(parse_err(
                n,
                format!("expected `format_version: {FORMAT_VERSION}`, found `{other}`"),
            ))
        }
        None => return Err(parse_err(0, "empty spec")),
    }
    let mut out: Vec<(String, Vec<(usize, String)>)> = Vec::new();
    for (n, line) in lines {
        if let Some(header) = line.strip_suffix(':') {
            out.push((header.to_string(), Vec::new()));
        } else if let Some((header, rest)) = line.split_once(':') {
            // `task: name` style header carrying a value
            out.push((header.to_string(), vec![(n, rest.trim().to_string())]));
        } else if let Some(last) = out.last_mut() {
            last.1.push((n, line.to_string()));
        } else {
            return Err(parse_err(n, format!("entry `{line}` before any section")));
        }
    }
    Ok(out)
}

/// Parse a scene specification into its initial `WorldState` (clock 0).
///
/// Sections: `rooms:`, `adjacency:`, `objects:` (id, type, location, flags),
/// `agent:`. All referenced identifiers must be defined before use.
pub fn load_scene(text: &str) -> WorldResult<WorldState> {
    let mut rooms: BTreeSet<String> = BTreeSet::new();
    let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut objects: BTreeMap<String, ObjectSpec> = BTreeMap::new();
    let mut object_defs: Vec<(usize, String, String, String, Vec<String>)> = Vec::new();
    let mut agent_start: Option<String> = None;

    for (header, entries) in sections(text)? {
        match header.as_str() {
            "rooms" => {
                for (n, line) in entries {
                    if !valid_identifier(&line) {
                        return Err(parse_err(n, format!("bad room identifier `{line}`")));
                    }
                    if !rooms.insert(line.clone()) {
                        return Err(parse_err(n, format!("duplicate room `{line}`")));
                    }
                }
            }
            "adjacency" => {
                for (n, line) in entries {
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    let [a, b] = parts.as_slice() else {
                        return Err(parse_err(n, "adjacency entries are `room_a room_b`"));
                    };
                    for r in [a, b] {
                        if !rooms.contains(*r) {
                            return Err(WorldError::DanglingReference(r.to_string()));
                        }
                    }
                    adjacency
                        .entry(a.to_string())
                        .or_default()
                        .insert(b.to_string());
                    adjacency
                        .entry(b.to_string())
                        .or_default()
                        .insert(a.to_string());
                }
            }
            "objects" => {
                for (n, line) in entries {
                    let mut parts = line.split_whitespace();
                    let (Some(id), Some(kind), Some(loc)) =
                        (parts.next(), parts.next(), parts.next())
                    else {
                        return Err(parse_err(n, "object entries are `id type location flags...`"));
                    };
                    if !valid_identifier(id) {
                        return Err(parse_err(n, format!("bad object identifier `{id}`")));
                    }
                    let flags: Vec<String> = parts.map(str::to_string).collect();
                    object_defs.push((
                        n,
                        id.to_string(),
                        kind.to_string(),
                        loc.to_string(),
                        flags,
                    ));
                }
            }
            "agent" => {
                for (n, line) in entries {
                    if agent_start.is_some() {
                        return Err(parse_err(n, "agent section may hold one room"));
                    }
                    if !rooms.contains(&line) {
                        return Err(WorldError::DanglingReference(line));
                    }
                    agent_start = Some(line);
                }
            }
            other => return Err(parse_err(0, format!("unknown section `{other}:`"))),
        }
    }

    if rooms.is_empty() {
        return Err(parse_err(0, "a scene must have at least one room"));
    }
    let agent_start = agent_start.ok_or_else(|| parse_err(0, "missing agent section"))?;

    // First pass: register specs so locations can reference other objects.
    for (n, id, kind, _loc, flags) in &object_defs {
        if objects.contains_key(id) {
            return Err(parse_err(*n, format!("duplicate object `{id}`")));
        }
        let mut spec = ObjectSpec {
            kind: kind.clone(),
            grabbable: false,
            surface: false,
            openable: false,
            switchable: false,
            cleanable: false,
            init_location: Location::Agent, // placeholder, fixed below
            init_open: false,
            init_on: false,
            init_clean: false,
        };
        for flag in flags {
            match flag.as_str() {
                "grabbable" => spec.grabbable = true,
                "surface" => spec.surface = true,
                "open" => {
                    spec.openable = true;
                    spec.init_open = true;
                }
                "closed" => spec.openable = true,
                "on" => {
                    spec.switchable = true;
                    spec.init_on = true;
                }
                "off" => spec.switchable = true,
                "clean" => {
                    spec.cleanable = true;
                    spec.init_clean = true;
                }
                "dirty" => spec.cleanable = true,
                other => return Err(parse_err(*n, format!("unknown flag `{other}`"))),
            }
        }
        objects.insert(id.clone(), spec);
    }

    // Second pass: resolve locations.
    let mut held: Option<String> = None;
    for (n, id, _kind, loc, _flags) in &object_defs {
        let location = if rooms.contains(loc) {
            Location::Room(loc.clone())
        } else if loc == "agent" {
            if held.is_some() {
                return Err(parse_err(*n, "at most one object may start held"));
            }
            held = Some(id.clone());
            Location::Agent
        } else if let Some(holder) = objects.get(loc) {
            if !holder.surface {
                return Err(parse_err(*n, format!("`{loc}` cannot hold objects")));
            }
            Location::Object(loc.clone())
        } else {
            return Err(WorldError::DanglingReference(loc.clone()));
        };
        objects.get_mut(id).unwrap().init_location = location;
    }

    // Containers must sit directly in rooms so nesting stays one level deep.
    for (id, spec) in &objects {
        if let Location::Object(holder) = &spec.init_location {
            if !matches!(objects[holder].init_location, Location::Room(_)) {
                return Err(parse_err(
                    0,
                    format!("`{id}` nested inside `{holder}` which is not in a room"),
                ));
            }
        }
    }

    let scene = Scene {
        rooms,
        adjacency,
        objects,
        agent_start,
    };
    Ok(WorldState::from_scene(scene))
}

/// Parse a task file into named goals. Each `task: name` header is followed
/// by one predicate per line.
pub fn load_goals(text: &str) -> WorldResult<Vec<GoalSpec>> {
    let mut goals: Vec<GoalSpec> = Vec::new();
    for (header, entries) in sections(text)? {
        if header != "task" {
            return Err(parse_err(0, format!("unknown section `{header}:`")));
        }
        let mut entries = entries.into_iter();
        let (n, name) = entries
            .next()
            .ok_or_else(|| parse_err(0, "task header missing a name"))?;
        if !valid_identifier(&name) {
            return Err(parse_err(n, format!("bad task name `{name}`")));
        }
        let predicates = entries
            .map(|(n, line)| {
                Predicate::parse(&line).map_err(|e| parse_err(n, e.to_string()))
            })
            .collect::<WorldResult<Vec<_>>>()?;
        if predicates.is_empty() {
            return Err(parse_err(n, format!("task `{name}` has no predicates")));
        }
        goals.push(GoalSpec {
            task_name: name,
            predicates,
        });
    }
    Ok(goals)
}

/// Validate that every identifier a goal mentions resolves in the scene.
pub fn validate_goal(state: &WorldState, goal: &GoalSpec) -> WorldResult<()> {
    eval_predicates_idents(state, goal)
}

fn eval_predicates_idents(state: &WorldState, goal: &GoalSpec) -> WorldResult<()> {
    super::eval_predicates(state, goal).map(|_| ())
}

pub(crate) fn validate_flag_usage(goal: &GoalSpec, state: &WorldState) -> Vec<String> {
    let mut notes = Vec::new();
    for p in &goal.predicates {
        if let Predicate::State { obj, flag } = p {
            if let Some(spec) = state.scene().objects.get(obj) {
                let supported = match flag {
                    Flag::Open | Flag::Closed => spec.openable,
                    Flag::On | Flag::Off => spec.switchable,
                    Flag::Clean | Flag::Dirty => spec.cleanable,
                };
                if !supported {
                    notes.push(format!(
                        "`{obj}` never has flag `{}`; predicate is unsatisfiable",
                        flag.as_str()
                    ));
                }
            }
        }
    }
    notes
}
