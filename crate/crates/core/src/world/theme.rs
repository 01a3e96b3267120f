//! Thematic vocabulary remapping: injective renames of objects and rooms
//! that preserve affordances, used to test transfer to restyled scenarios.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Action, GoalSpec, Predicate, WorldError, WorldResult};

/// The five bundled thematic scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThemeName {
    AndersenFairyTales,
    AncientEgyptian,
    WildWest,
    OuterSpace,
    MedievalCastle,
}

impl ThemeName {
    pub fn parse(s: &str) -> Option<ThemeName> {
        match s {
            "AndersenFairyTales" => Some(ThemeName::AndersenFairyTales),
            "AncientEgyptian" => Some(ThemeName::AncientEgyptian),
            "WildWest" => Some(ThemeName::WildWest),
            "OuterSpace" => Some(ThemeName::OuterSpace),
            "MedievalCastle" => Some(ThemeName::MedievalCastle),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ThemeName::AndersenFairyTales => "AndersenFairyTales",
            ThemeName::AncientEgyptian => "AncientEgyptian",
            ThemeName::WildWest => "WildWest",
            ThemeName::OuterSpace => "OuterSpace",
            ThemeName::MedievalCastle => "MedievalCastle",
        }
    }

    pub fn all() -> [ThemeName; 5] {
        [
            ThemeName::AndersenFairyTales,
            ThemeName::AncientEgyptian,
            ThemeName::WildWest,
            ThemeName::OuterSpace,
            ThemeName::MedievalCastle,
        ]
    }
}

/// Injective renaming of object and room identifiers into a themed
/// vocabulary. Renames never touch capabilities, so affordances carry over
/// unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeMap {
    pub theme_name: ThemeName,
    pub object_renames: BTreeMap<String, String>,
    pub room_renames: BTreeMap<String, String>,
}

impl ThemeMap {
    /// Identity map (every lookup falls through to the source name).
    pub fn identity(theme_name: ThemeName) -> ThemeMap {
        ThemeMap {
            theme_name,
            object_renames: BTreeMap::new(),
            room_renames: BTreeMap::new(),
        }
    }

    /// Identity map with explicit entries for every identifier in a scene,
    /// so it satisfies strict coverage checks.
    pub fn identity_for(theme_name: ThemeName, state: &super::WorldState) -> ThemeMap {
        ThemeMap {
            theme_name,
            object_renames: state
                .scene()
                .objects
                .keys()
                .map(|k| (k.clone(), k.clone()))
                .collect(),
            room_renames: state
                .scene()
                .rooms
                .iter()
                .map(|k| (k.clone(), k.clone()))
                .collect(),
        }
    }

    /// Check that no two sources map to one target, across both tables.
    pub fn validate(&self) -> WorldResult<()> {
        let mut targets = BTreeSet::new();
        for (src, dst) in self.object_renames.iter().chain(self.room_renames.iter()) {
            if !targets.insert(dst) {
                return Err(WorldError::Parse {
                    line: 0,
                    msg: format!("theme maps two identifiers to `{dst}`"),
                });
            }
            let _ = src;
        }
        Ok(())
    }

    /// Rename one identifier. In strict mode an identifier without an entry
    /// is an error; otherwise it passes through unchanged.
    pub fn rename(&self, id: &str, strict: bool) -> WorldResult<String> {
        if let Some(t) = self.object_renames.get(id).or_else(|| self.room_renames.get(id)) {
            return Ok(t.clone());
        }
        if strict {
            return Err(WorldError::MissingMapping(id.to_string()));
        }
        Ok(id.to_string())
    }

    /// The inverse map (targets back to sources). Valid because renames are
    /// injective.
    pub fn inverse(&self) -> ThemeMap {
        ThemeMap {
            theme_name: self.theme_name,
            object_renames: self
                .object_renames
                .iter()
                .map(|(k, v)| (v.clone(), k.clone()))
                .collect(),
            room_renames: self
                .room_renames
                .iter()
                .map(|(k, v)| (v.clone(), k.clone()))
                .collect(),
        }
    }
}

/// Structure-preserving rename of a goal and plan into the themed
/// vocabulary. Remapping with the inverse map recovers the input exactly.
pub fn remap_theme(
    goal: &GoalSpec,
    plan: &[Action],
    map: &ThemeMap,
    strict: bool,
) -> WorldResult<(GoalSpec, Vec<Action>)> {
    let rename = |id: &str| map.rename(id, strict);
    let predicates = goal
        .predicates
        .iter()
        .map(|p| {
            Ok(match p {
                Predicate::At { obj, loc } => Predicate::At {
                    obj: rename(obj)?,
                    loc: if loc == "agent" { loc.clone() } else { rename(loc)? },
                },
                Predicate::Holds { obj } => Predicate::Holds { obj: rename(obj)? },
                Predicate::State { obj, flag } => Predicate::State {
                    obj: rename(obj)?,
                    flag: *flag,
                },
            })
        })
        .collect::<WorldResult<Vec<_>>>()?;
    let themed_plan = plan
        .iter()
        .map(|a| {
            Ok(match a {
                Action::Walk(r) => Action::Walk(rename(r)?),
                Action::Grab(o) => Action::Grab(rename(o)?),
                Action::Put(o, d) => Action::Put(rename(o)?, rename(d)?),
                Action::Open(o) => Action::Open(rename(o)?),
                Action::Close(o) => Action::Close(rename(o)?),
                Action::SwitchOn(o) => Action::SwitchOn(rename(o)?),
                Action::SwitchOff(o) => Action::SwitchOff(rename(o)?),
                Action::Clean(o) => Action::Clean(rename(o)?),
            })
        })
        .collect::<WorldResult<Vec<_>>>()?;
    Ok((
        GoalSpec {
            task_name: goal.task_name.clone(),
            predicates,
        },
        themed_plan,
    ))
}

/// Parse a theme file: `format_version: 1`, `theme:` with one of the five
/// scenario names, then `objects:` and `rooms:` sections of
/// `source target` pairs.
pub fn load_theme(text: &str) -> WorldResult<ThemeMap> {
    let parse_err = |line: usize, msg: String| WorldError::Parse { line, msg };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, "format_version: 1")) => {}
        Some((n, other)) => {
            return Err(parse_err(
                n,
                format!("expected `format_version: 1`, found `{other}`"),
            ))
        }
        None => return Err(parse_err(0, "empty theme file".into())),
    }

    let mut theme_name: Option<ThemeName> = None;
    let mut object_renames = BTreeMap::new();
    let mut room_renames = BTreeMap::new();
    let mut section = String::new();
    for (n, line) in lines {
        if let Some(rest) = line.strip_prefix("theme:") {
            let name = rest.trim();
            theme_name = Some(
                ThemeName::parse(name)
                    .ok_or_else(|| parse_err(n, format!("unknown theme `{name}`")))?,
            );
        } else if line == "objects:" || line == "rooms:" {
            section = line.trim_end_matches(':').to_string();
        } else {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [src, dst] = parts.as_slice() else {
                return Err(parse_err(n, format!("rename entries are `source target`, found `{line}`")));
            };
            let table = match section.as_str() {
                "objects" => &mut object_renames,
                "rooms" => &mut room_renames,
                _ => return Err(parse_err(n, "rename entry outside a section".into())),
            };
            if table.insert(src.to_string(), dst.to_string()).is_some() {
                return Err(parse_err(n, format!("duplicate rename for `{src}`")));
            }
        }
    }

    let map = ThemeMap {
        theme_name: theme_name.ok_or_else(|| parse_err(0, "missing theme name".into()))?,
        object_renames,
        room_renames,
    };
    map.validate()?;
    Ok(map)
}
