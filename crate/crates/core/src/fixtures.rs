//! Bundled scene, task suite, and theme files, embedded so library users and
//! tests never depend on working-directory layout. The same files ship under
//! `crates/core/assets/` for CLI use.

use crate::world::{self, GoalSpec, ThemeMap, ThemeName, WorldState};

pub const APARTMENT_SCENE: &str = include_str!("../assets/apartment.scene");
pub const APARTMENT_TASKS: &str = include_str!("../assets/apartment.tasks");
pub const THEME_MEDIEVAL_CASTLE: &str = include_str!("../assets/themes/medieval_castle.theme");
pub const THEME_ANDERSEN_FAIRY_TALES: &str =
    include_str!("../assets/themes/andersen_fairy_tales.theme");
pub const THEME_ANCIENT_EGYPTIAN: &str = include_str!("../assets/themes/ancient_egyptian.theme");
pub const THEME_WILD_WEST: &str = include_str!("../assets/themes/wild_west.theme");
pub const THEME_OUTER_SPACE: &str = include_str!("../assets/themes/outer_space.theme");

/// The bundled 3-room / 8-object apartment at clock 0.
pub fn apartment() -> WorldState {
    world::load_scene(APARTMENT_SCENE).expect("bundled scene parses")
}

/// The bundled 12-task suite, ordered by gold plan length 1..=12.
pub fn apartment_goals() -> Vec<GoalSpec> {
    world::load_goals(APARTMENT_TASKS).expect("bundled tasks parse")
}

/// All five bundled theme maps.
pub fn themes() -> Vec<ThemeMap> {
    [
        THEME_ANDERSEN_FAIRY_TALES,
        THEME_ANCIENT_EGYPTIAN,
        THEME_WILD_WEST,
        THEME_OUTER_SPACE,
        THEME_MEDIEVAL_CASTLE,
    ]
    .iter()
    .map(|t| world::load_theme(t).expect("bundled theme parses"))
    .collect()
}

/// Look up one bundled theme by name.
pub fn theme(name: ThemeName) -> ThemeMap {
    themes()
        .into_iter()
        .find(|t| t.theme_name == name)
        .expect("all five themes bundled")
}
