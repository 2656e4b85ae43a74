//! Two-agent cooperative kitchen gridworld: deliver 3-onion soups for sparse
//! reward, with six shaped features available for densification.

mod features;

pub use features::{densify, densify_raw, DimensionMismatch, ShapingFeatures};

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;

/// Episode length.
pub const HORIZON: usize = 400;
/// Steps a full pot cooks before the soup is ready.
pub const T_COOK: u8 = 10;
/// Onions per soup.
pub const ONIONS_PER_SOUP: u8 = 3;
/// Sparse team reward per delivered soup.
pub const DELIVERY_REWARD: f64 = 20.0;
/// Number of discrete actions per agent.
pub const NUM_ACTIONS: usize = 6;

/// Curated source excerpt describing the shaped features, for prompts that
/// need the environment's reward code as text.
pub const ENV_CODE_EXCERPT: &str = include_str!("env/features.rs");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub fn manhattan(self, other: Pos) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Floor,
    Counter,
    OnionDispenser,
    DishDispenser,
    Pot,
    ServeStation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] =
        [Direction::North, Direction::South, Direction::East, Direction::West];

    /// (dx, dy); y grows downward.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::North => (0, -1),
            Direction::South => (0, 1),
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
    Interact,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay, Action::Interact];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    fn direction(self) -> Option<Direction> {
        match self {
            Action::Up => Some(Direction::North),
            Action::Down => Some(Direction::South),
            Action::Left => Some(Direction::West),
            Action::Right => Some(Direction::East),
            Action::Stay | Action::Interact => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemKind {
    Nothing,
    Onion,
    Dish,
    Soup,
}

impl ItemKind {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub pos: Pos,
    pub orientation: Direction,
    pub held: ItemKind,
}

/// One pot. `ready` implies 3 onions and timer 0; a running timer implies 3
/// onions and not ready.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotState {
    pub onion_count: u8,
    pub cook_timer: u8,
    pub ready: bool,
}

impl PotState {
    pub fn empty() -> Self {
        PotState { onion_count: 0, cook_timer: 0, ready: false }
    }

    pub fn invariants_ok(&self) -> bool {
        let ready_ok = !self.ready || (self.onion_count == ONIONS_PER_SOUP && self.cook_timer == 0);
        let timer_ok =
            self.cook_timer == 0 || (self.onion_count == ONIONS_PER_SOUP && !self.ready);
        ready_ok && timer_ok && self.onion_count <= ONIONS_PER_SOUP
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LayoutError {
    #[error("unknown character {ch:?} at row {row}, column {col}")]
    UnknownCharacter { ch: char, row: usize, col: usize },
    #[error("row {row} has width {got}, expected {expected}")]
    NotRectangular { row: usize, got: usize, expected: usize },
    #[error("layout is empty")]
    Empty,
    #[error("layout has no {0} cell")]
    MissingCellKind(&'static str),
    #[error("expected exactly one each of spawn markers 1 and 2")]
    SpawnCount,
    #[error("border cell at row {row}, column {col} must not be floor")]
    BorderNotWalled { row: usize, col: usize },
    #[error("no bundled layout named {0:?}")]
    UnknownName(String),
}

/// A validated kitchen arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub name: String,
    pub width: usize,
    pub height: usize,
    grid: Vec<CellKind>,
    pub spawn_points: [Pos; 2],
    pub onion_dispensers: Vec<Pos>,
    pub dish_dispensers: Vec<Pos>,
    pub pots: Vec<Pos>,
    pub serve_stations: Vec<Pos>,
}

pub const BUNDLED_LAYOUTS: [&str; 3] = ["random3-mini", "random0-mini", "unident-mini"];

impl Layout {
    /// Parses an ASCII grid. Legend: `X` counter, space floor, `O` onion
    /// dispenser, `D` dish dispenser, `P` pot, `S` serve station, `1`/`2`
    /// spawn floor cells.
    pub fn parse(name: &str, text: &str) -> Result<Layout, LayoutError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(LayoutError::Empty);
        }
        let width = lines[0].chars().count();
        let height = lines.len();
        let mut grid = Vec::with_capacity(width * height);
        let mut spawn1 = None;
        let mut spawn2 = None;
        let mut dup_spawn = false;
        for (row, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != width {
                return Err(LayoutError::NotRectangular { row, got: chars.len(), expected: width });
            }
            for (col, ch) in chars.iter().enumerate() {
                let kind = match ch {
                    'X' => CellKind::Counter,
                    ' ' => CellKind::Floor,
                    'O' => CellKind::OnionDispenser,
                    'D' => CellKind::DishDispenser,
                    'P' => CellKind::Pot,
                    'S' => CellKind::ServeStation,
                    '1' => {
                        dup_spawn |= spawn1.replace(Pos { x: col, y: row }).is_some();
                        CellKind::Floor
                    }
                    '2' => {
                        dup_spawn |= spawn2.replace(Pos { x: col, y: row }).is_some();
                        CellKind::Floor
                    }
                    _ => {
                        return Err(LayoutError::UnknownCharacter { ch: *ch, row, col });
                    }
                };
                grid.push(kind);
            }
        }
        let (spawn1, spawn2) = match (spawn1, spawn2, dup_spawn) {
            (Some(a), Some(b), false) => (a, b),
            _ => return Err(LayoutError::SpawnCount),
        };

        let mut layout = Layout {
            name: name.to_string(),
            width,
            height,
            grid,
            spawn_points: [spawn1, spawn2],
            onion_dispensers: Vec::new(),
            dish_dispensers: Vec::new(),
            pots: Vec::new(),
            serve_stations: Vec::new(),
        };
        for y in 0..height {
            for x in 0..width {
                let pos = Pos { x, y };
                match layout.cell(pos) {
                    CellKind::OnionDispenser => layout.onion_dispensers.push(pos),
                    CellKind::DishDispenser => layout.dish_dispensers.push(pos),
                    CellKind::Pot => layout.pots.push(pos),
                    CellKind::ServeStation => layout.serve_stations.push(pos),
                    CellKind::Floor | CellKind::Counter => {}
                }
                let on_border = x == 0 || y == 0 || x == width - 1 || y == height - 1;
                if on_border && layout.cell(pos) == CellKind::Floor {
                    return Err(LayoutError::BorderNotWalled { row: y, col: x });
                }
            }
        }
        if layout.onion_dispensers.is_empty() {
            return Err(LayoutError::MissingCellKind("OnionDispenser"));
        }
        if layout.dish_dispensers.is_empty() {
            return Err(LayoutError::MissingCellKind("DishDispenser"));
        }
        if layout.pots.is_empty() {
            return Err(LayoutError::MissingCellKind("Pot"));
        }
        if layout.serve_stations.is_empty() {
            return Err(LayoutError::MissingCellKind("ServeStation"));
        }
        Ok(layout)
    }

    /// Loads one of the layouts compiled into the library.
    pub fn bundled(name: &str) -> Result<Layout, LayoutError> {
        let text = match name {
            "random3-mini" => include_str!("../layouts/random3-mini.layout"),
            "random0-mini" => include_str!("../layouts/random0-mini.layout"),
            "unident-mini" => include_str!("../layouts/unident-mini.layout"),
            _ => return Err(LayoutError::UnknownName(name.to_string())),
        };
        Layout::parse(name, text)
    }

    pub fn cell(&self, pos: Pos) -> CellKind {
        self.grid[pos.y * self.width + pos.x]
    }

    pub fn in_bounds(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn is_floor(&self, pos: Pos) -> bool {
        self.cell(pos) == CellKind::Floor
    }

    fn neighbor(&self, pos: Pos, dir: Direction) -> Option<Pos> {
        let (dx, dy) = dir.delta();
        let (nx, ny) = (pos.x as isize + dx, pos.y as isize + dy);
        self.in_bounds(nx, ny).then(|| Pos { x: nx as usize, y: ny as usize })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KitchenState {
    pub layout: Arc<Layout>,
    pub agents: [AgentState; 2],
    /// Parallel to `layout.pots`.
    pub pots: Vec<PotState>,
    /// Items set down on counter cells, at most one per cell, sorted by
    /// (y, x) so equal states compare equal.
    pub counter_items: Vec<(Pos, ItemKind)>,
    pub timestep: usize,
    pub deliveries: usize,
    pub horizon: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StepError {
    #[error("episode already at horizon {0}")]
    HorizonExceeded(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: KitchenState,
    pub sparse_reward: f64,
    pub features: ShapingFeatures,
    pub done: bool,
}

/// Starts an episode: agents empty-handed at the spawn cells (assignment
/// order decided by the seed), pots empty.
pub fn reset(layout: &Arc<Layout>, seed: u64) -> KitchenState {
    reset_with_horizon(layout, seed, HORIZON)
}

pub fn reset_with_horizon(layout: &Arc<Layout>, seed: u64, horizon: usize) -> KitchenState {
    let swap: bool = stream_rng(seed, "env/reset", 0).random();
    let [a, b] = layout.spawn_points;
    let spawns = if swap { [b, a] } else { [a, b] };
    KitchenState {
        layout: Arc::clone(layout),
        agents: spawns.map(|pos| AgentState {
            pos,
            orientation: Direction::North,
            held: ItemKind::Nothing,
        }),
        pots: vec![PotState::empty(); layout.pots.len()],
        counter_items: Vec::new(),
        timestep: 0,
        deliveries: 0,
        horizon,
    }
}

/// Advances one step: pots tick, agents move (conflicts resolved
/// deterministically), then interact in agent order.
pub fn step(state: &KitchenState, actions: [Action; 2]) -> Result<StepOutcome, StepError> {
    if state.timestep >= state.horizon {
        return Err(StepError::HorizonExceeded(state.horizon));
    }
    let mut next = state.clone();
    let layout = Arc::clone(&state.layout);

    for pot in &mut next.pots {
        if pot.cook_timer > 0 {
            pot.cook_timer -= 1;
            if pot.cook_timer == 0 {
                pot.ready = true;
            }
        }
    }

    // Movement: face the chosen direction even when the move is blocked.
    let start = [next.agents[0].pos, next.agents[1].pos];
    let mut target = start;
    for i in 0..2 {
        if let Some(dir) = actions[i].direction() {
            next.agents[i].orientation = dir;
            if let Some(dest) = layout.neighbor(start[i], dir) {
                if layout.is_floor(dest) {
                    target[i] = dest;
                }
            }
        }
    }
    if target[0] == target[1] {
        // A stationary agent keeps its cell; otherwise agent 0 wins the race.
        if target[1] == start[1] {
            target[0] = start[0];
        } else {
            target[1] = start[1];
        }
    } else if target[0] == start[1] && target[1] == start[0] {
        // Position swaps are blocked.
        target = start;
    }
    next.agents[0].pos = target[0];
    next.agents[1].pos = target[1];

    // Interactions, agent 0 first.
    let mut features = ShapingFeatures::zeros();
    let mut sparse = 0.0;
    for i in 0..2 {
        if actions[i] != Action::Interact {
            continue;
        }
        let agent = next.agents[i];
        let Some(faced) = layout.neighbor(agent.pos, agent.orientation) else {
            continue;
        };
        match (layout.cell(faced), agent.held) {
            (CellKind::OnionDispenser, ItemKind::Nothing) => {
                next.agents[i].held = ItemKind::Onion;
            }
            (CellKind::DishDispenser, ItemKind::Nothing) => {
                // A pickup always succeeds, but only a useful one counts:
                // there must be more busy pots than dishes already in play.
                let busy_pots =
                    next.pots.iter().filter(|p| p.ready || p.cook_timer > 0).count();
                let dishes_in_play = next
                    .agents
                    .iter()
                    .filter(|a| a.held == ItemKind::Dish)
                    .count()
                    + next
                        .counter_items
                        .iter()
                        .filter(|(_, item)| *item == ItemKind::Dish)
                        .count();
                next.agents[i].held = ItemKind::Dish;
                if dishes_in_play < busy_pots {
                    features.0[i][1] = 1.0;
                }
            }
            (CellKind::Pot, ItemKind::Onion) => {
                let pot_index = layout.pots.iter().position(|p| *p == faced).expect("pot listed");
                let pot = &mut next.pots[pot_index];
                if pot.onion_count < ONIONS_PER_SOUP && !pot.ready {
                    pot.onion_count += 1;
                    if pot.onion_count == ONIONS_PER_SOUP {
                        pot.cook_timer = T_COOK;
                    }
                    next.agents[i].held = ItemKind::Nothing;
                    features.0[i][0] = 1.0;
                }
            }
            (CellKind::Pot, ItemKind::Dish) => {
                let pot_index = layout.pots.iter().position(|p| *p == faced).expect("pot listed");
                let pot = &mut next.pots[pot_index];
                if pot.ready {
                    *pot = PotState::empty();
                    next.agents[i].held = ItemKind::Soup;
                    features.0[i][2] = 1.0;
                }
            }
            (CellKind::ServeStation, ItemKind::Soup) => {
                next.agents[i].held = ItemKind::Nothing;
                next.deliveries += 1;
                sparse += DELIVERY_REWARD;
            }
            // Counters stash one onion or dish per cell; a plated soup can
            // only go to a serve station. Stash traffic earns nothing.
            (CellKind::Counter, ItemKind::Nothing) => {
                if let Some(slot) = next.counter_items.iter().position(|(p, _)| *p == faced) {
                    next.agents[i].held = next.counter_items.remove(slot).1;
                }
            }
            (CellKind::Counter, held @ (ItemKind::Onion | ItemKind::Dish)) => {
                if !next.counter_items.iter().any(|(p, _)| *p == faced) {
                    let at = next
                        .counter_items
                        .partition_point(|(p, _)| (p.y, p.x) < (faced.y, faced.x));
                    next.counter_items.insert(at, (faced, held));
                    next.agents[i].held = ItemKind::Nothing;
                }
            }
            _ => {}
        }
    }

    next.timestep += 1;
    for i in 0..2 {
        features::distance_features(&layout, &next.agents[i], &next.pots, &mut features.0[i]);
    }
    let done = next.timestep >= next.horizon;
    Ok(StepOutcome { next_state: next, sparse_reward: sparse, features, done })
}

/// Observation width: two 24-value agent blocks (self first) plus 2 globals.
pub const OBS_DIM: usize = 2 * AGENT_BLOCK + 2;
const AGENT_BLOCK: usize = 24;

/// Egocentric observation for one agent: own block, other agent's block,
/// then global pot-readiness fraction and time fraction.
pub fn observe(state: &KitchenState, agent_index: usize) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    agent_block(state, agent_index, &mut obs);
    agent_block(state, 1 - agent_index, &mut obs);
    let ready = state.pots.iter().filter(|p| p.ready).count();
    obs.push(ready as f64 / state.pots.len() as f64);
    obs.push(state.timestep as f64 / state.horizon as f64);
    debug_assert_eq!(obs.len(), OBS_DIM);
    obs
}

fn agent_block(state: &KitchenState, i: usize, obs: &mut Vec<f64>) {
    let layout = &state.layout;
    let agent = &state.agents[i];
    let w = layout.width as f64;
    let h = layout.height as f64;

    obs.push(agent.pos.x as f64 / (w - 1.0));
    obs.push(agent.pos.y as f64 / (h - 1.0));
    for dir in Direction::ALL {
        obs.push(if agent.orientation == dir { 1.0 } else { 0.0 });
    }
    for item in [ItemKind::Nothing, ItemKind::Onion, ItemKind::Dish, ItemKind::Soup] {
        obs.push(if agent.held == item { 1.0 } else { 0.0 });
    }
    for targets in [
        &layout.onion_dispensers,
        &layout.dish_dispensers,
        &layout.pots,
        &layout.serve_stations,
    ] {
        let nearest = nearest_of(agent.pos, targets).expect("layout has each kind");
        obs.push((nearest.x as f64 - agent.pos.x as f64) / w);
        obs.push((nearest.y as f64 - agent.pos.y as f64) / h);
    }
    let ready_pots: Vec<Pos> = layout
        .pots
        .iter()
        .zip(&state.pots)
        .filter(|(_, p)| p.ready)
        .map(|(pos, _)| *pos)
        .collect();
    match nearest_of(agent.pos, &ready_pots) {
        Some(pos) => {
            obs.push(1.0);
            obs.push((pos.x as f64 - agent.pos.x as f64) / w);
            obs.push((pos.y as f64 - agent.pos.y as f64) / h);
        }
        None => {
            obs.push(0.0);
            obs.push(0.0);
            obs.push(0.0);
        }
    }
    let nearest_pot = nearest_of(agent.pos, &layout.pots).expect("layout has a pot");
    let pot_index = layout.pots.iter().position(|p| *p == nearest_pot).expect("pot listed");
    let pot = &state.pots[pot_index];
    obs.push(pot.onion_count as f64 / ONIONS_PER_SOUP as f64);
    obs.push(pot.cook_timer as f64 / T_COOK as f64);
    obs.push(if pot.ready { 1.0 } else { 0.0 });
}

fn nearest_of(from: Pos, targets: &[Pos]) -> Option<Pos> {
    targets.iter().copied().min_by_key(|t| from.manhattan(*t))
}

/// Sanity checks used by fuzz tests: state-level invariants that must hold
/// after any legal step.
pub fn state_invariants_ok(state: &KitchenState) -> bool {
    let distinct = state.agents[0].pos != state.agents[1].pos;
    let on_floor = state.agents.iter().all(|a| state.layout.is_floor(a.pos));
    let pots_ok = state.pots.iter().all(PotState::invariants_ok);
    distinct && on_floor && pots_ok && state.timestep <= state.horizon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shaping::NUM_FEATURES;
    use rand::Rng;

    fn arc(layout: Layout) -> Arc<Layout> {
        Arc::new(layout)
    }

    fn tiny() -> Arc<Layout> {
        // 5x4 with every required kind on the border.
        arc(Layout::parse("tiny", "XXPXX\nO1 2D\nX   S\nXXXXX").unwrap())
    }

    /// Random-walk helper with seeded action choice.
    fn random_actions(rng: &mut impl Rng) -> [Action; 2] {
        [(); 2].map(|_| Action::ALL[rng.random_range(0..NUM_ACTIONS)])
    }

    #[test]
    fn parse_minimal_layout() {
        let layout = tiny();
        assert_eq!((layout.width, layout.height), (5, 4));
        assert_eq!(layout.spawn_points, [Pos { x: 1, y: 1 }, Pos { x: 3, y: 1 }]);
        assert_eq!(layout.cell(Pos { x: 2, y: 0 }), CellKind::Pot);
        assert_eq!(layout.cell(Pos { x: 1, y: 1 }), CellKind::Floor);
    }

    #[test]
    fn parse_rejects_missing_kind() {
        let err = Layout::parse("t", "XXXXX\nO1 2D\nX   S\nXXXXX").unwrap_err();
        assert_eq!(err, LayoutError::MissingCellKind("Pot"));
    }

    #[test]
    fn parse_rejects_unknown_character() {
        let err = Layout::parse("t", "XXPXX\nO1?2D\nX   S\nXXXXX").unwrap_err();
        assert_eq!(err, LayoutError::UnknownCharacter { ch: '?', row: 1, col: 2 });
    }

    #[test]
    fn parse_rejects_ragged_rows() {
        let err = Layout::parse("t", "XXPXX\nO1 2D\nX  S\nXXXXX").unwrap_err();
        assert_eq!(err, LayoutError::NotRectangular { row: 2, got: 4, expected: 5 });
    }

    #[test]
    fn parse_rejects_open_border() {
        let err = Layout::parse("t", "XXPXX\nO1 2D\nX    \nXXSXX").unwrap_err();
        assert_eq!(err, LayoutError::BorderNotWalled { row: 2, col: 4 });
    }

    #[test]
    fn parse_rejects_bad_spawn_counts() {
        let err = Layout::parse("t", "XXPXX\nO1 1D\nX   S\nXXXXX").unwrap_err();
        assert_eq!(err, LayoutError::SpawnCount);
        let err = Layout::parse("t", "XXPXX\nO1  D\nX   S\nXXXXX").unwrap_err();
        assert_eq!(err, LayoutError::SpawnCount);
    }

    #[test]
    fn bundled_layouts_validate() {
        for name in BUNDLED_LAYOUTS {
            let layout = Layout::bundled(name).unwrap();
            assert_eq!(layout.name, name);
        }
        assert!(matches!(Layout::bundled("nope"), Err(LayoutError::UnknownName(_))));
    }

    #[test]
    fn reset_places_agents_at_spawns() {
        let layout = tiny();
        let state = reset(&layout, 0);
        let mut positions = [state.agents[0].pos, state.agents[1].pos];
        positions.sort_by_key(|p| (p.y, p.x));
        assert_eq!(positions, layout.spawn_points);
        assert!(state.agents.iter().all(|a| a.held == ItemKind::Nothing));
        assert_eq!((state.timestep, state.deliveries), (0, 0));
        assert!(state.pots.iter().all(|p| *p == PotState::empty()));
    }

    #[test]
    fn reset_is_deterministic_and_seed_only_swaps() {
        let layout = tiny();
        assert_eq!(reset(&layout, 3), reset(&layout, 3));
        let spawn_set = |s: KitchenState| {
            let mut v = [s.agents[0].pos, s.agents[1].pos];
            v.sort_by_key(|p| (p.y, p.x));
            v
        };
        for seed in 0..8 {
            assert_eq!(spawn_set(reset(&layout, seed)), layout.spawn_points);
        }
        // Both assignments occur across seeds.
        let first = |seed| reset(&layout, seed).agents[0].pos;
        let seen: std::collections::HashSet<Pos> = (0..16).map(first).collect();
        assert_eq!(seen.len(), 2);
    }

    /// Hand-built state: agents at given floor cells, custom held items.
    fn place(
        layout: &Arc<Layout>,
        a0: (Pos, Direction, ItemKind),
        a1: (Pos, Direction, ItemKind),
    ) -> KitchenState {
        let mut state = reset(layout, 0);
        state.agents[0] = AgentState { pos: a0.0, orientation: a0.1, held: a0.2 };
        state.agents[1] = AgentState { pos: a1.0, orientation: a1.1, held: a1.2 };
        state
    }

    #[test]
    fn third_onion_starts_the_cook() {
        let layout = tiny();
        let mut state = place(
            &layout,
            (Pos { x: 2, y: 1 }, Direction::North, ItemKind::Onion),
            (Pos { x: 3, y: 2 }, Direction::South, ItemKind::Nothing),
        );
        state.pots[0] = PotState { onion_count: 2, cook_timer: 0, ready: false };
        let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
        let pot = out.next_state.pots[0];
        assert_eq!((pot.onion_count, pot.cook_timer, pot.ready), (3, T_COOK, false));
        assert_eq!(out.features.0[0][0], 1.0);
        assert_eq!(out.next_state.agents[0].held, ItemKind::Nothing);
    }

    #[test]
    fn counters_stash_and_return_items() {
        let layout = tiny();
        let mut state = place(
            &layout,
            (Pos { x: 1, y: 1 }, Direction::North, ItemKind::Onion),
            (Pos { x: 3, y: 1 }, Direction::North, ItemKind::Dish),
        );
        state.counter_items = vec![(Pos { x: 3, y: 0 }, ItemKind::Dish)];
        // Agent 0 stashes on the empty counter; agent 1's target is taken.
        let out = step(&state, [Action::Interact, Action::Interact]).unwrap();
        let next = &out.next_state;
        assert_eq!(next.agents[0].held, ItemKind::Nothing);
        assert_eq!(next.agents[1].held, ItemKind::Dish);
        assert_eq!(
            next.counter_items,
            vec![(Pos { x: 1, y: 0 }, ItemKind::Onion), (Pos { x: 3, y: 0 }, ItemKind::Dish)]
        );
        for agent in 0..2 {
            assert_eq!(out.features.0[agent][..3], [0.0; 3]);
        }
        // Taking the stash back frees the cell and pays nothing either.
        let out = step(next, [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.next_state.agents[0].held, ItemKind::Onion);
        assert_eq!(out.next_state.counter_items, vec![(Pos { x: 3, y: 0 }, ItemKind::Dish)]);
        assert_eq!(out.features.0[0][..3], [0.0; 3]);
    }

    #[test]
    fn soup_cannot_be_set_down_on_a_counter() {
        let layout = tiny();
        let state = place(
            &layout,
            (Pos { x: 1, y: 1 }, Direction::North, ItemKind::Soup),
            (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Nothing),
        );
        let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.next_state.agents[0].held, ItemKind::Soup);
        assert!(out.next_state.counter_items.is_empty());
    }

    #[test]
    fn cook_timer_counts_down_then_soup_flows_to_delivery() {
        let layout = tiny();
        let mut state = place(
            &layout,
            (Pos { x: 2, y: 1 }, Direction::North, ItemKind::Dish),
            (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Nothing),
        );
        state.pots[0] = PotState { onion_count: 3, cook_timer: T_COOK, ready: false };
        // Not ready during the countdown.
        for _ in 0..(T_COOK - 1) {
            let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
            assert_eq!(out.next_state.agents[0].held, ItemKind::Dish);
            state = out.next_state;
        }
        // Tick T_COOK makes it ready, and the same step's interact grabs it.
        let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.next_state.agents[0].held, ItemKind::Soup);
        assert_eq!(out.features.0[0][2], 1.0);
        assert_eq!(out.next_state.pots[0], PotState::empty());

        // Walk to the serve station at (4,2) and deliver.
        let mut state = out.next_state;
        state.agents[0].pos = Pos { x: 3, y: 2 };
        state.agents[0].orientation = Direction::East;
        state.agents[1].pos = Pos { x: 1, y: 1 };
        let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.sparse_reward, DELIVERY_REWARD);
        assert_eq!(out.next_state.deliveries, 1);
        assert_eq!(out.next_state.agents[0].held, ItemKind::Nothing);
    }

    #[test]
    fn dish_pickup_sets_event_feature_only_while_a_pot_is_busy() {
        let layout = tiny();
        let mut state = place(
            &layout,
            (Pos { x: 3, y: 1 }, Direction::East, ItemKind::Nothing),
            (Pos { x: 1, y: 1 }, Direction::West, ItemKind::Nothing),
        );
        state.pots[0] = PotState { onion_count: 3, cook_timer: 5, ready: false };
        let out = step(&state, [Action::Interact, Action::Interact]).unwrap();
        assert_eq!(out.next_state.agents[0].held, ItemKind::Dish);
        assert_eq!(out.features.0[0][1], 1.0);
        // Agent 1 faced the onion dispenser: item but no event feature, and
        // the pot-closeness gate opens. Pot (2,0) from (1,1): d = 2.
        assert_eq!(out.next_state.agents[1].held, ItemKind::Onion);
        assert_eq!(out.features.0[1][..3], [0.0, 0.0, 0.0]);
        assert!((out.features.0[1][4] - (1.0 - 2.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn surplus_dish_pickups_earn_no_feature() {
        let layout = tiny();
        let a0 = (Pos { x: 3, y: 1 }, Direction::East, ItemKind::Nothing);
        let a1 = (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Nothing);

        // Idle pots: the pickup itself works but the feature stays 0.
        let out = step(&place(&layout, a0, a1), [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.next_state.agents[0].held, ItemKind::Dish);
        assert_eq!(out.features.0[0][1], 0.0);

        // One busy pot but a dish already in play (held or stashed).
        let mut state = place(&layout, a0, (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Dish));
        state.pots[0] = PotState { onion_count: 3, cook_timer: 0, ready: true };
        let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.features.0[0][1], 0.0);

        let mut state = place(&layout, a0, a1);
        state.pots[0] = PotState { onion_count: 3, cook_timer: 0, ready: true };
        state.counter_items = vec![(Pos { x: 0, y: 0 }, ItemKind::Dish)];
        let out = step(&state, [Action::Interact, Action::Stay]).unwrap();
        assert_eq!(out.features.0[0][1], 0.0);
    }

    #[test]
    fn same_target_conflict_goes_to_agent_zero() {
        let layout = tiny();
        let contested = Pos { x: 2, y: 2 };
        let state = place(
            &layout,
            (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Nothing),
            (Pos { x: 3, y: 2 }, Direction::North, ItemKind::Nothing),
        );
        let out = step(&state, [Action::Right, Action::Left]).unwrap();
        assert_eq!(out.next_state.agents[0].pos, contested);
        assert_eq!(out.next_state.agents[1].pos, Pos { x: 3, y: 2 });

        // Mirrored start: agent 0 still wins from the other side.
        let state = place(
            &layout,
            (Pos { x: 3, y: 2 }, Direction::North, ItemKind::Nothing),
            (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Nothing),
        );
        let out = step(&state, [Action::Left, Action::Right]).unwrap();
        assert_eq!(out.next_state.agents[0].pos, contested);
        assert_eq!(out.next_state.agents[1].pos, Pos { x: 1, y: 2 });
    }

    #[test]
    fn stationary_agent_blocks_and_swaps_are_blocked() {
        let layout = tiny();
        let state = place(
            &layout,
            (Pos { x: 2, y: 2 }, Direction::North, ItemKind::Nothing),
            (Pos { x: 3, y: 2 }, Direction::North, ItemKind::Nothing),
        );
        // Agent 1 tries to enter agent 0's cell while agent 0 stays.
        let out = step(&state, [Action::Stay, Action::Left]).unwrap();
        assert_eq!(out.next_state.agents[0].pos, Pos { x: 2, y: 2 });
        assert_eq!(out.next_state.agents[1].pos, Pos { x: 3, y: 2 });
        assert_eq!(out.next_state.agents[1].orientation, Direction::West);

        // And the mirror: agent 0 cannot enter stationary agent 1's cell.
        let out = step(&state, [Action::Right, Action::Stay]).unwrap();
        assert_eq!(out.next_state.agents[0].pos, Pos { x: 2, y: 2 });
        assert_eq!(out.next_state.agents[1].pos, Pos { x: 3, y: 2 });

        // Swap attempt: both stay.
        let out = step(&state, [Action::Right, Action::Left]).unwrap();
        assert_eq!(out.next_state.agents[0].pos, Pos { x: 2, y: 2 });
        assert_eq!(out.next_state.agents[1].pos, Pos { x: 3, y: 2 });
    }

    #[test]
    fn walls_block_but_update_orientation() {
        let layout = tiny();
        let state = place(
            &layout,
            (Pos { x: 1, y: 1 }, Direction::South, ItemKind::Nothing),
            (Pos { x: 3, y: 2 }, Direction::North, ItemKind::Nothing),
        );
        let out = step(&state, [Action::Up, Action::Stay]).unwrap();
        assert_eq!(out.next_state.agents[0].pos, Pos { x: 1, y: 1 });
        assert_eq!(out.next_state.agents[0].orientation, Direction::North);
    }

    #[test]
    fn trajectories_are_bit_identical_across_runs() {
        let layout = Arc::new(Layout::bundled("random3-mini").unwrap());
        let run = || {
            let mut rng = crate::rng::stream_rng(11, "env-test/actions", 0);
            let mut state = reset(&layout, 11);
            let mut log = Vec::new();
            for _ in 0..200 {
                let out = step(&state, random_actions(&mut rng)).unwrap();
                log.push((out.sparse_reward.to_bits(), out.next_state.agents, out.features));
                state = out.next_state;
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn horizon_terminates_and_further_steps_fail() {
        let layout = tiny();
        let mut state = reset_with_horizon(&layout, 0, 5);
        for t in 0..5 {
            let out = step(&state, [Action::Stay, Action::Stay]).unwrap();
            assert_eq!(out.done, t == 4);
            state = out.next_state;
        }
        assert_eq!(
            step(&state, [Action::Stay, Action::Stay]).unwrap_err(),
            StepError::HorizonExceeded(5)
        );
    }

    #[test]
    fn random_walk_keeps_invariants_and_reward_accounting() {
        let layout = Arc::new(Layout::bundled("random0-mini").unwrap());
        for seed in 0..5 {
            let mut rng = crate::rng::stream_rng(seed, "env-test/walk", 0);
            let mut state = reset(&layout, seed);
            let mut sparse_total = 0.0;
            let mut interacts = 0usize;
            let mut event_sum = 0.0;
            for _ in 0..HORIZON {
                let actions = random_actions(&mut rng);
                interacts += actions.iter().filter(|a| **a == Action::Interact).count();
                let out = step(&state, actions).unwrap();
                assert!(out.sparse_reward == 0.0
                    || out.sparse_reward == 20.0
                    || out.sparse_reward == 40.0);
                assert!(state_invariants_ok(&out.next_state), "seed {seed}");
                for agent in 0..2 {
                    for k in 0..3 {
                        assert!(out.features.0[agent][k] == 0.0 || out.features.0[agent][k] == 1.0);
                        event_sum += out.features.0[agent][k];
                    }
                    for k in 3..NUM_FEATURES {
                        let f = out.features.0[agent][k];
                        assert!((0.0..=1.0).contains(&f));
                    }
                }
                sparse_total += out.sparse_reward;
                state = out.next_state;
            }
            assert_eq!(sparse_total, 20.0 * state.deliveries as f64);
            assert!(event_sum <= interacts as f64);
        }
    }

    #[test]
    fn observation_shape_and_swap_symmetry() {
        let layout = Arc::new(Layout::bundled("unident-mini").unwrap());
        let mut rng = crate::rng::stream_rng(2, "env-test/obs", 0);
        let mut state = reset(&layout, 2);
        for _ in 0..300 {
            let o0 = observe(&state, 0);
            let o1 = observe(&state, 1);
            assert_eq!(o0.len(), OBS_DIM);
            assert_eq!(o1.len(), OBS_DIM);
            assert_eq!(o0[..AGENT_BLOCK], o1[AGENT_BLOCK..2 * AGENT_BLOCK]);
            assert_eq!(o0[AGENT_BLOCK..2 * AGENT_BLOCK], o1[..AGENT_BLOCK]);
            assert_eq!(o0[2 * AGENT_BLOCK..], o1[2 * AGENT_BLOCK..]);
            state = step(&state, random_actions(&mut rng)).unwrap().next_state;
        }
    }

    #[test]
    fn held_onion_one_hot_ordering() {
        let layout = tiny();
        let state = place(
            &layout,
            (Pos { x: 1, y: 1 }, Direction::North, ItemKind::Onion),
            (Pos { x: 3, y: 1 }, Direction::North, ItemKind::Nothing),
        );
        let obs = observe(&state, 0);
        // Block layout: pose 2, orientation 4, held 4.
        assert_eq!(&obs[6..10], &[0.0, 1.0, 0.0, 0.0]);
        let other = observe(&state, 1);
        assert_eq!(&other[6..10], &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn distance_features_follow_held_item_gating() {
        let layout = tiny();
        // Holding nothing: dish-dispenser closeness only.
        let state = place(
            &layout,
            (Pos { x: 3, y: 1 }, Direction::North, ItemKind::Nothing),
            (Pos { x: 1, y: 2 }, Direction::North, ItemKind::Onion),
        );
        let out = step(&state, [Action::Stay, Action::Stay]).unwrap();
        let f0 = out.features.0[0];
        let f1 = out.features.0[1];
        // Agent 0 next to dish dispenser at (4,1): d=1, 1 - 1/9.
        assert!((f0[3] - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
        assert_eq!((f0[4], f0[5]), (0.0, 0.0));
        // Agent 1 holds an onion: pot closeness only. Pot (2,0) from (1,2): d=3.
        assert_eq!(f1[3], 0.0);
        assert!((f1[4] - (1.0 - 3.0 / 9.0)).abs() < 1e-12);
        assert_eq!(f1[5], 0.0);

        // Dish in hand but nothing ready: no soup-distance signal.
        let state = place(
            &layout,
            (Pos { x: 2, y: 1 }, Direction::North, ItemKind::Dish),
            (Pos { x: 1, y: 1 }, Direction::North, ItemKind::Nothing),
        );
        let out = step(&state, [Action::Stay, Action::Stay]).unwrap();
        assert_eq!(out.features.0[0][5], 0.0);

        // Dish in hand with a ready pot: gated feature turns on.
        let mut state = state;
        state.pots[0] = PotState { onion_count: 3, cook_timer: 0, ready: true };
        let out = step(&state, [Action::Stay, Action::Stay]).unwrap();
        assert!((out.features.0[0][5] - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn densify_hand_examples() {
        use crate::shaping::ShapingVector;
        let mut features = ShapingFeatures::zeros();
        assert_eq!(densify(20.0, &features, &ShapingVector::zeros()), 20.0);
        features.0[0][0] = 1.0;
        let weights = ShapingVector([10.0, 8.0, 2.0, 3.0, 5.0, 0.0]);
        assert_eq!(densify(0.0, &features, &weights), 10.0);
        assert_eq!(densify(20.0, &ShapingFeatures::zeros(), &weights), 20.0);
        // Team summing: both agents contribute.
        features.0[1][0] = 1.0;
        assert_eq!(densify(0.0, &features, &weights), 20.0);
    }

    #[test]
    fn densify_raw_checks_arity() {
        assert_eq!(densify_raw(1.0, &[0.5; 6], &[2.0; 6]), Ok(7.0));
        assert_eq!(densify_raw(0.0, &[0.0; 6], &[1.0; 5]), Err(DimensionMismatch { got: 5 }));
        assert_eq!(densify_raw(0.0, &[0.0; 4], &[1.0; 6]), Err(DimensionMismatch { got: 4 }));
    }

    #[test]
    fn reward_decomposition_identity() {
        use crate::shaping::ShapingVector;
        let layout = Arc::new(Layout::bundled("random3-mini").unwrap());
        let weights = ShapingVector([1.5, 0.0, 7.25, 3.0, 0.5, 10.0]);
        let mut rng = crate::rng::stream_rng(9, "env-test/decomp", 0);
        let mut state = reset(&layout, 9);
        let mut densified_total = 0.0;
        let mut sparse_total = 0.0;
        let mut feature_totals = [0.0; NUM_FEATURES];
        for _ in 0..HORIZON {
            let out = step(&state, random_actions(&mut rng)).unwrap();
            densified_total += densify(out.sparse_reward, &out.features, &weights);
            sparse_total += out.sparse_reward;
            for (total, f) in feature_totals.iter_mut().zip(out.features.team_sum()) {
                *total += f;
            }
            state = out.next_state;
        }
        let recomposed = sparse_total
            + weights.0.iter().zip(&feature_totals).map(|(w, f)| w * f).sum::<f64>();
        assert!((densified_total - recomposed).abs() < 1e-9);
    }
}
