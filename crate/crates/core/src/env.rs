//! Urban search-and-rescue gridworld.
//!
//! The world is a 4 x 5 grid of rooms. Row 0 is the northern edge and column 0
//! the western edge. Two agents share the grid: an engineer who clears rubble
//! and a medic who triages victims. Agents act in strict alternation starting
//! with the engineer, and every room an agent enters becomes explored for the
//! whole team.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROWS: usize = 4;
pub const COLS: usize = 5;
pub const NUM_ROOMS: usize = ROWS * COLS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid scenario: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{action} is not legal for the {agent} at {at}")]
    IllegalAction {
        agent: AgentId,
        action: Action,
        at: RoomCoord,
    },
    #[error("it is the {expected}'s turn, not the {got}'s")]
    OutOfTurn { expected: AgentId, got: AgentId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawCoord")]
pub struct RoomCoord {
    pub row: u8,
    pub col: u8,
}

#[derive(Deserialize)]
struct RawCoord {
    row: u8,
    col: u8,
}

impl TryFrom<RawCoord> for RoomCoord {
    type Error = String;

    fn try_from(raw: RawCoord) -> Result<Self, Self::Error> {
        RoomCoord::new(raw.row, raw.col)
            .ok_or_else(|| format!("room ({}, {}) is outside the 4x5 grid", raw.row, raw.col))
    }
}

impl RoomCoord {
    pub fn new(row: u8, col: u8) -> Option<Self> {
        ((row as usize) < ROWS && (col as usize) < COLS).then_some(Self { row, col })
    }

    pub fn from_index(idx: usize) -> Self {
        assert!(idx < NUM_ROOMS, "room index {idx} out of range");
        Self {
            row: (idx / COLS) as u8,
            col: (idx % COLS) as u8,
        }
    }

    pub fn index(self) -> usize {
        self.row as usize * COLS + self.col as usize
    }

    /// The neighbouring room in `dir`, if it lies inside the grid.
    pub fn neighbor(self, dir: Direction) -> Option<Self> {
        let (dr, dc) = dir.delta();
        let row = self.row as i32 + dr;
        let col = self.col as i32 + dc;
        if row < 0 || col < 0 {
            return None;
        }
        RoomCoord::new(row as u8, col as u8)
    }

    pub fn manhattan(self, other: RoomCoord) -> u32 {
        self.row.abs_diff(other.row) as u32 + self.col.abs_diff(other.col) as u32
    }
}

impl fmt::Display for RoomCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Cardinal directions in the fixed tie-break order used everywhere: N, S, E, W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::East => (0, 1),
            Direction::West => (0, -1),
        }
    }

    /// Feature code: 1 = N, 2 = S, 3 = E, 4 = W (0 is reserved for "none").
    pub fn code(self) -> u8 {
        match self {
            Direction::North => 1,
            Direction::South => 2,
            Direction::East => 3,
            Direction::West => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Direction::North),
            2 => Some(Direction::South),
            3 => Some(Direction::East),
            4 => Some(Direction::West),
            _ => None,
        }
    }

    pub fn move_action(self) -> Action {
        match self {
            Direction::North => Action::MoveNorth,
            Direction::South => Action::MoveSouth,
            Direction::East => Action::MoveEast,
            Direction::West => Action::MoveWest,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Victim {
    #[default]
    None,
    Visible,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Room {
    pub has_rubble: bool,
    pub victim: Victim,
    pub explored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentId {
    Engineer,
    Medic,
}

impl AgentId {
    pub const ALL: [AgentId; 2] = [AgentId::Engineer, AgentId::Medic];

    pub fn other(self) -> Self {
        match self {
            AgentId::Engineer => AgentId::Medic,
            AgentId::Medic => AgentId::Engineer,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentId::Engineer => "engineer",
            AgentId::Medic => "medic",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "engineer" => Ok(AgentId::Engineer),
            "medic" => Ok(AgentId::Medic),
            other => Err(format!("unknown agent role `{other}` (expected engineer or medic)")),
        }
    }
}

/// Agent actions. Declaration order is the tie-break order for majority votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    MoveNorth,
    MoveSouth,
    MoveEast,
    MoveWest,
    RemoveRubble,
    TriageVictim,
    Wait,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::MoveNorth,
        Action::MoveSouth,
        Action::MoveEast,
        Action::MoveWest,
        Action::RemoveRubble,
        Action::TriageVictim,
        Action::Wait,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::MoveNorth => Some(Direction::North),
            Action::MoveSouth => Some(Direction::South),
            Action::MoveEast => Some(Direction::East),
            Action::MoveWest => Some(Direction::West),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveNorth => "MoveNorth",
            Action::MoveSouth => "MoveSouth",
            Action::MoveEast => "MoveEast",
            Action::MoveWest => "MoveWest",
            Action::RemoveRubble => "RemoveRubble",
            Action::TriageVictim => "TriageVictim",
            Action::Wait => "Wait",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Positions {
    pub engineer: RoomCoord,
    pub medic: RoomCoord,
}

impl Positions {
    pub fn get(&self, agent: AgentId) -> RoomCoord {
        match agent {
            AgentId::Engineer => self.engineer,
            AgentId::Medic => self.medic,
        }
    }

    fn set(&mut self, agent: AgentId, at: RoomCoord) {
        match agent {
            AgentId::Engineer => self.engineer = at,
            AgentId::Medic => self.medic = at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_victims: u32,
    pub n_rubble: u32,
    /// Probability that a victim placed in a rubble room starts hidden.
    pub p_hidden: f64,
    pub engineer_start: RoomCoord,
    pub medic_start: RoomCoord,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_victims: 3,
            n_rubble: 4,
            p_hidden: 0.5,
            engineer_start: RoomCoord { row: 3, col: 0 },
            medic_start: RoomCoord { row: 3, col: 4 },
        }
    }
}

impl ScenarioConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_victims as usize + self.n_rubble as usize > NUM_ROOMS {
            return Err(EnvError::InvalidConfig {
                field: "n_victims",
                reason: format!(
                    "{} victims + {} rubble exceeds the {NUM_ROOMS} rooms of the grid",
                    self.n_victims, self.n_rubble
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.p_hidden) {
            return Err(EnvError::InvalidConfig {
                field: "p_hidden",
                reason: format!("{} is not a probability", self.p_hidden),
            });
        }
        Ok(())
    }
}

/// Full ground-truth state of an episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    /// Row-major: `rooms[row][col]`.
    pub rooms: [[Room; COLS]; ROWS],
    pub positions: Positions,
    pub rescued_count: u32,
    pub timestep: u32,
    pub whose_turn: AgentId,
}

impl WorldState {
    pub fn room(&self, at: RoomCoord) -> &Room {
        &self.rooms[at.row as usize][at.col as usize]
    }

    pub fn room_mut(&mut self, at: RoomCoord) -> &mut Room {
        &mut self.rooms[at.row as usize][at.col as usize]
    }

    pub fn position(&self, agent: AgentId) -> RoomCoord {
        self.positions.get(agent)
    }

    pub fn coords() -> impl Iterator<Item = RoomCoord> {
        (0..NUM_ROOMS).map(RoomCoord::from_index)
    }

    fn count_rooms(&self, pred: impl Fn(&Room) -> bool) -> u32 {
        self.rooms.iter().flatten().filter(|r| pred(r)).count() as u32
    }

    pub fn visible_victims(&self) -> u32 {
        self.count_rooms(|r| r.victim == Victim::Visible)
    }

    pub fn hidden_victims(&self) -> u32 {
        self.count_rooms(|r| r.victim == Victim::Hidden)
    }

    pub fn rubble_count(&self) -> u32 {
        self.count_rooms(|r| r.has_rubble)
    }

    pub fn explored_count(&self) -> u32 {
        self.count_rooms(|r| r.explored)
    }

    pub fn victims_total(&self) -> u32 {
        self.rescued_count + self.visible_victims() + self.hidden_victims()
    }
}

/// Build the initial state for `config`. Placement is a pure function of the seed.
pub fn new_scenario(config: &ScenarioConfig) -> Result<WorldState, EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rooms = [[Room::default(); COLS]; ROWS];

    let mut order: Vec<usize> = (0..NUM_ROOMS).collect();
    order.shuffle(&mut rng);
    for &idx in order.iter().take(config.n_rubble as usize) {
        let at = RoomCoord::from_index(idx);
        rooms[at.row as usize][at.col as usize].has_rubble = true;
    }

    order.shuffle(&mut rng);
    for &idx in order.iter().take(config.n_victims as usize) {
        let at = RoomCoord::from_index(idx);
        let room = &mut rooms[at.row as usize][at.col as usize];
        // Draw for every victim so the stream does not depend on rubble layout.
        let roll: f64 = rng.random();
        room.victim = if room.has_rubble && roll < config.p_hidden {
            Victim::Hidden
        } else {
            Victim::Visible
        };
    }

    let mut state = WorldState {
        rooms,
        positions: Positions {
            engineer: config.engineer_start,
            medic: config.medic_start,
        },
        rescued_count: 0,
        timestep: 0,
        whose_turn: AgentId::Engineer,
    };
    for agent in AgentId::ALL {
        let at = state.position(agent);
        state.room_mut(at).explored = true;
    }
    Ok(state)
}

/// Legal actions in canonical action order.
pub fn legal_actions(state: &WorldState, agent: AgentId) -> Vec<Action> {
    let at = state.position(agent);
    let room = state.room(at);
    let mut out = Vec::with_capacity(7);
    for dir in Direction::ALL {
        if at.neighbor(dir).is_some() {
            out.push(dir.move_action());
        }
    }
    if agent == AgentId::Engineer && room.has_rubble {
        out.push(Action::RemoveRubble);
    }
    if agent == AgentId::Medic && room.victim == Victim::Visible {
        out.push(Action::TriageVictim);
    }
    out.push(Action::Wait);
    out
}

pub fn is_legal(state: &WorldState, agent: AgentId, action: Action) -> bool {
    legal_actions(state, agent).contains(&action)
}

/// Apply one action, returning the successor state. The input is never modified.
pub fn step(state: &WorldState, agent: AgentId, action: Action) -> Result<WorldState, EnvError> {
    if agent != state.whose_turn {
        return Err(EnvError::OutOfTurn {
            expected: state.whose_turn,
            got: agent,
        });
    }
    let at = state.position(agent);
    if !is_legal(state, agent, action) {
        return Err(EnvError::IllegalAction { agent, action, at });
    }

    let mut next = state.clone();
    match action {
        Action::MoveNorth | Action::MoveSouth | Action::MoveEast | Action::MoveWest => {
            let dir = action.direction().expect("move action has a direction");
            let dest = at.neighbor(dir).expect("legal move stays in grid");
            next.positions.set(agent, dest);
            next.room_mut(dest).explored = true;
        }
        Action::RemoveRubble => {
            let room = next.room_mut(at);
            room.has_rubble = false;
            if room.victim == Victim::Hidden {
                room.victim = Victim::Visible;
            }
        }
        Action::TriageVictim => {
            next.room_mut(at).victim = Victim::None;
            next.rescued_count += 1;
        }
        Action::Wait => {}
    }
    next.timestep += 1;
    next.whose_turn = agent.other();
    Ok(next)
}

pub fn is_terminal(state: &WorldState) -> bool {
    state.visible_victims() == 0 && state.hidden_victims() == 0
}

/// Conservation laws that every transition must satisfy; returns the names
/// of the violated ones.
pub fn law_violations(before: &WorldState, after: &WorldState) -> Vec<&'static str> {
    let mut out = Vec::new();
    if after.victims_total() != before.victims_total() || after.rescued_count < before.rescued_count {
        out.push("victim conservation");
    }
    if WorldState::coords().any(|c| before.room(c).explored && !after.room(c).explored) {
        out.push("explored monotonicity");
    }
    if WorldState::coords().any(|c| !before.room(c).has_rubble && after.room(c).has_rubble) {
        out.push("rubble monotonicity");
    }
    if after.whose_turn != before.whose_turn.other() || after.timestep != before.timestep + 1 {
        out.push("turn alternation");
    }
    out
}
