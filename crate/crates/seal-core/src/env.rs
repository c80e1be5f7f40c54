//! Deterministic KeyDoor and Grid-World environments with vector observations.
//!
//! Both tasks live on a 10x10 grid with a 100-step horizon. KeyDoor asks the
//! player to pick up a key and unlock a door with it; Grid-World asks the
//! player to pick up N objects in a fixed order. States are flat numeric
//! vectors (entity coordinates, player coordinates, status bits).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};

/// Side length of the square grid.
pub const GRID_SIZE: i32 = 10;
/// Maximum steps per episode.
pub const HORIZON: usize = 100;

/// Which task family an environment instance belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum EnvKind {
    KeyDoor,
    GridWorld { n_objects: usize },
}

impl EnvKind {
    /// Number of movable/pickable entities excluding the player.
    pub fn n_entities(self) -> usize {
        match self {
            EnvKind::KeyDoor => 2,
            EnvKind::GridWorld { n_objects } => n_objects,
        }
    }

    /// Number of status bits carried by a state.
    pub fn n_statuses(self) -> usize {
        match self {
            EnvKind::KeyDoor => 2,
            EnvKind::GridWorld { n_objects } => n_objects,
        }
    }

    /// Length of the encoded observation vector: 8 for KeyDoor, 11/14/17 for
    /// Grid-World with 3/4/5 objects.
    pub fn obs_len(self) -> usize {
        2 * (self.n_entities() + 1) + self.n_statuses()
    }

    /// Size of the action space (6 for KeyDoor, 5 for Grid-World).
    pub fn n_actions(self) -> usize {
        match self {
            EnvKind::KeyDoor => 6,
            EnvKind::GridWorld { .. } => 5,
        }
    }

    /// Number of sub-goals K in the canonical decomposition.
    pub fn subgoal_count(self) -> usize {
        match self {
            EnvKind::KeyDoor => 4,
            EnvKind::GridWorld { n_objects } => 2 * n_objects,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "keydoor" => Ok(EnvKind::KeyDoor),
            "grid3" => Ok(EnvKind::GridWorld { n_objects: 3 }),
            "grid4" => Ok(EnvKind::GridWorld { n_objects: 4 }),
            "grid5" => Ok(EnvKind::GridWorld { n_objects: 5 }),
            other => Err(SealError::Config(format!("unknown env kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvKind::KeyDoor => write!(f, "keydoor"),
            EnvKind::GridWorld { n_objects } => write!(f, "grid{n_objects}"),
        }
    }
}

impl From<EnvKind> for String {
    fn from(k: EnvKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for EnvKind {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        EnvKind::parse(&s).map_err(|e| e.to_string())
    }
}

/// Primitive actions. Unlock only exists in KeyDoor's action space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    PickUp,
    Unlock,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::PickUp,
        Action::Unlock,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::PickUp => 4,
            Action::Unlock => 5,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Object pick-up order for Grid-World task variations. `order[i]` is the
/// object slot that must be picked i-th. Identity for KeyDoor. Serializes as
/// a letter string ("ABC", "ACB", ...).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PickupOrder(pub Vec<usize>);

impl PickupOrder {
    pub fn identity(n: usize) -> Self {
        PickupOrder((0..n).collect())
    }

    /// Parse a letter order such as "ABC" or "ACB" (A = object 1). The
    /// string must be a permutation of the first `len` letters.
    pub fn parse(s: &str) -> Result<Self> {
        let n = s.chars().count();
        let order: Vec<usize> = s
            .chars()
            .map(|c| (c.to_ascii_uppercase() as isize - 'A' as isize) as usize)
            .collect();
        let mut seen = vec![false; n];
        let valid = n > 0
            && order.iter().all(|&i| {
                if i >= n || seen[i] {
                    false
                } else {
                    seen[i] = true;
                    true
                }
            });
        if !valid {
            return Err(SealError::Config(format!(
                "order {s:?} is not a permutation of its {n} letters"
            )));
        }
        Ok(PickupOrder(order))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for PickupOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &i in &self.0 {
            write!(f, "{}", (b'A' + i as u8) as char)?;
        }
        Ok(())
    }
}

impl From<PickupOrder> for String {
    fn from(o: PickupOrder) -> String {
        o.to_string()
    }
}

impl TryFrom<String> for PickupOrder {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        PickupOrder::parse(&s).map_err(|e| e.to_string())
    }
}

/// Full environment state. Positions list the task entities first (key, door
/// for KeyDoor; objects for Grid-World) and the player last.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub kind: EnvKind,
    pub positions: Vec<(i32, i32)>,
    pub statuses: Vec<u8>,
    pub step_count: usize,
}

impl EnvState {
    pub fn player(&self) -> (i32, i32) {
        *self.positions.last().expect("state has a player position")
    }

    /// Stable textual key for label caching: raw integer coordinates and bits.
    pub fn cache_key(&self) -> String {
        let pos: Vec<String> = self
            .positions
            .iter()
            .map(|(x, y)| format!("{x},{y}"))
            .collect();
        let st: Vec<String> = self.statuses.iter().map(|b| b.to_string()).collect();
        format!("{}|{}|{}", self.kind, pos.join(";"), st.join(""))
    }
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub done: bool,
    pub success: bool,
}

/// Task success test: door unlocked (KeyDoor) or every object picked.
pub fn is_success(state: &EnvState) -> bool {
    match state.kind {
        EnvKind::KeyDoor => state.statuses[1] == 1,
        EnvKind::GridWorld { .. } => state.statuses.iter().all(|&b| b == 1),
    }
}

/// Encode a state as the flat observation vector fed to the networks.
/// Coordinates are scaled by 1/9 into [0, 1]; statuses map to 0.0/1.0.
pub fn encode(state: &EnvState) -> Vec<f64> {
    let mut v = Vec::with_capacity(state.kind.obs_len());
    for &(x, y) in &state.positions {
        v.push(f64::from(x) / 9.0);
        v.push(f64::from(y) / 9.0);
    }
    for &b in &state.statuses {
        v.push(f64::from(b));
    }
    v
}

/// An environment instance: a task kind plus (for Grid-World) a pick-up order.
#[derive(Clone, Debug)]
pub struct Env {
    pub kind: EnvKind,
    pub order: PickupOrder,
}

impl Env {
    pub fn new(kind: EnvKind) -> Self {
        Env {
            kind,
            order: PickupOrder::identity(kind.n_entities()),
        }
    }

    pub fn with_order(kind: EnvKind, order: PickupOrder) -> Result<Self> {
        if order.len() != kind.n_entities() {
            return Err(SealError::Config(format!(
                "order length {} does not match {} entities",
                order.len(),
                kind.n_entities()
            )));
        }
        Ok(Env { kind, order })
    }

    /// Fresh episode: all entity and player positions uniform over the grid
    /// and mutually distinct, all status bits zero.
    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset_with(&mut rng)
    }

    pub fn reset_with(&self, rng: &mut impl Rng) -> EnvState {
        let n = self.kind.n_entities() + 1;
        let mut positions: Vec<(i32, i32)> = Vec::with_capacity(n);
        while positions.len() < n {
            let p = (rng.gen_range(0..GRID_SIZE), rng.gen_range(0..GRID_SIZE));
            if !positions.contains(&p) {
                positions.push(p);
            }
        }
        EnvState {
            kind: self.kind,
            positions,
            statuses: vec![0; self.kind.n_statuses()],
            step_count: 0,
        }
    }

    /// The object slot the player must pick next, if any remain.
    pub fn next_required(&self, state: &EnvState) -> Option<usize> {
        match state.kind {
            EnvKind::KeyDoor => None,
            EnvKind::GridWorld { .. } => self
                .order
                .0
                .iter()
                .copied()
                .find(|&slot| state.statuses[slot] == 0),
        }
    }

    /// Apply one action. Moves clamp at the borders; PickUp/Unlock succeed
    /// only when their preconditions hold and are no-ops otherwise. Every
    /// action consumes a step.
    pub fn step(&self, state: &EnvState, action: Action) -> Result<StepOutcome> {
        if is_success(state) || state.step_count >= HORIZON {
            return Err(SealError::EpisodeFinished {
                step: state.step_count,
                success: is_success(state),
            });
        }
        let mut next = state.clone();
        let player_idx = next.positions.len() - 1;
        let (px, py) = next.positions[player_idx];
        match action {
            Action::Up => next.positions[player_idx] = (px, (py + 1).min(GRID_SIZE - 1)),
            Action::Down => next.positions[player_idx] = (px, (py - 1).max(0)),
            Action::Left => next.positions[player_idx] = ((px - 1).max(0), py),
            Action::Right => next.positions[player_idx] = ((px + 1).min(GRID_SIZE - 1), py),
            Action::PickUp => match state.kind {
                EnvKind::KeyDoor => {
                    if next.statuses[0] == 0 && (px, py) == next.positions[0] {
                        next.statuses[0] = 1;
                    }
                }
                EnvKind::GridWorld { .. } => {
                    if let Some(slot) = self.next_required(state) {
                        if (px, py) == next.positions[slot] {
                            next.statuses[slot] = 1;
                        }
                    }
                }
            },
            Action::Unlock => {
                if state.kind == EnvKind::KeyDoor
                    && next.statuses[0] == 1
                    && next.statuses[1] == 0
                    && (px, py) == next.positions[1]
                {
                    next.statuses[1] = 1;
                }
            }
        }
        next.step_count += 1;
        let success = is_success(&next);
        let done = success || next.step_count >= HORIZON;
        Ok(StepOutcome {
            next_state: next,
            done,
            success,
        })
    }
}
