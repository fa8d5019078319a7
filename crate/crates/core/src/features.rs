//! Interpretable per-agent observation features.
//!
//! The feature list is fixed and versioned. Trees, datasets and trajectory
//! files record [`FEATURE_SCHEMA_VERSION`] and are rejected on mismatch.

use std::collections::VecDeque;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::env::{AgentId, Direction, RoomCoord, Victim, WorldState, NUM_ROOMS};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const NUM_FEATURES: usize = 11;

/// Distance reported when no visible victim exists.
pub const NO_VICTIM_DISTANCE: f64 = 99.0;
/// Largest Manhattan distance on a 4 x 5 grid.
pub const MAX_GRID_DISTANCE: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    VictimInRoom,
    RubbleInRoom,
    UnexploredNorth,
    UnexploredSouth,
    UnexploredEast,
    UnexploredWest,
    DistNearestKnownVictim,
    DirVictim,
    DirRubble,
    DirUnexplored,
    AllRoomsExplored,
}

/// Value domain of a feature, used for rendering and for generating test inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// 0 or 1.
    Binary,
    /// 0..=MAX_GRID_DISTANCE, or the sentinel.
    Distance,
    /// 0 = none, 1..=4 = N, S, E, W.
    Direction,
}

impl Feature {
    pub const ALL: [Feature; NUM_FEATURES] = [
        Feature::VictimInRoom,
        Feature::RubbleInRoom,
        Feature::UnexploredNorth,
        Feature::UnexploredSouth,
        Feature::UnexploredEast,
        Feature::UnexploredWest,
        Feature::DistNearestKnownVictim,
        Feature::DirVictim,
        Feature::DirRubble,
        Feature::DirUnexplored,
        Feature::AllRoomsExplored,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::VictimInRoom => "victim_in_room",
            Feature::RubbleInRoom => "rubble_in_room",
            Feature::UnexploredNorth => "unexplored_north",
            Feature::UnexploredSouth => "unexplored_south",
            Feature::UnexploredEast => "unexplored_east",
            Feature::UnexploredWest => "unexplored_west",
            Feature::DistNearestKnownVictim => "dist_nearest_known_victim",
            Feature::DirVictim => "dir_victim",
            Feature::DirRubble => "dir_rubble",
            Feature::DirUnexplored => "dir_unexplored",
            Feature::AllRoomsExplored => "all_rooms_explored",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            Feature::DistNearestKnownVictim => FeatureKind::Distance,
            Feature::DirVictim | Feature::DirRubble | Feature::DirUnexplored => {
                FeatureKind::Direction
            }
            _ => FeatureKind::Binary,
        }
    }

    /// Every value this feature can take.
    pub fn domain(self) -> Vec<f64> {
        match self.kind() {
            FeatureKind::Binary => vec![0.0, 1.0],
            FeatureKind::Direction => (0..=4).map(f64::from).collect(),
            FeatureKind::Distance => (0..=MAX_GRID_DISTANCE)
                .map(f64::from)
                .chain(std::iter::once(NO_VICTIM_DISTANCE))
                .collect(),
        }
    }

    pub fn accepts(self, value: f64) -> bool {
        self.domain().contains(&value)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Feature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Feature::from_name(&name).ok_or_else(|| de::Error::custom(format!("unknown feature `{name}`")))
    }
}

/// Named numeric observation, in [`Feature::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    values: [f64; NUM_FEATURES],
}

impl FeatureVector {
    pub fn from_values(values: [f64; NUM_FEATURES]) -> Self {
        Self { values }
    }

    pub fn get(&self, feature: Feature) -> f64 {
        self.values[feature.index()]
    }

    pub fn set(&mut self, feature: Feature, value: f64) {
        self.values[feature.index()] = value;
    }

    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.values
    }

    pub fn is_set(&self, feature: Feature) -> bool {
        self.get(feature) > 0.5
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(NUM_FEATURES))?;
        for f in Feature::ALL {
            map.serialize_entry(f.name(), &self.values[f.index()])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct FvVisitor;

        impl<'de> Visitor<'de> for FvVisitor {
            type Value = FeatureVector;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "a map with exactly the {NUM_FEATURES} schema features")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut values = [None; NUM_FEATURES];
                while let Some(key) = map.next_key::<String>()? {
                    let feature = Feature::from_name(&key)
                        .ok_or_else(|| de::Error::custom(format!("unknown feature `{key}`")))?;
                    if values[feature.index()].is_some() {
                        return Err(de::Error::custom(format!("duplicate feature `{key}`")));
                    }
                    values[feature.index()] = Some(map.next_value::<f64>()?);
                }
                let mut out = [0.0; NUM_FEATURES];
                for f in Feature::ALL {
                    out[f.index()] = values[f.index()]
                        .ok_or_else(|| de::Error::custom(format!("missing feature `{}`", f.name())))?;
                }
                Ok(FeatureVector { values: out })
            }
        }

        d.deserialize_map(FvVisitor)
    }
}

/// Result of a nearest-target search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NearestTarget {
    pub distance: u32,
    /// First step toward the target; `None` when already standing on it.
    pub first_step: Option<Direction>,
}

/// Breadth-first search over rooms from `from`, expanding neighbours in N, S, E, W
/// order. Returns the first target dequeued, which is a nearest one.
pub fn nearest(from: RoomCoord, is_target: impl Fn(RoomCoord) -> bool) -> Option<NearestTarget> {
    let mut seen = [false; NUM_ROOMS];
    let mut queue = VecDeque::with_capacity(NUM_ROOMS);
    seen[from.index()] = true;
    queue.push_back((from, 0u32, None::<Direction>));
    while let Some((at, dist, first)) = queue.pop_front() {
        if is_target(at) {
            return Some(NearestTarget {
                distance: dist,
                first_step: first,
            });
        }
        for dir in Direction::ALL {
            if let Some(next) = at.neighbor(dir) {
                if !seen[next.index()] {
                    seen[next.index()] = true;
                    queue.push_back((next, dist + 1, first.or(Some(dir))));
                }
            }
        }
    }
    None
}

fn dir_code(target: Option<NearestTarget>) -> f64 {
    target
        .and_then(|t| t.first_step)
        .map_or(0.0, |d| f64::from(d.code()))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Whether an unexplored room lies anywhere along the straight line from `from` in `dir`.
fn unexplored_along(state: &WorldState, from: RoomCoord, dir: Direction) -> bool {
    let mut at = from;
    while let Some(next) = at.neighbor(dir) {
        if !state.room(next).explored {
            return true;
        }
        at = next;
    }
    false
}

pub fn extract_features(state: &WorldState, agent: AgentId) -> FeatureVector {
    let at = state.position(agent);
    let room = state.room(at);
    let victim = nearest(at, |c| state.room(c).victim == Victim::Visible);
    let rubble = nearest(at, |c| state.room(c).has_rubble);
    let unexplored = nearest(at, |c| !state.room(c).explored);

    let mut fv = FeatureVector::from_values([0.0; NUM_FEATURES]);
    fv.set(Feature::VictimInRoom, flag(room.victim == Victim::Visible));
    fv.set(Feature::RubbleInRoom, flag(room.has_rubble));
    fv.set(Feature::UnexploredNorth, flag(unexplored_along(state, at, Direction::North)));
    fv.set(Feature::UnexploredSouth, flag(unexplored_along(state, at, Direction::South)));
    fv.set(Feature::UnexploredEast, flag(unexplored_along(state, at, Direction::East)));
    fv.set(Feature::UnexploredWest, flag(unexplored_along(state, at, Direction::West)));
    fv.set(
        Feature::DistNearestKnownVictim,
        victim.map_or(NO_VICTIM_DISTANCE, |t| f64::from(t.distance)),
    );
    fv.set(Feature::DirVictim, dir_code(victim));
    fv.set(Feature::DirRubble, dir_code(rubble));
    fv.set(Feature::DirUnexplored, dir_code(unexplored));
    fv.set(Feature::AllRoomsExplored, flag(unexplored.is_none()));
    fv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{new_scenario, ScenarioConfig};

    fn at(row: u8, col: u8) -> RoomCoord {
        RoomCoord::new(row, col).unwrap()
    }

    fn bare(medic: RoomCoord) -> WorldState {
        new_scenario(&ScenarioConfig {
            seed: 1,
            n_victims: 0,
            n_rubble: 0,
            p_hidden: 0.0,
            engineer_start: at(0, 0),
            medic_start: medic,
        })
        .unwrap()
    }

    /// Independent oracle: minimum Manhattan distance over all visible victims.
    fn brute_force_victim_distance(s: &WorldState, from: RoomCoord) -> Option<u32> {
        WorldState::coords()
            .filter(|c| s.room(*c).victim == Victim::Visible)
            .map(|c| c.manhattan(from))
            .min()
    }

    #[test]
    fn victim_in_own_room_has_no_direction() {
        let mut s = bare(at(2, 2));
        s.room_mut(at(2, 2)).victim = Victim::Visible;
        let fv = extract_features(&s, AgentId::Medic);
        assert_eq!(fv.get(Feature::VictimInRoom), 1.0);
        assert_eq!(fv.get(Feature::DistNearestKnownVictim), 0.0);
        assert_eq!(fv.get(Feature::DirVictim), 0.0);
    }

    #[test]
    fn no_visible_victim_uses_sentinel() {
        let mut s = bare(at(2, 2));
        s.room_mut(at(1, 1)).has_rubble = true;
        s.room_mut(at(1, 1)).victim = Victim::Hidden;
        let fv = extract_features(&s, AgentId::Medic);
        assert_eq!(fv.get(Feature::DistNearestKnownVictim), 99.0);
        assert_eq!(fv.get(Feature::DirVictim), 0.0);
        assert_eq!(fv.get(Feature::VictimInRoom), 0.0);
    }

    #[test]
    fn victim_two_rooms_east() {
        let mut s = bare(at(1, 1));
        s.room_mut(at(1, 3)).victim = Victim::Visible;
        s.room_mut(at(3, 4)).victim = Victim::Visible;
        let fv = extract_features(&s, AgentId::Medic);
        assert_eq!(brute_force_victim_distance(&s, at(1, 1)), Some(2));
        assert_eq!(fv.get(Feature::DistNearestKnownVictim), 2.0);
        assert_eq!(fv.get(Feature::DirVictim), 3.0);
    }

    #[test]
    fn bfs_distance_matches_brute_force_and_step_makes_progress() {
        for seed in 0..300 {
            let cfg = ScenarioConfig {
                n_victims: 4,
                n_rubble: 3,
                p_hidden: 0.3,
                ..ScenarioConfig::default()
            }
            .with_seed(seed);
            let s = new_scenario(&cfg).unwrap();
            for agent in AgentId::ALL {
                let from = s.position(agent);
                let fv = extract_features(&s, agent);
                let expected = brute_force_victim_distance(&s, from);
                assert_eq!(
                    fv.get(Feature::DistNearestKnownVictim),
                    expected.map_or(99.0, f64::from)
                );
                if let Some(d) = expected.filter(|d| *d > 0) {
                    let dir = Direction::from_code(fv.get(Feature::DirVictim) as u8).unwrap();
                    let next = from.neighbor(dir).unwrap();
                    assert_eq!(brute_force_victim_distance(&s, next), Some(d - 1));
                }
            }
        }
    }

    #[test]
    fn tie_break_prefers_north_then_south_then_east() {
        // victims equidistant north and east: north wins
        let mut s = bare(at(2, 2));
        s.room_mut(at(1, 2)).victim = Victim::Visible;
        s.room_mut(at(2, 3)).victim = Victim::Visible;
        assert_eq!(extract_features(&s, AgentId::Medic).get(Feature::DirVictim), 1.0);
        // diagonal target: first step north beats first step east
        let mut s = bare(at(2, 2));
        s.room_mut(at(1, 3)).victim = Victim::Visible;
        assert_eq!(extract_features(&s, AgentId::Medic).get(Feature::DirVictim), 1.0);
        let mut s = bare(at(2, 2));
        s.room_mut(at(3, 3)).victim = Victim::Visible;
        assert_eq!(extract_features(&s, AgentId::Medic).get(Feature::DirVictim), 2.0);
    }

    #[test]
    fn unexplored_ray_scan() {
        let mut s = bare(at(3, 2));
        for c in WorldState::coords() {
            s.room_mut(c).explored = true;
        }
        s.room_mut(at(0, 2)).explored = false;
        let fv = extract_features(&s, AgentId::Medic);
        assert_eq!(fv.get(Feature::UnexploredNorth), 1.0);
        assert_eq!(fv.get(Feature::UnexploredSouth), 0.0);
        assert_eq!(fv.get(Feature::UnexploredEast), 0.0);
        assert_eq!(fv.get(Feature::UnexploredWest), 0.0);
        assert_eq!(fv.get(Feature::DirUnexplored), 1.0);
        assert_eq!(fv.get(Feature::AllRoomsExplored), 0.0);

        s.room_mut(at(0, 2)).explored = true;
        let fv = extract_features(&s, AgentId::Medic);
        assert_eq!(fv.get(Feature::AllRoomsExplored), 1.0);
        assert_eq!(fv.get(Feature::DirUnexplored), 0.0);
    }

    #[test]
    fn hidden_victims_do_not_affect_features() {
        for seed in 0..200 {
            let s = new_scenario(&ScenarioConfig::default().with_seed(seed)).unwrap();
            let mut cleared = s.clone();
            for c in WorldState::coords() {
                if cleared.room(c).victim == Victim::Hidden {
                    cleared.room_mut(c).victim = Victim::None;
                }
            }
            for agent in AgentId::ALL {
                assert_eq!(extract_features(&s, agent), extract_features(&cleared, agent));
            }
        }
    }

    #[test]
    fn feature_vector_json_keeps_schema_order_and_validates() {
        let s = bare(at(1, 1));
        let fv = extract_features(&s, AgentId::Medic);
        let json = serde_json::to_string(&fv).unwrap();
        assert!(json.starts_with(r#"{"victim_in_room":0.0,"rubble_in_room":0.0"#));
        let back: FeatureVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fv);

        let unknown = json.replace("victim_in_room", "victim_nearby");
        assert!(serde_json::from_str::<FeatureVector>(&unknown).is_err());
        let missing = r#"{"victim_in_room":0.0}"#;
        assert!(serde_json::from_str::<FeatureVector>(missing).is_err());
    }
}
