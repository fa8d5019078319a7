//! Scripted policies used as stand-ins for an arbitrary black-box agent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{is_legal, Action, AgentId, RoomCoord, Victim, WorldState};
use crate::features::nearest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Greedy goal-directed behaviour: act in place, else head to the nearest target.
    Expert,
    /// Visit every room before doing any role work.
    ExploreFirst,
    /// Always head north.
    FixedNorth,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [
        PolicyKind::Expert,
        PolicyKind::ExploreFirst,
        PolicyKind::FixedNorth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Expert => "expert",
            PolicyKind::ExploreFirst => "explore_first",
            PolicyKind::FixedNorth => "fixed_north",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected expert, explore_first or fixed_north)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    pub kind: PolicyKind,
    pub role: AgentId,
}

impl Policy {
    pub fn new(kind: PolicyKind, role: AgentId) -> Self {
        Self { kind, role }
    }

    /// Choose an action for `self.role`. Pure function of the state.
    pub fn act(&self, state: &WorldState) -> Action {
        act(self, state, self.role)
    }
}

/// One policy per role, as used for rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub engineer: Policy,
    pub medic: Policy,
}

impl PolicyPair {
    pub fn uniform(kind: PolicyKind) -> Self {
        Self {
            engineer: Policy::new(kind, AgentId::Engineer),
            medic: Policy::new(kind, AgentId::Medic),
        }
    }

    pub fn for_agent(&self, agent: AgentId) -> &Policy {
        match agent {
            AgentId::Engineer => &self.engineer,
            AgentId::Medic => &self.medic,
        }
    }
}

fn toward(from: RoomCoord, is_target: impl Fn(RoomCoord) -> bool) -> Option<Action> {
    nearest(from, is_target)
        .and_then(|t| t.first_step)
        .map(|d| d.move_action())
}

fn explore(state: &WorldState, from: RoomCoord) -> Option<Action> {
    toward(from, |c| !state.room(c).explored)
}

fn expert(state: &WorldState, agent: AgentId) -> Action {
    let at = state.position(agent);
    let room = state.room(at);
    match agent {
        AgentId::Engineer if room.has_rubble => return Action::RemoveRubble,
        AgentId::Medic if room.victim == Victim::Visible => return Action::TriageVictim,
        _ => {}
    }
    let target = match agent {
        AgentId::Engineer => toward(at, |c| state.room(c).has_rubble),
        AgentId::Medic => toward(at, |c| state.room(c).victim == Victim::Visible),
    };
    target
        .or_else(|| explore(state, at))
        .unwrap_or(Action::Wait)
}

pub fn act(policy: &Policy, state: &WorldState, agent: AgentId) -> Action {
    debug_assert_eq!(policy.role, agent, "policy role does not match the acting agent");
    match policy.kind {
        PolicyKind::Expert => expert(state, agent),
        PolicyKind::ExploreFirst => {
            explore(state, state.position(agent)).unwrap_or_else(|| expert(state, agent))
        }
        PolicyKind::FixedNorth => {
            if is_legal(state, agent, Action::MoveNorth) {
                Action::MoveNorth
            } else {
                Action::Wait
            }
        }
    }
}
