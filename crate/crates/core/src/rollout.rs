//! Seeded rollouts and the newline-delimited trajectory interchange format.
//!
//! Each line of a trajectory file is one agent step:
//!
//! ```text
//! {"episode":0,"t":0,"agent":"engineer","features":{...},"action":"MoveNorth"}
//! ```
//!
//! Files may come from any external policy; only features and actions are
//! needed downstream. World states are kept in memory when trajectories are
//! produced here but are not written out.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{is_terminal, new_scenario, step, Action, AgentId, EnvError, ScenarioConfig, WorldState};
use crate::features::{extract_features, FeatureVector};
use crate::policy::PolicyPair;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid rollout config: {0}")]
    Config(String),
    #[error("trajectory file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub num_rollouts: usize,
    pub max_steps: u32,
    /// Episode `i` uses scenario seed `base_seed + i`.
    pub base_seed: u64,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            num_rollouts: 1000,
            max_steps: 400,
            base_seed: 0,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl RolloutConfig {
    pub fn new(num_rollouts: usize, base_seed: u64) -> Self {
        Self {
            num_rollouts,
            base_seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    /// Global timestep of the episode at which the agent acted.
    pub t: u32,
    pub features: FeatureVector,
    /// Present for in-process rollouts, absent for trajectories read from files.
    pub state: Option<WorldState>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_id: u64,
    pub agent: AgentId,
    pub steps: Vec<TrajectoryStep>,
}

/// Run one episode and return `(engineer, medic)` trajectories.
pub fn run_episode(
    pair: &PolicyPair,
    scenario: &ScenarioConfig,
    episode_id: u64,
    max_steps: u32,
) -> Result<[Trajectory; 2], RolloutError> {
    let mut state = new_scenario(scenario)?;
    let mut out = AgentId::ALL.map(|agent| Trajectory {
        episode_id,
        agent,
        steps: Vec::new(),
    });
    for _ in 0..max_steps {
        if is_terminal(&state) {
            break;
        }
        let agent = state.whose_turn;
        let action = pair.for_agent(agent).act(&state);
        let next = step(&state, agent, action)?;
        out[agent as usize].steps.push(TrajectoryStep {
            t: state.timestep,
            features: extract_features(&state, agent),
            state: Some(state),
            action,
        });
        state = next;
    }
    Ok(out)
}

/// Sample `cfg.num_rollouts` episodes, returning two trajectories per episode
/// ordered by episode index, engineer first. Episodes run in parallel; the
/// output does not depend on the thread count.
pub fn sample_rollouts(pair: &PolicyPair, cfg: &RolloutConfig) -> Result<Vec<Trajectory>, RolloutError> {
    if cfg.max_steps == 0 {
        return Err(RolloutError::Config("max_steps must be positive".into()));
    }
    cfg.scenario.validate()?;
    let episodes: Vec<[Trajectory; 2]> = (0..cfg.num_rollouts as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed.wrapping_add(i);
            run_episode(pair, &cfg.scenario.with_seed(seed), seed, cfg.max_steps)
        })
        .collect::<Result<_, _>>()?;
    Ok(episodes.into_iter().flatten().collect())
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub episode: u64,
    pub t: u32,
    pub agent: AgentId,
    pub features: FeatureVector,
    pub action: Action,
}

pub fn write_ndjson<W: Write>(trajectories: &[Trajectory], mut out: W) -> Result<(), RolloutError> {
    for traj in trajectories {
        for s in &traj.steps {
            let rec = StepRecord {
                episode: traj.episode_id,
                t: s.t,
                agent: traj.agent,
                features: s.features,
                action: s.action,
            };
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Read a trajectory file. Consecutive records with the same (episode, agent)
/// form one trajectory; blank lines are skipped.
pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<Trajectory>, RolloutError> {
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line).map_err(|e| RolloutError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let step = TrajectoryStep {
            t: rec.t,
            features: rec.features,
            state: None,
            action: rec.action,
        };
        match out.last_mut() {
            Some(tr) if tr.episode_id == rec.episode && tr.agent == rec.agent => {
                if tr.steps.last().is_some_and(|p| p.t >= rec.t) {
                    return Err(RolloutError::Parse {
                        line: i + 1,
                        message: format!("timestep {} is not after the previous step", rec.t),
                    });
                }
                tr.steps.push(step)
            }
            _ => out.push(Trajectory {
                episode_id: rec.episode,
                agent: rec.agent,
                steps: vec![step],
            }),
        }
    }
    Ok(out)
}
