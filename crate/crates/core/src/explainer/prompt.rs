//! Four-part prompt assembly.
//!
//! The serialized prompt is `environment`, `evidence format`, `examples`,
//! `query`, each introduced by a fixed section header. Rule lines start with
//! `Rule `, sampled state-action lines with `Sample `; condition isolation is
//! audited on those markers.

use std::fmt;
use std::str::FromStr;

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExplainError;
use crate::behavior::{simplify_path, DecisionPath, PhraseTable};
use crate::env::{Action, AgentId, RoomCoord, WorldState};
use crate::features::{extract_features, FeatureVector};
use crate::rollout::Trajectory;

pub const DEFAULT_PROMPTS_TOML: &str = include_str!("../../config/prompts.toml");

pub const ENVIRONMENT_HEADER: &str = "## Environment";
pub const EVIDENCE_HEADER: &str = "## Evidence format";
pub const EXAMPLES_HEADER: &str = "## Examples";
pub const QUERY_HEADER: &str = "## Query";
pub const RULE_PREFIX: &str = "Rule ";
pub const SAMPLE_PREFIX: &str = "Sample ";
pub const BR_HEADER: &str = "Behavior representation (decision path from root to leaf):";
pub const ACTION_PREFIX: &str = "Action to explain: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    /// Decision-path behavior representation.
    BrPath,
    /// Randomly sampled state-action pairs in place of the path.
    BrStates,
    /// No behavior evidence, only the current state.
    NoBr,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 3] = [ConditionKind::BrPath, ConditionKind::BrStates, ConditionKind::NoBr];

    pub fn name(self) -> &'static str {
        match self {
            ConditionKind::BrPath => "br_path",
            ConditionKind::BrStates => "br_states",
            ConditionKind::NoBr => "no_br",
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConditionKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown condition `{s}` (expected br_path, br_states or no_br)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    /// Number of sampled pairs for `br_states`.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub sample_seed: u64,
}

fn default_k() -> usize {
    5
}

impl Condition {
    pub fn br_path() -> Self {
        Self::new(ConditionKind::BrPath)
    }

    pub fn br_states(k: usize, sample_seed: u64) -> Self {
        Self {
            kind: ConditionKind::BrStates,
            k,
            sample_seed,
        }
    }

    pub fn no_br() -> Self {
        Self::new(ConditionKind::NoBr)
    }

    pub fn new(kind: ConditionKind) -> Self {
        Self {
            kind,
            k: default_k(),
            sample_seed: 0,
        }
    }
}

/// What an agent observed at one decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub agent: AgentId,
    pub timestep: u32,
    /// Unknown for trajectories read from files.
    pub position: Option<RoomCoord>,
    pub features: FeatureVector,
}

impl StateSummary {
    pub fn from_state(state: &WorldState, agent: AgentId) -> Self {
        Self {
            agent,
            timestep: state.timestep,
            position: Some(state.position(agent)),
            features: extract_features(state, agent),
        }
    }

    pub fn render(&self, phrases: &PhraseTable) -> Result<String, ExplainError> {
        let obs = phrases.describe_observation(&self.features)?.join("; ");
        let place = match self.position {
            Some(p) => format!("The {} is in room {p} at timestep {}.", self.agent, self.timestep),
            None => format!("The {} acts at timestep {}.", self.agent, self.timestep),
        };
        Ok(format!("{place} Observation: {obs}."))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionSample {
    pub state: StateSummary,
    pub action: Action,
}

/// The behavior evidence placed in the query, one variant per condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    Path(DecisionPath),
    Samples(Vec<StateActionSample>),
    State(StateSummary),
}

impl Evidence {
    fn kind(&self) -> ConditionKind {
        match self {
            Evidence::Path(_) => ConditionKind::BrPath,
            Evidence::Samples(_) => ConditionKind::BrStates,
            Evidence::State(_) => ConditionKind::NoBr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptExample {
    pub role: AgentId,
    pub action: Action,
    pub rules: Vec<String>,
    pub state: String,
    pub samples: Vec<String>,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceText {
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceTexts {
    pub br_path: EvidenceText,
    pub br_states: EvidenceText,
    pub no_br: EvidenceText,
}

/// Deployment-fixed prompt texts.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub version: u32,
    pub environment: String,
    pub no_rules_sentence: String,
    pub evidence: EvidenceTexts,
    pub examples: Vec<PromptExample>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PROMPTS_TOML).expect("bundled prompt config is valid")
    }
}

impl PromptConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExplainError> {
        let cfg: PromptConfig = toml::from_str(text).map_err(|e| ExplainError::Config(e.to_string()))?;
        if cfg.environment.trim().is_empty() {
            return Err(ExplainError::Config("environment: text is empty".into()));
        }
        for (name, t) in [
            ("evidence.br_path", &cfg.evidence.br_path),
            ("evidence.br_states", &cfg.evidence.br_states),
            ("evidence.no_br", &cfg.evidence.no_br),
        ] {
            if t.description.trim().is_empty() {
                return Err(ExplainError::Config(format!("{name}.description: text is empty")));
            }
        }
        Ok(cfg)
    }

    fn evidence_text(&self, kind: ConditionKind) -> &str {
        match kind {
            ConditionKind::BrPath => &self.evidence.br_path.description,
            ConditionKind::BrStates => &self.evidence.br_states.description,
            ConditionKind::NoBr => &self.evidence.no_br.description,
        }
    }

    fn examples_for(&self, agent: AgentId) -> impl Iterator<Item = &PromptExample> {
        self.examples.iter().filter(move |e| e.role == agent)
    }
}

/// The four prompt parts; `render` joins them in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub condition: ConditionKind,
    pub agent: AgentId,
    pub action: Action,
    pub part_a: String,
    pub part_b: String,
    pub part_c: String,
    pub part_d: String,
}

impl PromptBundle {
    /// Parts a-c, sent as the system message.
    pub fn system_text(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.part_a, self.part_b, self.part_c)
    }

    pub fn render(&self) -> String {
        format!("{}\n\n{}\n", self.system_text(), self.part_d)
    }
}

fn rule_lines(clauses: &[String]) -> Vec<String> {
    clauses
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{RULE_PREFIX}{}: {c}", i + 1))
        .collect()
}

/// Example evidence is bulleted rather than numbered, so `Rule n:` and
/// `Sample n:` lines only ever belong to the query.
fn example_lines(items: &[String]) -> impl Iterator<Item = String> + '_ {
    items.iter().map(|x| format!("- {x}"))
}

fn render_examples(cfg: &PromptConfig, phrases: &PhraseTable, kind: ConditionKind, agent: AgentId) -> String {
    let mut out = vec![EXAMPLES_HEADER.to_string()];
    for (n, ex) in cfg.examples_for(agent).enumerate() {
        out.push(format!("Example {}:", n + 1));
        match kind {
            ConditionKind::BrPath => {
                out.push(BR_HEADER.to_string());
                out.extend(example_lines(&ex.rules));
            }
            ConditionKind::BrStates => {
                out.push("Sampled behavior:".to_string());
                out.extend(example_lines(&ex.samples));
            }
            ConditionKind::NoBr => out.push(format!("Current state: {}", ex.state)),
        }
        out.push(format!("{ACTION_PREFIX}{}", phrases.action_sentence(agent, ex.action)));
        out.push(format!("Explanation: {}", ex.explanation.trim()));
    }
    out.join("\n")
}

/// Build the prompt for explaining `action` of `agent`.
pub fn build_prompt(
    cfg: &PromptConfig,
    phrases: &PhraseTable,
    condition: &Condition,
    evidence: &Evidence,
    action: Action,
    agent: AgentId,
    include_confidence: bool,
) -> Result<PromptBundle, ExplainError> {
    if evidence.kind() != condition.kind {
        return Err(ExplainError::EvidenceMismatch {
            condition: condition.kind,
            evidence: evidence.kind(),
        });
    }
    let part_a = format!("{ENVIRONMENT_HEADER}\n{}", cfg.environment.trim());
    let part_b = format!("{EVIDENCE_HEADER}\n{}", cfg.evidence_text(condition.kind).trim());
    let part_c = render_examples(cfg, phrases, condition.kind, agent);

    let mut d = vec![QUERY_HEADER.to_string(), format!("Agent: {agent}")];
    match evidence {
        Evidence::Path(path) => {
            let clauses = phrases.clauses(&simplify_path(path)?)?;
            d.push(BR_HEADER.to_string());
            if clauses.is_empty() {
                d.push(cfg.no_rules_sentence.trim().to_string());
            } else {
                d.extend(rule_lines(&clauses));
            }
            if include_confidence {
                d.push(format!(
                    "The surrogate decision tree is {:.0}% confident in this action.",
                    path.confidence * 100.0
                ));
            }
        }
        Evidence::Samples(samples) => {
            if samples.len() != condition.k {
                return Err(ExplainError::SampleCount {
                    expected: condition.k,
                    got: samples.len(),
                });
            }
            d.push(format!(
                "Sampled behavior ({} state-action pairs from the agent's trajectories):",
                samples.len()
            ));
            for (i, s) in samples.iter().enumerate() {
                d.push(format!(
                    "{SAMPLE_PREFIX}{}: {} => {}",
                    i + 1,
                    s.state.render(phrases)?,
                    phrases.action_sentence(s.state.agent, s.action)
                ));
            }
        }
        Evidence::State(state) => {
            d.push(format!("Current state: {}", state.render(phrases)?));
        }
    }
    d.push(format!("{ACTION_PREFIX}{}", phrases.action_sentence(agent, action)));
    Ok(PromptBundle {
        condition: condition.kind,
        agent,
        action,
        part_a,
        part_b,
        part_c,
        part_d: d.join("\n"),
    })
}

/// Draw `k` steps of `agent` uniformly without replacement; output keeps
/// trajectory order.
pub fn sample_state_actions(
    trajectories: &[Trajectory],
    agent: AgentId,
    k: usize,
    seed: u64,
) -> Result<Vec<StateActionSample>, ExplainError> {
    let pool: Vec<StateActionSample> = trajectories
        .iter()
        .filter(|t| t.agent == agent)
        .flat_map(|t| {
            t.steps.iter().map(move |s| StateActionSample {
                state: StateSummary {
                    agent,
                    timestep: s.t,
                    position: s.state.as_ref().map(|st| st.position(agent)),
                    features: s.features,
                },
                action: s.action,
            })
        })
        .collect();
    if pool.len() < k {
        return Err(ExplainError::NotEnoughSteps {
            requested: k,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, pool.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{Op, Predicate};
    use crate::features::Feature;
    use crate::policy::{PolicyKind, PolicyPair};
    use crate::rollout::{sample_rollouts, RolloutConfig};

    fn trajs() -> Vec<Trajectory> {
        sample_rollouts(&PolicyPair::uniform(PolicyKind::Expert), &RolloutConfig::new(5, 42)).unwrap()
    }

    fn summary() -> StateSummary {
        let s = crate::env::new_scenario(&Default::default()).unwrap();
        StateSummary::from_state(&s, AgentId::Medic)
    }

    fn victim_path() -> DecisionPath {
        DecisionPath {
            agent: AgentId::Medic,
            predicates: vec![Predicate {
                feature: Feature::VictimInRoom,
                op: Op::Gt,
                threshold: 0.5,
            }],
            action: Action::TriageVictim,
            confidence: 0.9,
        }
    }

    fn build(cond: Condition, ev: Evidence, action: Action) -> Result<PromptBundle, ExplainError> {
        build_prompt(
            &PromptConfig::default(),
            &PhraseTable::default(),
            &cond,
            &ev,
            action,
            AgentId::Medic,
            true,
        )
    }

    #[test]
    fn empty_path_uses_the_no_rules_sentence() {
        let cfg = PromptConfig::default();
        let path = DecisionPath {
            agent: AgentId::Medic,
            predicates: vec![],
            action: Action::MoveNorth,
            confidence: 1.0,
        };
        let with_empty = build(Condition::br_path(), Evidence::Path(path), Action::MoveNorth).unwrap();
        let with_rules = build(Condition::br_path(), Evidence::Path(victim_path()), Action::MoveNorth).unwrap();
        assert!(with_empty.part_d.contains(cfg.no_rules_sentence.trim()));
        assert!(with_empty.part_d.contains("Action to explain: The medic moved north."));
        assert!(!with_empty.part_d.contains(RULE_PREFIX));
        assert_eq!(
            (&with_empty.part_a, &with_empty.part_b, &with_empty.part_c),
            (&with_rules.part_a, &with_rules.part_b, &with_rules.part_c)
        );
    }

    #[test]
    fn br_states_has_exactly_k_sample_lines() {
        let samples = sample_state_actions(&trajs(), AgentId::Medic, 5, 7).unwrap();
        let b = build(Condition::br_states(5, 7), Evidence::Samples(samples), Action::MoveEast).unwrap();
        let n = b.render().lines().filter(|l| l.starts_with(SAMPLE_PREFIX)).count();
        assert_eq!(n, 5);
    }

    #[test]
    fn sample_count_must_match_condition() {
        let samples = sample_state_actions(&trajs(), AgentId::Medic, 3, 7).unwrap();
        assert!(matches!(
            build(Condition::br_states(5, 7), Evidence::Samples(samples), Action::MoveEast),
            Err(ExplainError::SampleCount { expected: 5, got: 3 })
        ));
    }

    #[test]
    fn evidence_must_match_condition() {
        assert!(matches!(
            build(Condition::no_br(), Evidence::Path(victim_path()), Action::Wait),
            Err(ExplainError::EvidenceMismatch { .. })
        ));
    }

    #[test]
    fn prompts_are_deterministic_and_ordered() {
        let a = build(Condition::no_br(), Evidence::State(summary()), Action::Wait).unwrap();
        let b = build(Condition::no_br(), Evidence::State(summary()), Action::Wait).unwrap();
        assert_eq!(a.render(), b.render());
        let text = a.render();
        let pos: Vec<usize> = [ENVIRONMENT_HEADER, EVIDENCE_HEADER, EXAMPLES_HEADER, QUERY_HEADER]
            .iter()
            .map(|h| text.find(h).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn examples_follow_the_condition_format() {
        let p = build(Condition::br_path(), Evidence::Path(victim_path()), Action::TriageVictim).unwrap();
        assert!(p.part_c.contains("\n- a victim is in the current room"));
        assert!(!p.part_c.contains(SAMPLE_PREFIX) && !p.part_c.contains(RULE_PREFIX));
        let samples = sample_state_actions(&trajs(), AgentId::Medic, 2, 0).unwrap();
        let p = build(Condition::br_states(2, 0), Evidence::Samples(samples), Action::TriageVictim).unwrap();
        assert!(p.part_c.contains("Sampled behavior:\n- "));
        assert!(!p.part_c.contains(SAMPLE_PREFIX));
        let p = build(Condition::no_br(), Evidence::State(summary()), Action::Wait).unwrap();
        assert!(!p.part_c.contains(RULE_PREFIX) && !p.part_c.contains(SAMPLE_PREFIX));
        // only the medic's examples are shown to a medic query
        assert!(!p.part_c.contains("engineer"));
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let t = trajs();
        assert!(sample_state_actions(&t, AgentId::Medic, 0, 1).unwrap().is_empty());
        let a = sample_state_actions(&t, AgentId::Medic, 5, 99).unwrap();
        let b = sample_state_actions(&t, AgentId::Medic, 5, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_state_actions(&t, AgentId::Medic, 5, 100).unwrap();
        assert_ne!(a, c);
        let available: usize = t.iter().filter(|x| x.agent == AgentId::Medic).map(|x| x.steps.len()).sum();
        assert!(matches!(
            sample_state_actions(&t, AgentId::Medic, available + 1, 1),
            Err(ExplainError::NotEnoughSteps { .. })
        ));
    }
}
