//! The policy × condition study grid.
//!
//! For every policy, trees are distilled from seeded training rollouts and
//! evaluation states are drawn from held-out rollouts (disjoint seeds).
//! Every condition explains the same states, alternating engineer and medic.
//! Rows are ordered by (policy, condition, state index) regardless of how
//! cells are scheduled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{grounding_score, EvalError, FeatureLexicon, GroundingRow};
use crate::behavior::{extract_path, PhraseTable};
use crate::distill::{build_dataset, fit_tree, DecisionTree, TreeParams};
use crate::env::{Action, AgentId, WorldState};
use crate::explainer::{
    build_prompt, open_session, sample_state_actions, Condition, ConditionKind, Evidence, FrozenContext, LlmClient,
    PromptConfig, StateSummary,
};
use crate::features::Feature;
use crate::policy::{Policy, PolicyKind, PolicyPair};
use crate::rollout::{sample_rollouts, RolloutConfig, Trajectory};

/// Offset between training and held-out rollout seeds.
pub const HELD_OUT_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyGrid {
    pub policies: Vec<PolicyKind>,
    pub conditions: Vec<ConditionKind>,
    pub states_per_cell: usize,
    pub seed: u64,
    pub train_episodes: usize,
    pub held_out_episodes: usize,
    /// Sampled pairs per `br_states` prompt.
    pub k: usize,
    #[serde(skip)]
    pub tree_params: TreeParams,
}

impl Default for StudyGrid {
    fn default() -> Self {
        Self {
            policies: PolicyKind::ALL.to_vec(),
            conditions: ConditionKind::ALL.to_vec(),
            states_per_cell: 10,
            seed: 0,
            train_episodes: 1000,
            held_out_episodes: 50,
            k: 5,
            tree_params: TreeParams::default(),
        }
    }
}

impl StudyGrid {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidGrid(m.to_string()));
        if self.policies.is_empty() {
            return bad("policies: at least one policy is required");
        }
        if self.conditions.is_empty() {
            return bad("conditions: at least one condition is required");
        }
        if self.states_per_cell == 0 {
            return bad("states_per_cell: must be positive");
        }
        if self.k == 0 && self.conditions.contains(&ConditionKind::BrStates) {
            return bad("k: br_states needs at least one sample");
        }
        if self.train_episodes == 0 {
            return bad("train_episodes: must be positive");
        }
        if self.held_out_episodes == 0 {
            return bad("held_out_episodes: must be positive");
        }
        self.tree_params.validate()?;
        Ok(())
    }
}

/// Everything needed to explain states of one policy.
#[derive(Debug, Clone)]
pub struct PolicyArtifacts {
    pub kind: PolicyKind,
    /// Indexed by `AgentId as usize`.
    pub trees: [Arc<DecisionTree>; 2],
    pub training: Vec<Trajectory>,
    pub eval_states: Vec<(WorldState, AgentId)>,
}

#[derive(Debug, Clone)]
pub struct StudyInputs {
    pub grid: StudyGrid,
    pub policies: Vec<PolicyArtifacts>,
}

fn pick_states(held_out: &[Trajectory], n: usize, seed: u64) -> Result<Vec<(WorldState, AgentId)>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_role = AgentId::ALL.map(|_| Vec::new());
    for (r, agent) in AgentId::ALL.into_iter().enumerate() {
        let pool: Vec<&WorldState> = held_out
            .iter()
            .filter(|t| t.agent == agent)
            .flat_map(|t| t.steps.iter().filter_map(|s| s.state.as_ref()))
            .collect();
        // engineer takes even slots, medic odd ones
        let wanted = (n + 1 - r) / 2;
        if pool.len() < wanted {
            return Err(EvalError::InvalidGrid(format!(
                "held_out_episodes: only {} {agent} states for {wanted} requested",
                pool.len()
            )));
        }
        let mut idx = index::sample(&mut rng, pool.len(), wanted).into_vec();
        idx.sort_unstable();
        per_role[r] = idx.into_iter().map(|i| pool[i].clone()).collect();
    }
    let mut iters = per_role.map(Vec::into_iter);
    Ok((0..n)
        .map(|i| {
            let agent = AgentId::ALL[i % 2];
            (iters[i % 2].next().expect("counted above"), agent)
        })
        .collect())
}

/// Roll out, distill and draw evaluation states for every policy in the grid.
pub fn prepare_study(grid: &StudyGrid) -> Result<StudyInputs, EvalError> {
    grid.validate()?;
    let policies = grid
        .policies
        .iter()
        .enumerate()
        .map(|(p, &kind)| {
            let pair = PolicyPair::uniform(kind);
            let training = sample_rollouts(&pair, &RolloutConfig::new(grid.train_episodes, grid.seed))?;
            let held_out = sample_rollouts(
                &pair,
                &RolloutConfig::new(grid.held_out_episodes, grid.seed.wrapping_add(HELD_OUT_SEED_OFFSET)),
            )?;
            let fit = |agent| -> Result<Arc<DecisionTree>, EvalError> {
                Ok(Arc::new(fit_tree(&build_dataset(&training, agent)?, grid.tree_params)?))
            };
            let trees = [fit(AgentId::Engineer)?, fit(AgentId::Medic)?];
            let eval_states = pick_states(&held_out, grid.states_per_cell, grid.seed.wrapping_add(p as u64))?;
            Ok(PolicyArtifacts {
                kind,
                trees,
                training,
                eval_states,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(StudyInputs {
        grid: grid.clone(),
        policies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub policy: PolicyKind,
    pub condition: ConditionKind,
    pub state_index: usize,
    pub agent: AgentId,
    pub timestep: u32,
    pub action: Action,
    pub explanation: String,
    /// `Err` marks a failed cell; the grid carries on.
    pub result: Result<GroundingRow, String>,
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    inputs: &StudyInputs,
    art: &PolicyArtifacts,
    condition: ConditionKind,
    i: usize,
    client: &LlmClient,
    prompts: &PromptConfig,
    phrases: &PhraseTable,
    lexicon: &FeatureLexicon,
) -> StudyRow {
    let (state, agent) = &art.eval_states[i];
    let agent = *agent;
    let action = Policy::new(art.kind, agent).act(state);
    let summary = StateSummary::from_state(state, agent);
    let mut row = StudyRow {
        policy: art.kind,
        condition,
        state_index: i,
        agent,
        timestep: state.timestep,
        action,
        explanation: String::new(),
        result: Err(String::new()),
    };
    let outcome = (|| -> Result<(String, GroundingRow), EvalError> {
        let tree = &art.trees[agent as usize];
        let path = extract_path(tree, &summary.features, agent)?;
        let sample_seed = inputs.grid.seed.wrapping_add(i as u64);
        let (cond, evidence) = match condition {
            ConditionKind::BrPath => (Condition::br_path(), Evidence::Path(path.clone())),
            ConditionKind::BrStates => (
                Condition::br_states(inputs.grid.k, sample_seed),
                Evidence::Samples(sample_state_actions(&art.training, agent, inputs.grid.k, sample_seed)?),
            ),
            ConditionKind::NoBr => (Condition::no_br(), Evidence::State(summary.clone())),
        };
        let prompt = build_prompt(prompts, phrases, &cond, &evidence, action, agent, false)?;
        let ctx = FrozenContext {
            state: summary.clone(),
            action,
            path: Some(path.clone()),
        };
        let id = format!("{}-{}-{i}", art.kind, condition);
        let session = open_session(id, prompt, ctx, Some(Arc::clone(tree)), client)
            .map_err(|e| EvalError::Explain(e.source.into()))?;
        let text = session.initial_explanation().to_string();
        let score = grounding_score(&text, &path, state, agent, lexicon);
        Ok((text, score))
    })();
    match outcome {
        Ok((text, score)) => {
            row.explanation = text;
            row.result = Ok(score);
        }
        Err(e) => row.result = Err(e.to_string()),
    }
    row
}

/// Generate and score one explanation per (policy, condition, state).
pub fn run_study(
    inputs: &StudyInputs,
    client: &LlmClient,
    prompts: &PromptConfig,
    phrases: &PhraseTable,
    lexicon: &FeatureLexicon,
) -> StudyReport {
    let cells: Vec<(usize, ConditionKind, usize)> = (0..inputs.policies.len())
        .flat_map(|p| {
            inputs
                .grid
                .conditions
                .iter()
                .flat_map(move |&c| (0..inputs.policies[p].eval_states.len()).map(move |i| (p, c, i)))
        })
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(p, c, i)| run_cell(inputs, &inputs.policies[p], c, i, client, prompts, phrases, lexicon))
        .collect();
    let example_text: String = prompts
        .examples
        .iter()
        .flat_map(|e| e.rules.iter().chain(e.samples.iter()).chain([&e.state, &e.explanation]))
        .fold(String::new(), |acc, s| acc + s + "\n");
    StudyReport {
        grid: inputs.grid.clone(),
        model: client.model_config().model,
        example_features: super::extract_mentions(&example_text, lexicon),
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub grid: StudyGrid,
    pub model: String,
    /// Features mentioned by the in-context examples, which bias what
    /// explanations talk about.
    pub example_features: BTreeSet<Feature>,
    pub rows: Vec<StudyRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CellAggregate {
    pub explanations: usize,
    pub failed: usize,
    pub mean_precision: f64,
    pub flags: usize,
    pub flagged_explanations: usize,
}

fn aggregate<'a>(rows: impl Iterator<Item = &'a StudyRow>) -> CellAggregate {
    let mut a = CellAggregate::default();
    let mut sum = 0.0;
    for r in rows {
        a.explanations += 1;
        match &r.result {
            Ok(g) => {
                sum += g.precision;
                a.flags += g.flags.len();
                a.flagged_explanations += usize::from(!g.flags.is_empty());
            }
            Err(_) => a.failed += 1,
        }
    }
    let ok = a.explanations - a.failed;
    a.mean_precision = if ok == 0 { f64::NAN } else { sum / ok as f64 };
    a
}

fn join_features(set: &BTreeSet<Feature>) -> String {
    set.iter().map(|f| f.name()).collect::<Vec<_>>().join(";")
}

impl StudyReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.result.is_err()).count()
    }

    pub fn by_cell(&self) -> BTreeMap<(PolicyKind, ConditionKind), CellAggregate> {
        let keys: BTreeSet<_> = self.rows.iter().map(|r| (r.policy, r.condition)).collect();
        keys.into_iter()
            .map(|k| (k, aggregate(self.rows.iter().filter(|r| (r.policy, r.condition) == k))))
            .collect()
    }

    pub fn by_condition(&self) -> BTreeMap<ConditionKind, CellAggregate> {
        let keys: BTreeSet<_> = self.rows.iter().map(|r| r.condition).collect();
        keys.into_iter()
            .map(|c| (c, aggregate(self.rows.iter().filter(|r| r.condition == c))))
            .collect()
    }

    /// Explanations mentioning each feature, per condition.
    pub fn feature_frequencies(&self) -> BTreeMap<(ConditionKind, Feature), usize> {
        let mut out = BTreeMap::new();
        for &c in &self.grid.conditions {
            for f in Feature::ALL {
                out.insert((c, f), 0);
            }
        }
        for r in &self.rows {
            if let Ok(g) = &r.result {
                for &f in &g.mentioned {
                    *out.entry((r.condition, f)).or_default() += 1;
                }
            }
        }
        out
    }

    /// One row per explanation.
    pub fn rows_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "policy",
            "condition",
            "state_index",
            "agent",
            "timestep",
            "action",
            "status",
            "precision",
            "mentioned",
            "path_features",
            "flags",
            "explanation",
            "error",
        ])?;
        for r in &self.rows {
            let head = [
                r.policy.to_string(),
                r.condition.to_string(),
                r.state_index.to_string(),
                r.agent.to_string(),
                r.timestep.to_string(),
                r.action.to_string(),
            ];
            let tail = match &r.result {
                Ok(g) => [
                    "ok".to_string(),
                    format!("{:.4}", g.precision),
                    join_features(&g.mentioned),
                    join_features(&g.path_features),
                    g.flags
                        .iter()
                        .map(|f| format!("{}={}", f.feature, u8::from(f.claimed)))
                        .collect::<Vec<_>>()
                        .join(";"),
                    r.explanation.clone(),
                    String::new(),
                ],
                Err(e) => [
                    "failed".to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    e.clone(),
                ],
            };
            w.write_record(head.iter().chain(tail.iter()))?;
        }
        finish_csv(w)
    }

    /// Mean precision and flag counts per (policy, condition).
    pub fn aggregate_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "policy",
            "condition",
            "explanations",
            "failed",
            "mean_precision",
            "flags",
            "flagged_explanations",
        ])?;
        for ((p, c), a) in self.by_cell() {
            w.write_record([
                p.to_string(),
                c.to_string(),
                a.explanations.to_string(),
                a.failed.to_string(),
                format!("{:.4}", a.mean_precision),
                a.flags.to_string(),
                a.flagged_explanations.to_string(),
            ])?;
        }
        finish_csv(w)
    }

    /// How many explanations mention each feature, per condition.
    pub fn features_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["condition", "feature", "mentions", "explanations", "in_examples"])?;
        let by_condition = self.by_condition();
        for ((c, f), n) in self.feature_frequencies() {
            let total = by_condition.get(&c).map_or(0, |a| a.explanations - a.failed);
            w.write_record([
                c.to_string(),
                f.to_string(),
                n.to_string(),
                total.to_string(),
                self.example_features.contains(&f).to_string(),
            ])?;
        }
        finish_csv(w)
    }

    /// Human-readable summary with binomial counts.
    pub fn summary(&self) -> String {
        let g = &self.grid;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Explanation grounding study: {} policies x {} conditions x {} states (seed {}, model {})",
            g.policies.len(),
            g.conditions.len(),
            g.states_per_cell,
            g.seed,
            self.model
        );
        let _ = writeln!(s, "{} explanations, {} failed", self.rows.len(), self.failed());
        let _ = writeln!(s);
        let _ = writeln!(s, "By condition:");
        for (c, a) in self.by_condition() {
            let ok = a.explanations - a.failed;
            let _ = writeln!(
                s,
                "  {:<10} mean precision {:.4}; {}/{} explanations with a factual flag",
                c.name(),
                a.mean_precision,
                a.flagged_explanations,
                ok
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "By policy and condition:");
        for ((p, c), a) in self.by_cell() {
            let ok = a.explanations - a.failed;
            let _ = writeln!(
                s,
                "  {:<14} {:<10} mean precision {:.4}; {}/{} flagged; {} failed",
                p.name(),
                c.name(),
                a.mean_precision,
                a.flagged_explanations,
                ok,
                a.failed
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Most mentioned features (* = used by the prompt examples):");
        let freq = self.feature_frequencies();
        for &c in &g.conditions {
            let mut top: Vec<(Feature, usize)> = Feature::ALL
                .iter()
                .map(|&f| (f, freq[&(c, f)]))
                .filter(|&(_, n)| n > 0)
                .collect();
            top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let listed: Vec<String> = top
                .iter()
                .take(5)
                .map(|(f, n)| {
                    let star = if self.example_features.contains(f) { "*" } else { "" };
                    format!("{f}{star} ({n})")
                })
                .collect();
            let listed = if listed.is_empty() { "none".to_string() } else { listed.join(", ") };
            let _ = writeln!(s, "  {:<10} {listed}", c.name());
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "Precision counts feature mentions found in the explanation that lie on the surrogate's decision path. It is an automated proxy for hallucination, not a human judgment."
        );
        s
    }
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String, EvalError> {
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is built from utf-8 strings"))
}
