//! Multi-turn explanation sessions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::llm::{ChatMessage, LlmClient, LlmError, ModelConfig, CF_ACTION_PREFIX, CF_CHANGED_PREFIX, CF_CLOSE, CF_OPEN};
use super::prompt::{PromptBundle, StateSummary};
use super::{ConditionKind, ExplainError};
use crate::behavior::{counterfactual, simplify_path, CounterfactualOutcome, CounterfactualQuery, DecisionPath, PhraseTable};
use crate::distill::DecisionTree;
use crate::env::Action;

/// The decision being explained, fixed when the session opens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenContext {
    pub state: StateSummary,
    pub action: Action,
    /// The surrogate's path for the state, when a tree is attached.
    pub path: Option<DecisionPath>,
}

/// Opening the session failed; the prompt is kept for offline inspection.
#[derive(Debug, thiserror::Error)]
#[error("could not obtain the initial explanation: {source}")]
pub struct SessionError {
    pub prompt: Box<PromptBundle>,
    #[source]
    pub source: LlmError,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplanationSession {
    pub id: String,
    pub condition: ConditionKind,
    pub context: FrozenContext,
    pub prompt: PromptBundle,
    pub model: ModelConfig,
    history: Vec<ChatMessage>,
    #[serde(skip)]
    tree: Option<Arc<DecisionTree>>,
}

/// Send the prompt and record the initial explanation.
pub fn open_session(
    id: impl Into<String>,
    prompt: PromptBundle,
    context: FrozenContext,
    tree: Option<Arc<DecisionTree>>,
    client: &LlmClient,
) -> Result<ExplanationSession, SessionError> {
    let mut history = vec![ChatMessage::system(prompt.system_text()), ChatMessage::user(prompt.part_d.clone())];
    match client.complete(&history) {
        Ok(reply) => {
            history.push(ChatMessage::assistant(reply));
            Ok(ExplanationSession {
                id: id.into(),
                condition: prompt.condition,
                context,
                model: client.model_config(),
                prompt,
                history,
                tree,
            })
        }
        Err(source) => Err(SessionError {
            prompt: Box::new(prompt),
            source,
        }),
    }
}

/// Text block carrying a tree-computed counterfactual into the conversation.
pub fn counterfactual_block(
    query: &CounterfactualQuery,
    outcome: &CounterfactualOutcome,
    phrases: &PhraseTable,
) -> Result<String, ExplainError> {
    let flips: Vec<String> = query.flips.iter().map(|(f, v)| format!("{f} = {v}")).collect();
    let clauses = phrases.clauses(&simplify_path(&outcome.path)?)?;
    let mut lines = vec![
        CF_OPEN.to_string(),
        format!("Flipped features: {}", flips.join(", ")),
        format!(
            "{CF_ACTION_PREFIX} {} ({})",
            outcome.path.action,
            phrases.action_sentence(outcome.path.agent, outcome.path.action)
        ),
        format!("{CF_CHANGED_PREFIX} {}", outcome.changed),
        "New decision path:".to_string(),
    ];
    lines.extend(clauses.iter().enumerate().map(|(i, c)| format!("Rule {}: {c}", i + 1)));
    lines.push(CF_CLOSE.to_string());
    lines.push("Answer using this result from the decision tree.".to_string());
    Ok(lines.join("\n"))
}

impl ExplanationSession {
    pub fn history(&self) -> &[ChatMessage] {
        &self.history
    }

    /// The first assistant turn.
    pub fn initial_explanation(&self) -> &str {
        &self.history[2].content
    }

    pub fn tree(&self) -> Option<&Arc<DecisionTree>> {
        self.tree.as_ref()
    }

    /// Evaluate a counterfactual on the frozen state without touching history.
    pub fn counterfactual(&self, query: &CounterfactualQuery) -> Result<CounterfactualOutcome, ExplainError> {
        let tree = self.tree.as_ref().ok_or(ExplainError::NoTree)?;
        Ok(counterfactual(tree, &self.context.state.features, self.context.state.agent, query)?)
    }

    /// Ask a follow-up. With a counterfactual attached, the tree is evaluated
    /// first and its outcome is placed in the user turn. History is unchanged
    /// on error and grows by exactly two messages on success.
    pub fn follow_up(
        &mut self,
        text: &str,
        query: Option<&CounterfactualQuery>,
        client: &LlmClient,
        phrases: &PhraseTable,
    ) -> Result<(String, Option<CounterfactualOutcome>), ExplainError> {
        let (content, outcome) = match query {
            Some(q) => {
                let outcome = self.counterfactual(q)?;
                (format!("{text}\n{}", counterfactual_block(q, &outcome, phrases)?), Some(outcome))
            }
            None => (text.to_string(), None),
        };
        let mut messages = self.history.clone();
        messages.push(ChatMessage::user(content));
        let reply = client.complete(&messages)?;
        messages.push(ChatMessage::assistant(reply.clone()));
        self.history = messages;
        Ok((reply, outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::extract_path;
    use crate::env::AgentId;
    use crate::explainer::{build_prompt, Condition, Evidence, PromptConfig};
    use crate::features::{Feature, FeatureVector, NUM_FEATURES};
    use crate::distill::{fit_tree, LabeledDataset, TreeParams};

    fn setup() -> (PromptBundle, FrozenContext, Arc<DecisionTree>) {
        let mk = |victim: f64| {
            let mut v = FeatureVector::from_values([0.0; NUM_FEATURES]);
            v.set(Feature::VictimInRoom, victim);
            v
        };
        let rows = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    (mk(1.0), Action::TriageVictim)
                } else {
                    (mk(0.0), Action::MoveNorth)
                }
            })
            .collect();
        let tree = Arc::new(fit_tree(&LabeledDataset::new(rows), TreeParams::default()).unwrap());
        let fv = mk(0.0);
        let path = extract_path(&tree, &fv, AgentId::Medic).unwrap();
        let state = StateSummary {
            agent: AgentId::Medic,
            timestep: 3,
            position: None,
            features: fv,
        };
        let prompt = build_prompt(
            &PromptConfig::default(),
            &PhraseTable::default(),
            &Condition::br_path(),
            &Evidence::Path(path.clone()),
            path.action,
            AgentId::Medic,
            false,
        )
        .unwrap();
        let ctx = FrozenContext {
            state,
            action: path.action,
            path: Some(path),
        };
        (prompt, ctx, tree)
    }

    #[test]
    fn ten_follow_ups_grow_history_by_twenty() {
        let (prompt, ctx, tree) = setup();
        let client = LlmClient::scripted(Default::default());
        let mut s = open_session("s1", prompt, ctx, Some(tree), &client).unwrap();
        assert_eq!(s.history().len(), 3);
        for i in 0..10 {
            s.follow_up(&format!("question {i}"), None, &client, &PhraseTable::default())
                .unwrap();
        }
        assert_eq!(s.history().len(), 23);
    }

    #[test]
    fn counterfactual_outcome_precedes_the_model_turn() {
        let (prompt, ctx, tree) = setup();
        let client = LlmClient::echo();
        let mut s = open_session("s1", prompt, ctx, Some(tree), &client).unwrap();
        let q = CounterfactualQuery::new([(Feature::VictimInRoom, 1.0)]);
        let (reply, outcome) = s
            .follow_up("What if a victim were here?", Some(&q), &client, &PhraseTable::default())
            .unwrap();
        let outcome = outcome.unwrap();
        assert!(outcome.changed);
        assert_eq!(outcome.path.action, Action::TriageVictim);
        let user = &s.history()[3].content;
        assert!(user.contains("Predicted action: TriageVictim"));
        assert!(reply.contains("Predicted action: TriageVictim"));
        assert!(reply.contains("Action changed: true"));
    }

    #[test]
    fn failed_turns_leave_history_unchanged() {
        let (prompt, ctx, _) = setup();
        let client = LlmClient::echo();
        let mut s = open_session("s1", prompt, ctx, None, &client).unwrap();
        let q = CounterfactualQuery::new([(Feature::VictimInRoom, 1.0)]);
        assert!(matches!(
            s.follow_up("?", Some(&q), &client, &PhraseTable::default()),
            Err(ExplainError::NoTree)
        ));
        let bad = CounterfactualQuery::new([(Feature::DirVictim, 7.0)]);
        let (prompt, ctx, tree) = setup();
        let mut s2 = open_session("s2", prompt, ctx, Some(tree), &client).unwrap();
        assert!(s2.follow_up("?", Some(&bad), &client, &PhraseTable::default()).is_err());
        assert_eq!(s.history().len(), 3);
        assert_eq!(s2.history().len(), 3);
    }

    #[test]
    fn unreachable_remote_returns_the_prompt() {
        let (prompt, ctx, _) = setup();
        let client = LlmClient::remote(ModelConfig {
            base_url: "http://127.0.0.1:9".into(),
            retries: 0,
            timeout_secs: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        let err = open_session("s1", prompt.clone(), ctx, None, &client).unwrap_err();
        assert_eq!(*err.prompt, prompt);
        assert!(matches!(err.source, LlmError::Transport { attempts: 1, .. }));
    }

    #[test]
    fn echo_session_transcripts_are_reproducible() {
        let run = || {
            let (prompt, ctx, tree) = setup();
            let client = LlmClient::echo();
            let mut s = open_session("s", prompt, ctx, Some(tree), &client).unwrap();
            s.follow_up("why?", None, &client, &PhraseTable::default()).unwrap();
            serde_json::to_string(s.history()).unwrap()
        };
        assert_eq!(run(), run());
    }
}
