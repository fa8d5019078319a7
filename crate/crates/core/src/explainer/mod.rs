//! Prompt assembly for the three evidence conditions, the chat-completions
//! client (remote or mock), and interactive explanation sessions.

mod llm;
mod prompt;
mod session;

use thiserror::Error;

pub use llm::{
    ChatMessage, LlmClient, LlmError, MockMode, MockScript, ModelConfig, Role, ScriptRule, CF_ACTION_PREFIX,
    CF_CHANGED_PREFIX, CF_CLOSE, CF_OPEN, DEFAULT_MOCK_SCRIPT_TOML,
};
pub use prompt::{
    build_prompt, sample_state_actions, Condition, ConditionKind, Evidence, PromptBundle, PromptConfig, PromptExample,
    StateActionSample, StateSummary, ACTION_PREFIX, BR_HEADER, DEFAULT_PROMPTS_TOML, ENVIRONMENT_HEADER,
    EVIDENCE_HEADER, EXAMPLES_HEADER, QUERY_HEADER, RULE_PREFIX, SAMPLE_PREFIX,
};
pub use session::{counterfactual_block, open_session, ExplanationSession, FrozenContext, SessionError};

use crate::behavior::BehaviorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("prompt config: {0}")]
    Config(String),
    #[error("condition {condition} cannot use {evidence} evidence")]
    EvidenceMismatch {
        condition: ConditionKind,
        evidence: ConditionKind,
    },
    #[error("expected {expected} sampled state-action pairs, got {got}")]
    SampleCount { expected: usize, got: usize },
    #[error("cannot sample {requested} state-action pairs from {available} steps")]
    NotEnoughSteps { requested: usize, available: usize },
    #[error("this session has no decision tree to evaluate counterfactuals")]
    NoTree,
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}
