//! Explaining agent behaviour from observed states and actions.
//!
//! The pipeline distills a policy into a decision tree, extracts the decision
//! path for a state as a compact behavior representation, and turns that path
//! into a prompt for a chat-completions model. The search-and-rescue gridworld
//! and scripted policies provide trajectories to explain.

pub mod behavior;
pub mod distill;
pub mod env;
pub mod eval;
pub mod explainer;
pub mod features;
pub mod policy;
pub mod rollout;
