//! Distilling a policy into a decision-tree surrogate from observed
//! state-action pairs.

mod cart;
mod tree;

use thiserror::Error;

pub use cart::gini;
pub use tree::{DecisionTree, Node, TREE_FORMAT_VERSION};

use crate::env::{Action, AgentId, WorldState};
use crate::features::{extract_features, FeatureVector, FEATURE_SCHEMA_VERSION};
use crate::policy::Policy;
use crate::rollout::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("no trajectory steps for the {0}")]
    NoRowsForRole(AgentId),
    #[error("cannot fit a tree on an empty dataset")]
    EmptyDataset,
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
    #[error("feature schema mismatch: expected version {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },
    #[error("fidelity needs at least one state")]
    NoStates,
    #[error("malformed tree{}: {message}", node.map(|i| format!(" at node {i}")).unwrap_or_default())]
    Parse { node: Option<usize>, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub schema_version: u32,
    pub rows: Vec<(FeatureVector, Action)>,
}

impl LabeledDataset {
    pub fn new(rows: Vec<(FeatureVector, Action)>) -> Self {
        Self {
            schema_version: FEATURE_SCHEMA_VERSION,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_samples_leaf: 5,
        }
    }
}

impl TreeParams {
    /// Grow until leaves are pure or cannot be split.
    pub fn unbounded() -> Self {
        Self {
            max_depth: usize::MAX,
            min_samples_leaf: 1,
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if self.max_depth < 1 {
            return Err(DistillError::InvalidParams("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(DistillError::InvalidParams("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row per step taken by `role`, in input order.
pub fn build_dataset(trajectories: &[Trajectory], role: AgentId) -> Result<LabeledDataset, DistillError> {
    let rows: Vec<_> = trajectories
        .iter()
        .filter(|t| t.agent == role)
        .flat_map(|t| t.steps.iter().map(|s| (s.features, s.action)))
        .collect();
    if rows.is_empty() {
        return Err(DistillError::NoRowsForRole(role));
    }
    Ok(LabeledDataset::new(rows))
}

/// Fit a CART tree. Deterministic in `(data, params)`.
pub fn fit_tree(data: &LabeledDataset, params: TreeParams) -> Result<DecisionTree, DistillError> {
    params.validate()?;
    if data.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    if data.schema_version != FEATURE_SCHEMA_VERSION {
        return Err(DistillError::SchemaMismatch {
            expected: FEATURE_SCHEMA_VERSION,
            found: data.schema_version,
        });
    }
    Ok(cart::fit(data, params))
}

pub fn predict(tree: &DecisionTree, features: &FeatureVector) -> Result<Action, DistillError> {
    tree.predict(features)
}

/// Fraction of `states` on which the tree agrees with `policy`.
pub fn fidelity(tree: &DecisionTree, policy: &Policy, states: &[WorldState]) -> Result<f64, DistillError> {
    if states.is_empty() {
        return Err(DistillError::NoStates);
    }
    let mut agree = 0usize;
    for s in states {
        let fv = extract_features(s, policy.role);
        if tree.predict(&fv)? == policy.act(s) {
            agree += 1;
        }
    }
    Ok(agree as f64 / states.len() as f64)
}

/// Agreement between the tree and recorded actions, for trajectories that
/// carry no world state (e.g. read from a file produced by another policy).
pub fn replay_agreement(tree: &DecisionTree, rows: &LabeledDataset) -> Result<f64, DistillError> {
    if rows.is_empty() {
        return Err(DistillError::EmptyDataset);
    }
    let mut agree = 0usize;
    for (fv, action) in &rows.rows {
        if tree.predict(fv)? == *action {
            agree += 1;
        }
    }
    Ok(agree as f64 / rows.len() as f64)
}
