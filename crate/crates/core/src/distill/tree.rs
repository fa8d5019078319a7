use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::env::Action;
use crate::features::{Feature, FeatureVector, FEATURE_SCHEMA_VERSION};

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Inputs with `feature <= threshold` go left, the rest go right.
    Split {
        feature: Feature,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        action: Action,
        /// Fraction of training rows per action; only non-zero entries are kept.
        distribution: BTreeMap<Action, f64>,
        samples: usize,
    },
}

/// A fitted surrogate policy. Node 0 is the root; nodes are stored in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) feature_schema_version: u32,
}

impl DecisionTree {
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Self {
        Self {
            nodes,
            feature_schema_version: FEATURE_SCHEMA_VERSION,
        }
    }

    /// A tree that always predicts `action`.
    pub fn constant(action: Action) -> Self {
        Self::from_nodes(vec![Node::Leaf {
            action,
            distribution: BTreeMap::from([(action, 1.0)]),
            samples: 0,
        }])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn feature_schema_version(&self) -> u32 {
        self.feature_schema_version
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Largest number of splits on any root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub(crate) fn check_schema(&self) -> Result<(), DistillError> {
        if self.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(DistillError::SchemaMismatch {
                expected: FEATURE_SCHEMA_VERSION,
                found: self.feature_schema_version,
            });
        }
        Ok(())
    }

    /// Indices of the nodes visited for `features`, ending at a leaf.
    pub fn trace(&self, features: &FeatureVector) -> Result<Vec<usize>, DistillError> {
        self.check_schema()?;
        let mut out = Vec::new();
        let mut i = 0;
        loop {
            out.push(i);
            match &self.nodes[i] {
                Node::Leaf { .. } => return Ok(out),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if features.get(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<Action, DistillError> {
        let path = self.trace(features)?;
        match &self.nodes[*path.last().expect("trace is never empty")] {
            Node::Leaf { action, .. } => Ok(*action),
            Node::Split { .. } => unreachable!("trace ends at a leaf"),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = TreeDoc {
            format_version: TREE_FORMAT_VERSION,
            feature_schema_version: self.feature_schema_version,
            features: crate::features::Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
            nodes: self.nodes.iter().map(NodeDoc::from).collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("tree serializes");
        s.push('\n');
        s
    }

    /// Parse and validate a tree document. Errors name the offending node.
    pub fn from_json(text: &str) -> Result<Self, DistillError> {
        let doc: TreeDoc = serde_json::from_str(text).map_err(|e| DistillError::Parse {
            node: None,
            message: e.to_string(),
        })?;
        if doc.format_version != TREE_FORMAT_VERSION {
            return Err(DistillError::Parse {
                node: None,
                message: format!("unsupported tree format version {}", doc.format_version),
            });
        }
        if doc.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(DistillError::SchemaMismatch {
                expected: FEATURE_SCHEMA_VERSION,
                found: doc.feature_schema_version,
            });
        }
        if doc.nodes.is_empty() {
            return Err(DistillError::Parse {
                node: None,
                message: "tree has no nodes".into(),
            });
        }
        let n = doc.nodes.len();
        let mut nodes = Vec::with_capacity(n);
        let mut parents = vec![0usize; n];
        for (i, nd) in doc.nodes.into_iter().enumerate() {
            let err = |message: String| DistillError::Parse {
                node: Some(i),
                message,
            };
            nodes.push(match nd {
                NodeDoc::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let feature = Feature::from_name(&feature)
                        .ok_or_else(|| err(format!("unknown feature `{feature}`")))?;
                    if !threshold.is_finite() {
                        return Err(err("threshold is not finite".into()));
                    }
                    for child in [left, right] {
                        // children after their parent rules out cycles
                        if child <= i || child >= n {
                            return Err(err(format!("child index {child} is out of range")));
                        }
                        parents[child] += 1;
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    }
                }
                NodeDoc::Leaf {
                    action,
                    distribution,
                    samples,
                } => {
                    let total: f64 = distribution.values().sum();
                    if distribution.values().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
                        return Err(err(format!("leaf distribution sums to {total}, not 1")));
                    }
                    Node::Leaf {
                        action,
                        distribution,
                        samples,
                    }
                }
            });
        }
        if let Some(i) = (1..n).find(|&i| parents[i] != 1) {
            return Err(DistillError::Parse {
                node: Some(i),
                message: format!("node is referenced {} times, expected once", parents[i]),
            });
        }
        Ok(Self {
            nodes,
            feature_schema_version: FEATURE_SCHEMA_VERSION,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    format_version: u32,
    feature_schema_version: u32,
    features: Vec<String>,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum NodeDoc {
    Split {
        feature: String,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        action: Action,
        distribution: BTreeMap<Action, f64>,
        samples: usize,
    },
}

impl From<&Node> for NodeDoc {
    fn from(n: &Node) -> Self {
        match n {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => NodeDoc::Split {
                feature: feature.name().to_string(),
                threshold: *threshold,
                left: *left,
                right: *right,
            },
            Node::Leaf {
                action,
                distribution,
                samples,
            } => NodeDoc::Leaf {
                action: *action,
                distribution: distribution.clone(),
                samples: *samples,
            },
        }
    }
}
