//! Behavior representations: the decision path a surrogate tree takes for a
//! given observation, its simplified per-feature form, template text, and
//! counterfactual re-evaluation.

mod phrases;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use phrases::{FeaturePhrases, PhraseTable, DEFAULT_PHRASES_TOML};

use crate::distill::{DecisionTree, DistillError, Node};
use crate::env::{Action, AgentId};
use crate::features::{Feature, FeatureKind, FeatureVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error("decision path constrains {feature} to an empty interval")]
    Inconsistent { feature: Feature },
    #[error("phrase table has no entry for {feature}")]
    MissingPhrase { feature: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("{value} is not a valid value for {feature}")]
    InvalidValue { feature: Feature, value: f64 },
    #[error("phrase table: {0}")]
    PhraseConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub feature: Feature,
    pub op: Op,
    pub threshold: f64,
}

impl Predicate {
    pub fn holds(&self, fv: &FeatureVector) -> bool {
        let v = fv.get(self.feature);
        match self.op {
            Op::Le => v <= self.threshold,
            Op::Gt => v > self.threshold,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            Op::Le => "<=",
            Op::Gt => ">",
        };
        write!(f, "{} {} {}", self.feature, op, self.threshold)
    }
}

/// The behavior representation for one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPath {
    pub agent: AgentId,
    /// Tests in root-to-leaf order, each with the branch actually taken.
    pub predicates: Vec<Predicate>,
    pub action: Action,
    /// Share of training rows at the leaf that took `action`.
    pub confidence: f64,
}

impl DecisionPath {
    pub fn holds(&self, fv: &FeatureVector) -> bool {
        self.predicates.iter().all(|p| p.holds(fv))
    }

    /// Distinct features tested along the path, in first-use order.
    pub fn features(&self) -> Vec<Feature> {
        let mut out: Vec<Feature> = Vec::new();
        for p in &self.predicates {
            if !out.contains(&p.feature) {
                out.push(p.feature);
            }
        }
        out
    }
}

pub fn extract_path(tree: &DecisionTree, features: &FeatureVector, agent: AgentId) -> Result<DecisionPath, BehaviorError> {
    let trace = tree.trace(features)?;
    let nodes = tree.nodes();
    let mut predicates = Vec::with_capacity(trace.len().saturating_sub(1));
    for w in trace.windows(2) {
        if let Node::Split {
            feature,
            threshold,
            left,
            ..
        } = &nodes[w[0]]
        {
            predicates.push(Predicate {
                feature: *feature,
                op: if w[1] == *left { Op::Le } else { Op::Gt },
                threshold: *threshold,
            });
        }
    }
    let Node::Leaf {
        action, distribution, ..
    } = &nodes[*trace.last().expect("trace ends at a leaf")]
    else {
        unreachable!("trace ends at a leaf");
    };
    Ok(DecisionPath {
        agent,
        predicates,
        action: *action,
        confidence: distribution.get(action).copied().unwrap_or(0.0),
    })
}

/// Consolidated constraint on a single feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Binary feature fixed to true or false.
    Is(bool),
    /// `above < value <= at_most`; a missing bound is unbounded.
    Range {
        above: Option<f64>,
        at_most: Option<f64>,
    },
}

impl Constraint {
    pub fn holds(&self, value: f64) -> bool {
        match *self {
            Constraint::Is(b) => (value > 0.5) == b,
            Constraint::Range { above, at_most } => {
                above.is_none_or(|lo| value > lo) && at_most.is_none_or(|hi| value <= hi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedPath {
    /// At most one entry per feature, in first-use order along the path.
    pub constraints: Vec<(Feature, Constraint)>,
    pub action: Action,
    pub agent: AgentId,
}

impl SimplifiedPath {
    pub fn holds(&self, fv: &FeatureVector) -> bool {
        self.constraints.iter().all(|(f, c)| c.holds(fv.get(*f)))
    }
}

pub fn simplify_path(path: &DecisionPath) -> Result<SimplifiedPath, BehaviorError> {
    let mut order = Vec::new();
    let mut bounds: BTreeMap<Feature, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for p in &path.predicates {
        let entry = bounds.entry(p.feature).or_insert_with(|| {
            order.push(p.feature);
            (None, None)
        });
        match p.op {
            Op::Le => entry.1 = Some(entry.1.map_or(p.threshold, |hi: f64| hi.min(p.threshold))),
            Op::Gt => entry.0 = Some(entry.0.map_or(p.threshold, |lo: f64| lo.max(p.threshold))),
        }
    }
    let mut constraints = Vec::with_capacity(order.len());
    for feature in order {
        let (above, at_most) = bounds[&feature];
        if let (Some(lo), Some(hi)) = (above, at_most) {
            if lo >= hi {
                return Err(BehaviorError::Inconsistent { feature });
            }
        }
        let range = Constraint::Range { above, at_most };
        let c = if feature.kind() == FeatureKind::Binary {
            match (range.holds(0.0), range.holds(1.0)) {
                (false, true) => Constraint::Is(true),
                (true, false) => Constraint::Is(false),
                (false, false) => return Err(BehaviorError::Inconsistent { feature }),
                (true, true) => range,
            }
        } else {
            range
        };
        constraints.push((feature, c));
    }
    Ok(SimplifiedPath {
        constraints,
        action: path.action,
        agent: path.agent,
    })
}

/// Feature overrides for a "what if" question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub flips: BTreeMap<Feature, f64>,
}

impl CounterfactualQuery {
    pub fn new(flips: impl IntoIterator<Item = (Feature, f64)>) -> Self {
        Self {
            flips: flips.into_iter().collect(),
        }
    }

    /// Build from feature names, rejecting unknown names and out-of-domain values.
    pub fn from_named<'a>(flips: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, BehaviorError> {
        let mut out = BTreeMap::new();
        for (name, value) in flips {
            let feature = Feature::from_name(name).ok_or_else(|| BehaviorError::UnknownFeature(name.to_string()))?;
            out.insert(feature, value);
        }
        let q = Self { flips: out };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        for (&feature, &value) in &self.flips {
            if !feature.accepts(value) {
                return Err(BehaviorError::InvalidValue { feature, value });
            }
        }
        Ok(())
    }

    pub fn apply(&self, features: &FeatureVector) -> FeatureVector {
        let mut out = *features;
        for (&f, &v) in &self.flips {
            out.set(f, v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualOutcome {
    pub original: DecisionPath,
    pub path: DecisionPath,
    /// Whether the predicted action differs from the original one.
    pub changed: bool,
}

/// Re-evaluate the surrogate on a perturbed copy of `features`.
pub fn counterfactual(
    tree: &DecisionTree,
    features: &FeatureVector,
    agent: AgentId,
    query: &CounterfactualQuery,
) -> Result<CounterfactualOutcome, BehaviorError> {
    query.validate()?;
    let original = extract_path(tree, features, agent)?;
    let path = extract_path(tree, &query.apply(features), agent)?;
    Ok(CounterfactualOutcome {
        changed: path.action != original.action,
        original,
        path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{fit_tree, LabeledDataset, TreeParams};
    use crate::features::NUM_FEATURES;

    fn fv(pairs: &[(Feature, f64)]) -> FeatureVector {
        let mut v = FeatureVector::from_values([0.0; NUM_FEATURES]);
        for &(f, x) in pairs {
            v.set(f, x);
        }
        v
    }

    pub(crate) fn victim_tree() -> DecisionTree {
        let rows = (0..20)
            .map(|i| {
                let victim = (i % 2) as f64;
                let a = if victim > 0.0 { Action::TriageVictim } else { Action::MoveNorth };
                (fv(&[(Feature::VictimInRoom, victim), (Feature::DirRubble, (i % 5) as f64)]), a)
            })
            .collect();
        fit_tree(&LabeledDataset::new(rows), TreeParams::default()).unwrap()
    }

    fn pred(feature: Feature, op: Op, threshold: f64) -> Predicate {
        Predicate { feature, op, threshold }
    }

    #[test]
    fn single_leaf_path_is_empty() {
        let tree = DecisionTree::constant(Action::MoveNorth);
        let p = extract_path(&tree, &fv(&[]), AgentId::Medic).unwrap();
        assert!(p.predicates.is_empty());
        assert_eq!(p.action, Action::MoveNorth);
        assert_eq!(p.confidence, 1.0);
    }

    #[test]
    fn victim_path_records_taken_branch() {
        let tree = victim_tree();
        let p = extract_path(&tree, &fv(&[(Feature::VictimInRoom, 1.0)]), AgentId::Medic).unwrap();
        assert_eq!(p.predicates, vec![pred(Feature::VictimInRoom, Op::Gt, 0.5)]);
        assert_eq!(p.action, Action::TriageVictim);
        let p = extract_path(&tree, &fv(&[]), AgentId::Medic).unwrap();
        assert_eq!(p.predicates, vec![pred(Feature::VictimInRoom, Op::Le, 0.5)]);
        assert_eq!(p.action, Action::MoveNorth);
    }

    #[test]
    fn simplify_intersects_intervals() {
        let path = DecisionPath {
            agent: AgentId::Medic,
            predicates: vec![
                pred(Feature::DistNearestKnownVictim, Op::Le, 5.0),
                pred(Feature::DistNearestKnownVictim, Op::Le, 3.0),
            ],
            action: Action::Wait,
            confidence: 1.0,
        };
        let s = simplify_path(&path).unwrap();
        assert_eq!(
            s.constraints,
            vec![(
                Feature::DistNearestKnownVictim,
                Constraint::Range {
                    above: None,
                    at_most: Some(3.0)
                }
            )]
        );
    }

    #[test]
    fn simplify_renders_binary_as_truth_value() {
        let path = DecisionPath {
            agent: AgentId::Medic,
            predicates: vec![pred(Feature::VictimInRoom, Op::Gt, 0.5)],
            action: Action::TriageVictim,
            confidence: 1.0,
        };
        let s = simplify_path(&path).unwrap();
        assert_eq!(s.constraints, vec![(Feature::VictimInRoom, Constraint::Is(true))]);
    }

    #[test]
    fn contradictory_path_is_an_error() {
        let path = DecisionPath {
            agent: AgentId::Engineer,
            predicates: vec![pred(Feature::DirRubble, Op::Gt, 2.5), pred(Feature::DirRubble, Op::Le, 1.5)],
            action: Action::Wait,
            confidence: 1.0,
        };
        assert_eq!(
            simplify_path(&path),
            Err(BehaviorError::Inconsistent {
                feature: Feature::DirRubble
            })
        );
    }

    #[test]
    fn counterfactual_identity_and_flip() {
        let tree = victim_tree();
        let x = fv(&[]);
        let same = counterfactual(&tree, &x, AgentId::Medic, &CounterfactualQuery::default()).unwrap();
        assert!(!same.changed);
        assert_eq!(same.original, same.path);

        let q = CounterfactualQuery::new([(Feature::VictimInRoom, 1.0)]);
        let out = counterfactual(&tree, &x, AgentId::Medic, &q).unwrap();
        assert!(out.changed);
        assert_eq!(out.path.action, Action::TriageVictim);
    }

    #[test]
    fn counterfactual_rejects_bad_flips() {
        assert_eq!(
            CounterfactualQuery::from_named([("victim_nearby", 1.0)]),
            Err(BehaviorError::UnknownFeature("victim_nearby".into()))
        );
        assert!(matches!(
            CounterfactualQuery::from_named([("victim_in_room", 2.0)]),
            Err(BehaviorError::InvalidValue { .. })
        ));
        assert!(CounterfactualQuery::from_named([("dist_nearest_known_victim", 99.0)]).is_ok());
    }
}
