//! Automated explanation scoring: feature mentions, grounding precision
//! against the decision path, polarity contradictions against the true
//! state, and the policy × condition study grid.
//!
//! Grounding precision is a proxy for hallucination, not a human judgment:
//! it counts feature mentions found by phrase matching and checks them
//! against the surrogate's decision path.

mod lexicon;
mod study;

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

pub use lexicon::{extract_mentions, FeatureLexicon, Mention};
pub use study::{prepare_study, run_study, PolicyArtifacts, StudyGrid, StudyInputs, StudyReport, StudyRow};

use crate::behavior::{BehaviorError, DecisionPath};
use crate::distill::DistillError;
use crate::env::{AgentId, WorldState};
use crate::explainer::ExplainError;
use crate::features::{extract_features, Feature, FeatureKind, FeatureVector};
use crate::rollout::RolloutError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("phrase `{phrase}` is used for both {first} and {second}")]
    AmbiguousPhrase {
        phrase: String,
        first: Feature,
        second: Feature,
    },
    #[error("invalid study grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A binary feature claim in the text that contradicts the true state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FactualFlag {
    pub feature: Feature,
    pub claimed: bool,
    pub actual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundingRow {
    pub mentioned: BTreeSet<Feature>,
    pub path_features: BTreeSet<Feature>,
    /// |mentioned ∩ path| / |mentioned|, or 1.0 with no mentions.
    pub precision: f64,
    /// At most one flag per feature.
    pub flags: Vec<FactualFlag>,
}

/// Score `text` against the path and the true world state.
pub fn grounding_score(
    text: &str,
    path: &DecisionPath,
    truth: &WorldState,
    agent: AgentId,
    lexicon: &FeatureLexicon,
) -> GroundingRow {
    grounding_score_features(text, path, &extract_features(truth, agent), lexicon)
}

/// As [`grounding_score`], with the true observation given directly.
pub fn grounding_score_features(
    text: &str,
    path: &DecisionPath,
    truth: &FeatureVector,
    lexicon: &FeatureLexicon,
) -> GroundingRow {
    let mentions = lexicon.scan(text);
    let mentioned: BTreeSet<Feature> = mentions.iter().map(|m| m.feature).collect();
    let path_features: BTreeSet<Feature> = path.features().into_iter().collect();
    let precision = if mentioned.is_empty() {
        1.0
    } else {
        mentioned.intersection(&path_features).count() as f64 / mentioned.len() as f64
    };
    let mut flags: Vec<FactualFlag> = Vec::new();
    for m in &mentions {
        let Some(claimed) = m.polarity else { continue };
        if m.feature.kind() != FeatureKind::Binary || flags.iter().any(|f| f.feature == m.feature) {
            continue;
        }
        let actual = truth.get(m.feature) > 0.5;
        if claimed != actual {
            flags.push(FactualFlag {
                feature: m.feature,
                claimed,
                actual,
            });
        }
    }
    GroundingRow {
        mentioned,
        path_features,
        precision,
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{Op, Predicate};
    use crate::env::Action;
    use crate::features::NUM_FEATURES;

    fn path(features: &[Feature]) -> DecisionPath {
        DecisionPath {
            agent: AgentId::Medic,
            predicates: features
                .iter()
                .map(|&feature| Predicate {
                    feature,
                    op: Op::Le,
                    threshold: 0.5,
                })
                .collect(),
            action: Action::MoveNorth,
            confidence: 1.0,
        }
    }

    fn zeros() -> FeatureVector {
        FeatureVector::from_values([0.0; NUM_FEATURES])
    }

    #[test]
    fn no_mentions_means_full_precision() {
        let r = grounding_score_features("The medic waited.", &path(&[]), &zeros(), &FeatureLexicon::default());
        assert_eq!(r.precision, 1.0);
        assert!(r.mentioned.is_empty() && r.flags.is_empty());
    }

    #[test]
    fn one_on_path_one_off_path_is_half() {
        let text = "a victim is not in the current room and the direction of the nearest rubble is north";
        let r = grounding_score_features(text, &path(&[Feature::VictimInRoom]), &zeros(), &FeatureLexicon::default());
        assert_eq!(r.precision, 0.5);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn contradicting_polarity_is_flagged_once() {
        let text = "A victim is in the room. There is a victim in the room.";
        let r = grounding_score_features(text, &path(&[Feature::VictimInRoom]), &zeros(), &FeatureLexicon::default());
        assert_eq!(
            r.flags,
            vec![FactualFlag {
                feature: Feature::VictimInRoom,
                claimed: true,
                actual: false
            }]
        );
        assert_eq!(r.precision, 1.0);
    }

    #[test]
    fn non_binary_mentions_are_never_flagged() {
        let text = "the direction of the nearest rubble is east";
        let r = grounding_score_features(text, &path(&[]), &zeros(), &FeatureLexicon::default());
        assert!(r.flags.is_empty());
        assert_eq!(r.precision, 0.0);
    }
}
