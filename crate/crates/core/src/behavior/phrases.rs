use std::collections::BTreeMap;

use serde::Deserialize;

use super::{BehaviorError, Constraint, DecisionPath, SimplifiedPath};
use crate::env::{Action, AgentId, Direction};
use crate::features::{Feature, FeatureKind, FeatureVector, MAX_GRID_DISTANCE, NO_VICTIM_DISTANCE};

pub const DEFAULT_PHRASES_TOML: &str = include_str!("../../config/phrases.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeaturePhrases {
    Binary {
        when_true: String,
        when_false: String,
        #[serde(default)]
        synonyms_true: Vec<String>,
        #[serde(default)]
        synonyms_false: Vec<String>,
    },
    Distance {
        noun: String,
        unit: String,
        /// Unit used when the only number in the clause is 1.
        #[serde(default)]
        unit_singular: Option<String>,
        unknown: String,
        #[serde(default)]
        synonyms: Vec<String>,
    },
    Direction {
        noun: String,
        none: String,
        #[serde(default)]
        synonyms: Vec<String>,
    },
}

impl FeaturePhrases {
    fn kind(&self) -> FeatureKind {
        match self {
            FeaturePhrases::Binary { .. } => FeatureKind::Binary,
            FeaturePhrases::Distance { .. } => FeatureKind::Distance,
            FeaturePhrases::Direction { .. } => FeatureKind::Direction,
        }
    }

    /// Every surface form with the truth value it asserts, if any.
    pub fn surface_forms(&self) -> Vec<(&str, Option<bool>)> {
        match self {
            FeaturePhrases::Binary {
                when_true,
                when_false,
                synonyms_true,
                synonyms_false,
            } => std::iter::once((when_true.as_str(), Some(true)))
                .chain(synonyms_true.iter().map(|s| (s.as_str(), Some(true))))
                .chain(std::iter::once((when_false.as_str(), Some(false))))
                .chain(synonyms_false.iter().map(|s| (s.as_str(), Some(false))))
                .collect(),
            FeaturePhrases::Distance {
                noun, unknown, synonyms, ..
            } => std::iter::once(noun.as_str())
                .chain(std::iter::once(unknown.as_str()))
                .chain(synonyms.iter().map(String::as_str))
                .map(|s| (s, None))
                .collect(),
            FeaturePhrases::Direction { noun, synonyms, .. } => std::iter::once(noun.as_str())
                .chain(synonyms.iter().map(String::as_str))
                .map(|s| (s, None))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseDoc {
    version: u32,
    actions: BTreeMap<Action, String>,
    features: BTreeMap<String, FeaturePhrases>,
}

/// Fixed per-feature wording used to verbalize decision paths and observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTable {
    pub version: u32,
    actions: BTreeMap<Action, String>,
    features: BTreeMap<Feature, FeaturePhrases>,
}

impl Default for PhraseTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PHRASES_TOML).expect("bundled phrase table is valid")
    }
}

fn cap_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn agent_noun(agent: AgentId) -> &'static str {
    match agent {
        AgentId::Engineer => "the engineer",
        AgentId::Medic => "the medic",
    }
}

impl PhraseTable {
    pub fn from_toml(text: &str) -> Result<Self, BehaviorError> {
        let doc: PhraseDoc = toml::from_str(text).map_err(|e| BehaviorError::PhraseConfig(e.to_string()))?;
        let mut features = BTreeMap::new();
        for (name, phrases) in doc.features {
            let feature = Feature::from_name(&name).ok_or_else(|| BehaviorError::UnknownFeature(name.clone()))?;
            if phrases.kind() != feature.kind() {
                return Err(BehaviorError::PhraseConfig(format!(
                    "{name} is a {:?} feature but its phrases are {:?}",
                    feature.kind(),
                    phrases.kind()
                )));
            }
            features.insert(feature, phrases);
        }
        Ok(Self {
            version: doc.version,
            actions: doc.actions,
            features,
        })
    }

    pub fn phrases(&self, feature: Feature) -> Result<&FeaturePhrases, BehaviorError> {
        self.features.get(&feature).ok_or_else(|| BehaviorError::MissingPhrase {
            feature: feature.name().to_string(),
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (Feature, &FeaturePhrases)> {
        self.features.iter().map(|(f, p)| (*f, p))
    }

    pub fn action_phrase(&self, action: Action) -> String {
        self.actions
            .get(&action)
            .cloned()
            .unwrap_or_else(|| format!("took action {action}"))
    }

    /// "The medic moved north."
    pub fn action_sentence(&self, agent: AgentId, action: Action) -> String {
        format!("{} {}.", cap_first(agent_noun(agent)), self.action_phrase(action))
    }

    /// One clause for a consolidated constraint.
    pub fn clause(&self, feature: Feature, constraint: &Constraint) -> Result<String, BehaviorError> {
        let inconsistent = || BehaviorError::Inconsistent { feature };
        match (self.phrases(feature)?, constraint) {
            (FeaturePhrases::Binary { when_true, when_false, .. }, Constraint::Is(b)) => {
                Ok(if *b { when_true.clone() } else { when_false.clone() })
            }
            (FeaturePhrases::Binary { when_true, when_false, .. }, Constraint::Range { .. }) => {
                Ok(format!("{when_true} or {when_false}"))
            }
            (
                FeaturePhrases::Distance {
                    noun,
                    unit,
                    unit_singular,
                    unknown,
                    ..
                },
                c,
            ) => {
                let (above, at_most) = match *c {
                    Constraint::Range { above, at_most } => (above, at_most),
                    Constraint::Is(b) => (Some(if b { 0.5 } else { f64::NEG_INFINITY }), None),
                };
                // integer distances satisfying the bounds: [lower, upper]
                let lower = above.map_or(0, |lo| (lo.floor() as i64 + 1).max(0));
                // any bound past the grid only separates real distances from the sentinel
                let upper = at_most.map(|hi| (hi.floor() as i64).min(MAX_GRID_DISTANCE as i64));
                if upper.is_some_and(|u| u < lower) {
                    return Err(inconsistent());
                }
                if lower > MAX_GRID_DISTANCE as i64 {
                    return Ok(unknown.clone());
                }
                let mut parts = Vec::new();
                // "at least 1 room" / "fewer than 1 room"
                let single_one = matches!((lower, upper), (1, None) | (0, Some(0)));
                if lower > 0 {
                    parts.push(format!("at least {lower}"));
                }
                if let Some(u) = upper {
                    parts.push(format!("fewer than {}", u + 1));
                }
                if parts.is_empty() {
                    parts.push("any number of".to_string());
                }
                let unit = if single_one { unit_singular.as_ref().unwrap_or(unit) } else { unit };
                let mut out = format!("{noun} is {} {unit}", parts.join(" and "));
                if upper.is_none() {
                    out.push_str(&format!(", or {unknown}"));
                }
                Ok(out)
            }
            (FeaturePhrases::Direction { noun, none, .. }, c) => {
                let label = |code: u8| Direction::from_code(code).map_or(none.as_str(), |d| d.name());
                let (inside, outside): (Vec<u8>, Vec<u8>) = (0..=4u8).partition(|&v| c.holds(f64::from(v)));
                if inside.is_empty() {
                    return Err(inconsistent());
                }
                let list = |v: &[u8]| v.iter().map(|&x| label(x)).collect::<Vec<_>>().join(" or ");
                if outside.is_empty() {
                    Ok(format!("{noun} is any direction"))
                } else if inside.len() <= outside.len() {
                    Ok(format!("{noun} is {}", list(&inside)))
                } else if outside.len() == 1 {
                    Ok(format!("{noun} is not {}", label(outside[0])))
                } else {
                    let names: Vec<&str> = outside.iter().map(|&x| label(x)).collect();
                    Ok(format!("{noun} is neither {}", names.join(" nor ")))
                }
            }
        }
    }

    /// Clauses for every entry of a simplified path, in path order.
    pub fn clauses(&self, path: &SimplifiedPath) -> Result<Vec<String>, BehaviorError> {
        path.constraints.iter().map(|(f, c)| self.clause(*f, c)).collect()
    }

    /// Template explanation: "The medic triaged the victim because A and B."
    pub fn render_template(&self, path: &DecisionPath) -> Result<String, BehaviorError> {
        let simplified = super::simplify_path(path)?;
        let clauses = self.clauses(&simplified)?;
        let subject = cap_first(agent_noun(path.agent));
        let action = self.action_phrase(path.action);
        if clauses.is_empty() {
            Ok(format!("{subject} {action}."))
        } else {
            Ok(format!("{subject} {action} because {}.", clauses.join(" and ")))
        }
    }

    /// Clause stating the exact value of one feature.
    pub fn describe_value(&self, feature: Feature, value: f64) -> Result<String, BehaviorError> {
        match self.phrases(feature)? {
            FeaturePhrases::Binary { when_true, when_false, .. } => {
                Ok(if value > 0.5 { when_true.clone() } else { when_false.clone() })
            }
            FeaturePhrases::Distance {
                noun,
                unit,
                unit_singular,
                unknown,
                ..
            } => {
                let unit = if value == 1.0 { unit_singular.as_ref().unwrap_or(unit) } else { unit };
                if value >= NO_VICTIM_DISTANCE {
                    Ok(unknown.clone())
                } else {
                    Ok(format!("{noun} is {value} {unit}"))
                }
            }
            FeaturePhrases::Direction { noun, none, .. } => {
                let label = Direction::from_code(value as u8).map_or(none.as_str(), |d| d.name());
                Ok(format!("{noun} is {label}"))
            }
        }
    }

    /// Every feature value, one clause each, in schema order.
    pub fn describe_observation(&self, fv: &FeatureVector) -> Result<Vec<String>, BehaviorError> {
        Feature::ALL.iter().map(|&f| self.describe_value(f, fv.get(f))).collect()
    }
}
