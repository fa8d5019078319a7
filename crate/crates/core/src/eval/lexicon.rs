use std::collections::{BTreeMap, BTreeSet};

use super::EvalError;
use crate::behavior::PhraseTable;
use crate::features::Feature;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    phrase: String,
    feature: Feature,
    polarity: Option<bool>,
}

/// A feature phrase found in free text.
#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub feature: Feature,
    /// Truth value asserted by the phrase, for binary features.
    pub polarity: Option<bool>,
    /// Byte range in the scanned text.
    pub start: usize,
    pub end: usize,
}

/// Surface phrases per feature: the phrase table's canonical clauses plus synonyms.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLexicon {
    /// Longest phrase first.
    entries: Vec<Entry>,
}

impl Default for FeatureLexicon {
    fn default() -> Self {
        Self::from_phrases(&PhraseTable::default()).expect("bundled phrase table yields an unambiguous lexicon")
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl FeatureLexicon {
    pub fn from_phrases(table: &PhraseTable) -> Result<Self, EvalError> {
        let mut seen: BTreeMap<String, (Feature, Option<bool>)> = BTreeMap::new();
        for (feature, phrases) in table.entries() {
            for (text, polarity) in phrases.surface_forms() {
                let phrase = text.trim().to_ascii_lowercase();
                if phrase.is_empty() {
                    continue;
                }
                match seen.get(&phrase) {
                    Some(&(f, p)) if f != feature || p != polarity => {
                        return Err(EvalError::AmbiguousPhrase {
                            phrase,
                            first: f,
                            second: feature,
                        })
                    }
                    _ => {
                        seen.insert(phrase, (feature, polarity));
                    }
                }
            }
        }
        let mut entries: Vec<Entry> = seen
            .into_iter()
            .map(|(phrase, (feature, polarity))| Entry {
                phrase,
                feature,
                polarity,
            })
            .collect();
        entries.sort_by(|a, b| b.phrase.len().cmp(&a.phrase.len()).then_with(|| a.phrase.cmp(&b.phrase)));
        Ok(Self { entries })
    }

    pub fn phrases(&self, feature: Feature) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.feature == feature)
            .map(|e| e.phrase.as_str())
    }

    /// Case-insensitive, left-to-right, longest-match scan on word boundaries.
    pub fn scan(&self, text: &str) -> Vec<Mention> {
        let lower = text.to_ascii_lowercase();
        let bytes = lower.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let at_word_start = i == 0 || !is_word_byte(bytes[i - 1]);
            if at_word_start && lower.is_char_boundary(i) {
                let hit = self.entries.iter().find(|e| {
                    let end = i + e.phrase.len();
                    bytes[i..].starts_with(e.phrase.as_bytes()) && (end == bytes.len() || !is_word_byte(bytes[end]))
                });
                if let Some(e) = hit {
                    out.push(Mention {
                        feature: e.feature,
                        polarity: e.polarity,
                        start: i,
                        end: i + e.phrase.len(),
                    });
                    i += e.phrase.len();
                    continue;
                }
            }
            i += 1;
        }
        out
    }
}

/// Features mentioned in `text`, each once.
pub fn extract_mentions(text: &str, lexicon: &FeatureLexicon) -> BTreeSet<Feature> {
    lexicon.scan(text).into_iter().map(|m| m.feature).collect()
}
