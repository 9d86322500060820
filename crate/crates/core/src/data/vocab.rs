use std::collections::HashMap;

use super::conll::LabeledSentence;
use super::tags::TagSet;
use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// String ↔ id map with reserved padding and unknown entries at ids 0 and 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    itos: Vec<String>,
    stoi: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>()).expect("reserved entries only")
    }
}

impl Vocab {
    /// Frequency-ordered (ties broken lexically) over tokens seen at least
    /// `min_count` times.
    pub fn from_counts(counts: &HashMap<String, usize>, min_count: usize) -> Self {
        let mut entries: Vec<(&String, &usize)> = counts.iter().filter(|(_, &c)| c >= min_count).collect();
        entries.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(entries.into_iter().map(|(s, _)| s.clone())).expect("counts keys are unique")
    }

    /// Ids assigned in iteration order after the reserved entries.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            itos: vec![PAD.to_string(), UNK.to_string()],
            stoi: HashMap::from([(PAD.to_string(), PAD_ID), (UNK.to_string(), UNK_ID)]),
        };
        for t in tokens {
            let t = t.into();
            if v.stoi.contains_key(&t) {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
            v.stoi.insert(t.clone(), v.itos.len());
            v.itos.push(t);
        }
        Ok(v)
    }

    /// Rebuilds from a full table written by [`Vocab::entries`].
    pub fn from_table(entries: Vec<String>) -> Result<Self> {
        if entries.len() < 2 || entries[PAD_ID] != PAD || entries[UNK_ID] != UNK {
            return Err(Error::Artifact("vocabulary table lacks reserved entries".into()));
        }
        Self::from_tokens(entries.into_iter().skip(2))
    }

    pub fn len(&self) -> usize {
        self.itos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itos.len() <= 2
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.stoi.get(token).copied()
    }

    /// Id of `token`, or the unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.itos[id]
    }

    pub fn entries(&self) -> &[String] {
        &self.itos
    }
}

/// All vocabularies derived from a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusVocabs {
    pub words: Vocab,
    pub chars: Vocab,
    pub morph_chars: Vocab,
    pub tags: TagSet,
}

fn count<'a>(counts: &mut HashMap<String, usize>, items: impl Iterator<Item = &'a str>) {
    for item in items {
        *counts.entry(item.to_string()).or_default() += 1;
    }
}

pub fn build_vocab(sentences: &[LabeledSentence], min_count: usize) -> Result<CorpusVocabs> {
    if sentences.is_empty() {
        return Err(Error::Usage("cannot build vocabularies from an empty corpus".into()));
    }
    let mut words = HashMap::new();
    let mut chars = HashMap::new();
    let mut morph = HashMap::new();
    let tokens = sentences.iter().flat_map(|s| &s.tokens);
    for t in tokens.clone() {
        count(&mut words, std::iter::once(t.surface.as_str()));
        for c in t.surface.chars() {
            *chars.entry(c.to_string()).or_default() += 1;
        }
        for c in t.morph_or_surface().chars() {
            *morph.entry(c.to_string()).or_default() += 1;
        }
    }
    Ok(CorpusVocabs {
        words: Vocab::from_counts(&words, min_count),
        chars: Vocab::from_counts(&chars, 1),
        morph_chars: Vocab::from_counts(&morph, 1),
        tags: TagSet::from_tags(tokens.map(|t| t.tag.as_str()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conll::{parse_conll_str, Token};

    fn sent(words: &[&str]) -> LabeledSentence {
        LabeledSentence::new(words.iter().map(|w| Token::new(*w, "O")).collect())
    }

    #[test]
    fn frequency_order_and_reserved_ids() {
        let v = build_vocab(&[sent(&["a", "b", "a"])], 1).unwrap();
        assert_eq!(v.words.entries(), [PAD, UNK, "a", "b"]);
        assert_eq!(v.words.id("a"), 2);
        assert_eq!(v.words.id("zzz"), UNK_ID);
    }

    #[test]
    fn min_count_drops_hapaxes() {
        let v = build_vocab(&[sent(&["a", "b", "a"])], 2).unwrap();
        assert_eq!(v.words.len(), 3);
        assert_eq!(v.words.id("b"), UNK_ID);
    }

    #[test]
    fn tag_vocabulary_of_three_types() {
        let text = "Meliha B-PERSON\nAnkara B-LOCATION\nTCDD B-ORGANIZATION\nx I-ORGANIZATION\n. O\n";
        let v = build_vocab(&parse_conll_str(text).unwrap(), 1).unwrap();
        assert_eq!(v.tags.len(), 7);
    }

    #[test]
    fn deterministic() {
        let c = vec![sent(&["x", "y", "z", "y"]), sent(&["z", "q"])];
        assert_eq!(build_vocab(&c, 1).unwrap(), build_vocab(&c, 1).unwrap());
        assert!(build_vocab(&[], 1).is_err());
    }

    #[test]
    fn table_round_trip() {
        let v = Vocab::from_tokens(["x", "y"]).unwrap();
        assert_eq!(Vocab::from_table(v.entries().to_vec()).unwrap(), v);
    }
}
