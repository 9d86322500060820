use super::conll::LabeledSentence;
use super::tags::Bio;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio2Mode {
    /// Reject orphan or type-switching `I-` tags.
    Strict,
    /// Rewrite orphan or type-switching `I-X` to `B-X`.
    Repair,
}

/// Repairs a tag sequence in place; returns how many tags changed.
pub fn repair_tags(tags: &mut [String]) -> usize {
    let mut changed = 0;
    let mut prev: Option<String> = None;
    for tag in tags.iter_mut() {
        if let Some(Bio::Inside(kind)) = Bio::parse(tag) {
            let continues = matches!(
                prev.as_deref().and_then(Bio::parse),
                Some(Bio::Begin(k)) | Some(Bio::Inside(k)) if k == kind
            );
            if !continues {
                *tag = format!("B-{kind}");
                changed += 1;
            }
        }
        prev = Some(tag.clone());
    }
    changed
}

/// Index of the first tag violating BIO2, if any.
pub fn first_violation(tags: &[String]) -> Option<usize> {
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        if !super::tags::is_allowed_transition(prev, tag) {
            return Some(i);
        }
        prev = Some(tag);
    }
    None
}

pub fn validate_bio2(mut sentence: LabeledSentence, mode: Bio2Mode) -> Result<LabeledSentence> {
    let mut tags = sentence.tags();
    match mode {
        Bio2Mode::Strict => {
            if let Some(index) = first_violation(&tags) {
                return Err(Error::Validation {
                    index,
                    msg: format!("{} cannot follow {}", tags[index], if index == 0 { "sentence start" } else { &tags[index - 1] }),
                });
            }
        }
        Bio2Mode::Repair => {
            repair_tags(&mut tags);
            for (t, tag) in sentence.tokens.iter_mut().zip(tags) {
                t.tag = tag;
            }
        }
    }
    Ok(sentence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::conll::Token;
    use proptest::prelude::*;

    fn sentence(tags: &[&str]) -> LabeledSentence {
        LabeledSentence::new(tags.iter().enumerate().map(|(i, t)| Token::new(format!("w{i}"), *t)).collect())
    }

    #[test]
    fn strict_rejects_orphan() {
        match validate_bio2(sentence(&["O", "I-PERSON"]), Bio2Mode::Strict) {
            Err(Error::Validation { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repair_rewrites() {
        let s = validate_bio2(sentence(&["O", "I-PERSON"]), Bio2Mode::Repair).unwrap();
        assert_eq!(s.tags(), ["O", "B-PERSON"]);
        let s = validate_bio2(sentence(&["B-LOC", "I-ORG"]), Bio2Mode::Repair).unwrap();
        assert_eq!(s.tags(), ["B-LOC", "B-ORG"]);
        let s = validate_bio2(sentence(&["B-LOC", "I-LOC", "I-LOC"]), Bio2Mode::Repair).unwrap();
        assert_eq!(s.tags(), ["B-LOC", "I-LOC", "I-LOC"]);
    }

    proptest! {
        #[test]
        fn repaired_sequences_pass_strict(raw in proptest::collection::vec(0usize..5, 1..12)) {
            const POOL: [&str; 5] = ["O", "B-A", "I-A", "B-B", "I-B"];
            let tags: Vec<&str> = raw.iter().map(|&i| POOL[i]).collect();
            let repaired = validate_bio2(sentence(&tags), Bio2Mode::Repair).unwrap();
            prop_assert!(validate_bio2(repaired, Bio2Mode::Strict).is_ok());
        }
    }
}
