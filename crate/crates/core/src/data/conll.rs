//! CoNLL-style corpus reading and writing.
//!
//! One token per line: `surface [morph-analysis] tag`, whitespace separated.
//! A blank line ends a sentence. Whether the morphological column is present
//! is decided by the first data row of the stream.

use std::io::{BufRead, Write};

use super::tags::{Bio, OUTSIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub morph: Option<String>,
    pub tag: String,
}

impl Token {
    pub fn new(surface: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            morph: None,
            tag: tag.into(),
        }
    }

    pub fn with_morph(mut self, morph: impl Into<String>) -> Self {
        self.morph = Some(morph.into());
        self
    }

    /// The morphological analysis, or the surface form when none is given.
    pub fn morph_or_surface(&self) -> &str {
        self.morph.as_deref().unwrap_or(&self.surface)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledSentence {
    pub tokens: Vec<Token>,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn tags(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.tag.clone()).collect()
    }

    pub fn has_morph(&self) -> bool {
        self.tokens.iter().any(|t| t.morph.is_some())
    }
}

/// Reads a whole corpus.
pub fn parse_conll<R: BufRead>(reader: R) -> Result<Vec<LabeledSentence>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    let mut columns: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                sentences.push(LabeledSentence::new(std::mem::take(&mut current)));
            }
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected at least 2 columns, found {}", fields.len()),
            });
        }
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected || expected > 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {expected} columns (surface [morph] tag), found {}", fields.len()),
            });
        }
        let tag = fields[fields.len() - 1];
        if Bio::parse(tag).is_none() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("unknown tag {tag:?}"),
            });
        }
        let mut token = Token::new(fields[0], tag);
        if expected == 3 {
            token.morph = Some(fields[1].to_string());
        }
        current.push(token);
    }
    if !current.is_empty() {
        sentences.push(LabeledSentence::new(current));
    }
    Ok(sentences)
}

pub fn parse_conll_str(text: &str) -> Result<Vec<LabeledSentence>> {
    parse_conll(text.as_bytes())
}

/// Writes sentences in the format read by [`parse_conll`]. The morph column
/// is emitted when any token of the corpus carries an analysis.
pub fn write_conll<W: Write>(mut w: W, sentences: &[LabeledSentence]) -> Result<()> {
    let with_morph = sentences.iter().any(LabeledSentence::has_morph);
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for t in &s.tokens {
            if with_morph {
                writeln!(w, "{} {} {}", t.surface, t.morph_or_surface(), t.tag)?;
            } else {
                writeln!(w, "{} {}", t.surface, t.tag)?;
            }
        }
    }
    Ok(())
}

pub fn to_conll_string(sentences: &[LabeledSentence]) -> String {
    let mut buf = Vec::new();
    write_conll(&mut buf, sentences).expect("writing to memory");
    String::from_utf8(buf).expect("utf-8 input")
}

/// Splits sentences longer than `max_len` tokens, cutting after the last `O`
/// tag that fits so entities stay whole. Falls back to a hard cut (and turns
/// a dangling `I-X` into `B-X`) when no such tag exists.
pub fn split_long_sentences(sentences: Vec<LabeledSentence>, max_len: usize) -> Vec<LabeledSentence> {
    assert!(max_len > 0);
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        let mut rest = s.tokens;
        while rest.len() > max_len {
            let cut = rest[..max_len]
                .iter()
                .rposition(|t| t.tag == OUTSIDE)
                .map(|i| i + 1)
                .unwrap_or(max_len);
            let tail = rest.split_off(cut);
            out.push(LabeledSentence::new(rest));
            rest = tail;
            if let Some(Bio::Inside(kind)) = Bio::parse(&rest[0].tag) {
                rest[0].tag = format!("B-{kind}");
            }
        }
        out.push(LabeledSentence::new(rest));
    }
    out
}
