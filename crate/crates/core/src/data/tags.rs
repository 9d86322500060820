use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// A parsed BIO2 tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bio<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl<'a> Bio<'a> {
    pub fn parse(tag: &'a str) -> Option<Self> {
        if tag == OUTSIDE {
            return Some(Bio::Outside);
        }
        let (prefix, kind) = tag.split_once('-')?;
        if kind.is_empty() || kind.chars().any(char::is_whitespace) {
            return None;
        }
        match prefix {
            "B" => Some(Bio::Begin(kind)),
            "I" => Some(Bio::Inside(kind)),
            _ => None,
        }
    }

    pub fn kind(self) -> Option<&'a str> {
        match self {
            Bio::Outside => None,
            Bio::Begin(k) | Bio::Inside(k) => Some(k),
        }
    }
}

/// Whether `next` may follow `prev` (`None` = sentence start) in valid BIO2.
pub fn is_allowed_transition(prev: Option<&str>, next: &str) -> bool {
    match Bio::parse(next) {
        Some(Bio::Inside(kind)) => matches!(
            prev.and_then(Bio::parse),
            Some(Bio::Begin(k)) | Some(Bio::Inside(k)) if k == kind
        ),
        Some(_) => true,
        None => false,
    }
}

/// Ordered set of BIO2 tags: `O` first, then `B-X`, `I-X` per entity type in
/// lexical type order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn from_types<I, S>(types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let types: BTreeSet<String> = types.into_iter().map(|s| s.as_ref().to_string()).collect();
        let mut tags = vec![OUTSIDE.to_string()];
        for t in &types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        Self::from_ordered(tags).expect("generated tag set is well-formed")
    }

    /// Entity types are collected from every tag string.
    pub fn from_tags<I, S>(tags: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut types = BTreeSet::new();
        for t in tags {
            let t = t.as_ref();
            let bio = Bio::parse(t).ok_or_else(|| Error::Config(format!("malformed BIO2 tag {t:?}")))?;
            if let Some(k) = bio.kind() {
                types.insert(k.to_string());
            }
        }
        Ok(Self::from_types(types))
    }

    /// Tag list in a fixed order. Must contain `O`, and every `I-X` needs `B-X`.
    pub fn from_ordered(tags: Vec<String>) -> Result<Self> {
        if !tags.iter().any(|t| t == OUTSIDE) {
            return Err(Error::Config("tag set lacks O".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            let bio = Bio::parse(t).ok_or_else(|| Error::Config(format!("malformed BIO2 tag {t:?}")))?;
            if let Bio::Inside(k) = bio {
                if !tags.iter().any(|b| Bio::parse(b) == Some(Bio::Begin(k))) {
                    return Err(Error::Config(format!("tag {t} has no B-{k}")));
                }
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate tag {t}")));
            }
        }
        Ok(Self { tags, index })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn outside_id(&self) -> usize {
        self.index[OUTSIDE]
    }

    pub fn encode(&self, tags: &[String]) -> Result<Vec<usize>> {
        tags.iter()
            .map(|t| self.id(t).ok_or_else(|| Error::Usage(format!("tag {t:?} not in tag set"))))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tags[i].clone()).collect()
    }

    pub fn entity_types(&self) -> Vec<&str> {
        self.tags
            .iter()
            .filter_map(|t| match Bio::parse(t) {
                Some(Bio::Begin(k)) => Some(k),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for TagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tags.join(" "))
    }
}
