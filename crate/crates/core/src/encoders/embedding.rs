use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::data::{Vocab, PAD_ID, UNK_ID};
use crate::error::{Error, Result};

/// Half-width of the uniform range used for randomly initialised embeddings.
pub const EMBEDDING_INIT: f64 = 0.1;

/// Vocabulary plus a trainable `V × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    pub matrix: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    /// Random init, uniform in `[−0.1, 0.1]`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, vocab: Vocab, dim: usize, rng: &mut R) -> Self {
        let matrix = store.add(name, Tensor::uniform(vec![vocab.len(), dim], EMBEDDING_INIT, rng));
        Self { vocab, matrix, dim }
    }

    pub fn pad_id(&self) -> usize {
        PAD_ID
    }

    pub fn unk_id(&self) -> usize {
        UNK_ID
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t.as_ref())).collect()
    }

    /// `n × d` rows for `tokens`; unknown tokens use the unk row.
    pub fn embed<S: AsRef<str>>(&self, g: &mut Graph, store: &ParamStore, tokens: &[S]) -> Result<NodeId> {
        g.lookup_rows(store, self.matrix, &self.ids(tokens))
    }

    /// Copies vectors for vocabulary hits; misses keep their random init.
    /// Returns the hit rate over non-reserved entries, in `[0, 1]`.
    pub fn apply_pretrained(&self, store: &mut ParamStore, vectors: &PretrainedVectors) -> Result<f64> {
        if vectors.dim != self.dim {
            return Err(Error::Config(format!(
                "pretrained vectors have dimension {} but the table expects {}",
                vectors.dim, self.dim
            )));
        }
        let table = store.get_mut(self.matrix).values_mut();
        let mut hits = 0;
        let entries = &self.vocab.entries()[2..];
        for (i, token) in entries.iter().enumerate() {
            if let Some(v) = vectors.vectors.get(token) {
                let row = i + 2;
                table[row * self.dim..(row + 1) * self.dim].copy_from_slice(v);
                hits += 1;
            }
        }
        Ok(if entries.is_empty() {
            0.0
        } else {
            hits as f64 / entries.len() as f64
        })
    }
}

/// Word vectors in word2vec text format.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    /// Reads `token v1 … vd` lines, with an optional leading `V d` header.
    /// The first vector fixes `d` when there is no header.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut out = Self::default();
        let mut expected_rows = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            if i == 0 && fields.len() == 2 {
                if let (Ok(v), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    expected_rows = Some(v);
                    out.dim = d;
                    continue;
                }
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| err(format!("bad vector component: {e}")))?;
            if out.dim == 0 {
                out.dim = values.len();
            }
            if values.len() != out.dim || values.is_empty() {
                return Err(err(format!("expected {} components, found {}", out.dim, values.len())));
            }
            out.vectors.insert(fields[0].to_string(), values);
        }
        if let Some(v) = expected_rows {
            if v != out.vectors.len() {
                log::warn!("embedding header announces {v} vectors, file has {}", out.vectors.len());
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
