use rand::Rng;

use super::embedding::EmbeddingTable;
use super::lstm::{BiLstm, PreparedBiLstm};
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::data::{CorpusVocabs, Vocab};
use crate::error::{Error, Result};
use crate::tokenize::UnigramVocab;

/// Embeds a sequence of units (characters or pieces) and summarises it with
/// the final states of a BiLSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitComposer {
    pub table: EmbeddingTable,
    pub lstm: BiLstm,
}

impl UnitComposer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, vocab: Vocab, dim: usize, hidden: usize, rng: &mut R) -> Self {
        let table = EmbeddingTable::new(store, &format!("{prefix}.embedding"), vocab, dim, rng);
        let lstm = BiLstm::new(store, &format!("{prefix}.lstm"), dim, hidden, rng);
        Self { table, lstm }
    }

    pub fn output_dim(&self) -> usize {
        self.lstm.output_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.table.matrix];
        p.extend(self.lstm.params());
        p
    }

    pub fn prepare(&self, g: &mut Graph, store: &ParamStore) -> Result<PreparedBiLstm> {
        self.lstm.prepare(g, store)
    }

    pub fn compose<S: AsRef<str>>(&self, g: &mut Graph, store: &ParamStore, lstm: &PreparedBiLstm, units: &[S]) -> Result<NodeId> {
        if units.is_empty() {
            return Err(Error::Usage("cannot compose an empty unit sequence".into()));
        }
        let xs = self.table.embed(g, store, units)?;
        lstm.final_states(g, xs)
    }
}

/// Characters of `s` as one-character strings.
pub fn chars_of(s: &str) -> Vec<String> {
    s.chars().map(String::from).collect()
}

pub fn char_compose(g: &mut Graph, store: &ParamStore, composer: &UnitComposer, word: &str) -> Result<NodeId> {
    let lstm = composer.prepare(g, store)?;
    composer.compose(g, store, &lstm, &chars_of(word))
}

/// Character-level composition of a full morphological analysis string.
pub fn morph_compose(g: &mut Graph, store: &ParamStore, composer: &UnitComposer, analysis: &str) -> Result<NodeId> {
    char_compose(g, store, composer, analysis)
}

pub fn subword_compose<S: AsRef<str>>(g: &mut Graph, store: &ParamStore, composer: &UnitComposer, pieces: &[S]) -> Result<NodeId> {
    let lstm = composer.prepare(g, store)?;
    composer.compose(g, store, &lstm, pieces)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposerConfig {
    pub use_word: bool,
    pub use_char: bool,
    pub use_morph: bool,
    pub use_subword: bool,
    pub word_dim: usize,
    pub subword_dim: usize,
    pub char_dim: usize,
    pub morph_dim: usize,
    pub char_hidden: usize,
    pub morph_hidden: usize,
    pub subword_hidden: usize,
}

impl Default for ComposerConfig {
    fn default() -> Self {
        Self {
            use_word: true,
            use_char: true,
            use_morph: false,
            use_subword: false,
            word_dim: 300,
            subword_dim: 300,
            char_dim: 200,
            morph_dim: 200,
            char_hidden: 100,
            morph_hidden: 100,
            subword_hidden: 100,
        }
    }
}

impl ComposerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_word || self.use_char || self.use_morph || self.use_subword) {
            return Err(Error::Config("at least one embedding source must be enabled".into()));
        }
        let dims = [
            (self.use_word, self.word_dim, "word_dim"),
            (self.use_char, self.char_dim, "char_dim"),
            (self.use_char, self.char_hidden, "char_hidden"),
            (self.use_morph, self.morph_dim, "morph_dim"),
            (self.use_morph, self.morph_hidden, "morph_hidden"),
            (self.use_subword, self.subword_dim, "subword_dim"),
            (self.use_subword, self.subword_hidden, "subword_hidden"),
        ];
        for (on, d, name) in dims {
            if on && d == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Width of the composed input vector.
    pub fn output_dim(&self) -> usize {
        let mut d = 0;
        if self.use_word {
            d += self.word_dim;
        }
        if self.use_char {
            d += 2 * self.char_hidden;
        }
        if self.use_morph {
            d += 2 * self.morph_hidden;
        }
        if self.use_subword {
            d += 2 * self.subword_hidden;
        }
        d
    }
}

/// Builds `x_e` by concatenating the enabled sources in the order word,
/// char, morph, subword.
#[derive(Debug, Clone, PartialEq)]
pub struct InputComposer {
    pub cfg: ComposerConfig,
    pub word: Option<EmbeddingTable>,
    pub chars: Option<UnitComposer>,
    pub morph: Option<UnitComposer>,
    pub subword: Option<UnitComposer>,
    pub tokenizer: Option<UnigramVocab>,
}

/// Per-graph prepared composer weights.
#[derive(Debug, Clone, Copy)]
pub struct PreparedComposer {
    chars: Option<PreparedBiLstm>,
    morph: Option<PreparedBiLstm>,
    subword: Option<PreparedBiLstm>,
}

impl InputComposer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: ComposerConfig,
        vocabs: &CorpusVocabs,
        tokenizer: Option<UnigramVocab>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.use_subword && tokenizer.is_none() {
            return Err(Error::Config("subword embeddings need a trained tokenizer".into()));
        }
        let word = cfg
            .use_word
            .then(|| EmbeddingTable::new(store, "input.word", vocabs.words.clone(), cfg.word_dim, rng));
        let chars = cfg.use_char.then(|| {
            UnitComposer::new(store, "input.char", vocabs.chars.clone(), cfg.char_dim, cfg.char_hidden, rng)
        });
        let morph = cfg.use_morph.then(|| {
            UnitComposer::new(store, "input.morph", vocabs.morph_chars.clone(), cfg.morph_dim, cfg.morph_hidden, rng)
        });
        let subword = if let (true, Some(tok)) = (cfg.use_subword, &tokenizer) {
            let vocab = Vocab::from_tokens(tok.pieces().iter().map(|(p, _)| p.clone()))?;
            Some(UnitComposer::new(store, "input.subword", vocab, cfg.subword_dim, cfg.subword_hidden, rng))
        } else {
            None
        };
        Ok(Self {
            cfg,
            word,
            chars,
            morph,
            subword,
            tokenizer,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.output_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        if let Some(w) = &self.word {
            p.push(w.matrix);
        }
        for c in [&self.chars, &self.morph, &self.subword].into_iter().flatten() {
            p.extend(c.params());
        }
        p
    }

    pub fn prepare(&self, g: &mut Graph, store: &ParamStore) -> Result<PreparedComposer> {
        let mut prep = |c: &Option<UnitComposer>| c.as_ref().map(|c| c.prepare(g, store)).transpose();
        Ok(PreparedComposer {
            chars: prep(&self.chars)?,
            morph: prep(&self.morph)?,
            subword: prep(&self.subword)?,
        })
    }

    /// `x_e` for one token. A missing analysis falls back to the surface form.
    pub fn compose_input(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prep: &PreparedComposer,
        surface: &str,
        morph: Option<&str>,
    ) -> Result<NodeId> {
        self.compose_token(g, store, prep, surface, morph, false)
    }

    fn compose_token(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prep: &PreparedComposer,
        surface: &str,
        morph: Option<&str>,
        force_unk: bool,
    ) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(4);
        if let Some(w) = &self.word {
            let id = if force_unk { w.unk_id() } else { w.vocab.id(surface) };
            parts.push(g.lookup(store, w.matrix, id)?);
        }
        if let (Some(c), Some(l)) = (&self.chars, &prep.chars) {
            parts.push(c.compose(g, store, l, &chars_of(surface))?);
        }
        if let (Some(c), Some(l)) = (&self.morph, &prep.morph) {
            parts.push(c.compose(g, store, l, &chars_of(morph.unwrap_or(surface)))?);
        }
        if let (Some(c), Some(l), Some(tok)) = (&self.subword, &prep.subword, &self.tokenizer) {
            let pieces = tok.segment_words(&[surface]).pop().expect("one word");
            parts.push(c.compose(g, store, l, &pieces)?);
        }
        g.concat(&parts, 0)
    }

    pub fn compose_sentence<S: AsRef<str>>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        words: &[S],
        morphs: &[Option<&str>],
    ) -> Result<Vec<NodeId>> {
        self.compose_sentence_with_unk(g, store, words, morphs, &[])
    }

    /// Like [`Self::compose_sentence`], but words flagged in `force_unk` use
    /// the unk word vector. Their character and morph inputs are unchanged.
    pub fn compose_sentence_with_unk<S: AsRef<str>>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        words: &[S],
        morphs: &[Option<&str>],
        force_unk: &[bool],
    ) -> Result<Vec<NodeId>> {
        if !morphs.is_empty() && morphs.len() != words.len() {
            return Err(Error::Usage(format!("{} words but {} analyses", words.len(), morphs.len())));
        }
        let prep = self.prepare(g, store)?;
        words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let unk = force_unk.get(i).copied().unwrap_or(false);
                self.compose_token(g, store, &prep, w.as_ref(), morphs.get(i).copied().flatten(), unk)
            })
            .collect()
    }
}
