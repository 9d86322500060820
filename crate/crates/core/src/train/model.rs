use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::crf::{CrfParams, LinearHead};
use crate::data::{CorpusVocabs, LabeledSentence, TagSet, Vocab, OUTSIDE};
use crate::encoders::{BiLstm, InputComposer, ToyTransformer};
use crate::error::{Error, Result};
use crate::tokenize::{align_labels, project_predictions, AlignedSequence, UnigramVocab};

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    BiLstm { composer: InputComposer, lstm: BiLstm },
    Transformer { tokenizer: UnigramVocab, net: ToyTransformer },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Crf(CrfParams),
    Linear(LinearHead),
}

/// One training sentence with tags encoded against the model's tag set.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub words: Vec<String>,
    pub morphs: Vec<Option<String>>,
    pub tags: Vec<usize>,
}

impl Example {
    pub fn from_sentence(s: &LabeledSentence, tags: &TagSet) -> Result<Self> {
        Ok(Self {
            words: s.words(),
            morphs: s.tokens.iter().map(|t| t.morph.clone()).collect(),
            tags: tags.encode(&s.tags())?,
        })
    }

    fn morph_refs(&self) -> Vec<Option<&str>> {
        self.morphs.iter().map(|m| m.as_deref()).collect()
    }
}

/// Encoder states for one sentence. For transformers the states are per
/// kept piece and `aligned` maps them back to words.
struct States {
    hs: Vec<NodeId>,
    aligned: Option<AlignedSequence<()>>,
}

impl States {
    /// States of word-initial pieces (or all states for word-level encoders).
    fn word_states(&self) -> Vec<NodeId> {
        match &self.aligned {
            None => self.hs.clone(),
            Some(a) => a.initial_positions().into_iter().filter(|&p| p < self.hs.len()).map(|p| self.hs[p]).collect(),
        }
    }
}

/// Encoder plus output head.
#[derive(Debug, Clone, PartialEq)]
pub struct NerModel {
    pub tags: TagSet,
    pub encoder: Encoder,
    pub head: Head,
    pub dropout_p: f64,
}

impl NerModel {
    /// Registers all parameters in `store`. Parameter names depend only on
    /// the config, vocabularies and tokenizer.
    pub fn build<R: Rng + ?Sized>(
        cfg: &TrainConfig,
        vocabs: &CorpusVocabs,
        tokenizer: Option<UnigramVocab>,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (encoder, hidden) = if cfg.model_kind.is_transformer() {
            let tokenizer = tokenizer.ok_or_else(|| Error::Config("transformer models need a tokenizer".into()))?;
            let vocab = Vocab::from_tokens(tokenizer.pieces().iter().map(|(p, _)| p.clone()))?;
            let mut tcfg = cfg.transformer.clone();
            tcfg.dropout_p = cfg.dropout_p;
            let net = ToyTransformer::new(store, "transformer", tcfg, vocab, rng)?;
            let h = net.hidden_dim();
            (Encoder::Transformer { tokenizer, net }, h)
        } else {
            let composer = InputComposer::new(store, cfg.composer.clone(), vocabs, tokenizer, rng)?;
            let lstm = BiLstm::new(store, "encoder", composer.output_dim(), cfg.encoder_hidden, rng);
            let h = lstm.output_dim();
            (Encoder::BiLstm { composer, lstm }, h)
        };
        let tags = vocabs.tags.clone();
        let head = if cfg.model_kind.uses_crf() {
            let mut crf = CrfParams::new(store, "crf", tags.len(), hidden, rng);
            if cfg.mask_illegal {
                crf.mask_illegal(&tags);
            }
            Head::Crf(crf)
        } else {
            Head::Linear(LinearHead::new(store, "linear", tags.len(), hidden, rng))
        };
        Ok(Self {
            tags,
            encoder,
            head,
            dropout_p: cfg.dropout_p,
        })
    }

    pub fn word_table(&self) -> Option<&crate::encoders::EmbeddingTable> {
        match &self.encoder {
            Encoder::BiLstm { composer, .. } => composer.word.as_ref(),
            Encoder::Transformer { .. } => None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn states<S: AsRef<str>, R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        words: &[S],
        morphs: &[Option<&str>],
        force_unk: &[bool],
        training: bool,
        rng: &mut R,
    ) -> Result<States> {
        match &self.encoder {
            Encoder::BiLstm { composer, lstm } => {
                let xs = composer.compose_sentence_with_unk(g, store, words, morphs, force_unk)?;
                let xs = xs
                    .into_iter()
                    .map(|x| g.dropout(x, self.dropout_p, training, rng))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = g.stack(&xs)?;
                let hs = lstm.prepare(g, store)?.encode(g, stacked)?;
                Ok(States { hs, aligned: None })
            }
            Encoder::Transformer { tokenizer, net } => {
                let pieces = tokenizer.segment_words(words);
                let aligned = align_labels(words, &vec![(); words.len()], &pieces)?;
                let ids = net.pieces.ids(&aligned.pieces);
                let out = net.encode(g, store, &ids, training, rng)?;
                Ok(States {
                    hs: out.hidden,
                    aligned: Some(aligned),
                })
            }
        }
    }

    /// Sentence loss: CRF negative log-likelihood or summed token
    /// cross-entropy, plus `(l2/2)·‖Θ‖²` when `l2 > 0`.
    pub fn loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ex: &Example,
        force_unk: &[bool],
        l2: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        if ex.words.is_empty() || ex.words.len() != ex.tags.len() {
            return Err(Error::Usage(format!("{} words with {} tags", ex.words.len(), ex.tags.len())));
        }
        let theta: Vec<ParamId> = if l2 > 0.0 { store.ids().collect() } else { Vec::new() };
        let st = self.states(g, store, &ex.words, &ex.morph_refs(), force_unk, training, rng)?;
        match &self.head {
            Head::Crf(crf) => {
                let hs = st.word_states();
                let tags = ex.tags[..hs.len()].to_vec();
                crf.nll_loss(g, store, &[(hs, tags)], l2, &theta)
            }
            Head::Linear(lin) => {
                let labels: Vec<Option<usize>> = match &st.aligned {
                    None => ex.tags.iter().map(|&t| Some(t)).collect(),
                    Some(a) => (0..st.hs.len()).map(|p| a.is_word_initial[p].then(|| ex.tags[a.word_index[p]])).collect(),
                };
                let ce = lin.cross_entropy(g, store, &st.hs, &labels)?;
                if l2 > 0.0 {
                    let reg = g.squared_norm(store, &theta, l2 / 2.0);
                    g.add(ce, reg)
                } else {
                    Ok(ce)
                }
            }
        }
    }

    /// Tag ids for one sentence. Words beyond a truncated transformer input
    /// are tagged `O`.
    pub fn predict_ids<S: AsRef<str>>(&self, store: &ParamStore, words: &[S], morphs: &[Option<&str>]) -> Result<Vec<usize>> {
        if words.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = self.states(&mut g, store, words, morphs, &[], false, &mut rng)?;
        let outside = self.tags.id(OUTSIDE).unwrap_or(0);
        let mut out = match (&self.head, &st.aligned) {
            (Head::Crf(crf), _) => crf.viterbi_decode(&mut g, store, &st.word_states())?.0,
            (Head::Linear(lin), None) => lin.predict(&mut g, store, &st.hs)?,
            (Head::Linear(lin), Some(a)) => {
                let mut piece_tags = lin.predict(&mut g, store, &st.hs)?;
                piece_tags.resize(a.len(), outside);
                project_predictions(a, &piece_tags)?
            }
        };
        out.resize(words.len(), outside);
        Ok(out)
    }

    pub fn predict<S: AsRef<str>>(&self, store: &ParamStore, words: &[S], morphs: &[Option<&str>]) -> Result<Vec<String>> {
        Ok(self.tags.decode(&self.predict_ids(store, words, morphs)?))
    }
}
