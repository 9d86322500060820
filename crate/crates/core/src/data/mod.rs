//! Corpus ingestion: CoNLL/BIO2 parsing, validation, splitting and
//! vocabulary construction.

mod bio2;
mod conll;
mod split;
mod tags;
mod vocab;

pub use bio2::{first_violation, repair_tags, validate_bio2, Bio2Mode};
pub use conll::{
    parse_conll, parse_conll_str, split_long_sentences, to_conll_string, write_conll, LabeledSentence, Token,
};
pub use split::{split_corpus, split_with_test, CorpusSplit};
pub use tags::{is_allowed_transition, Bio, TagSet, OUTSIDE};
pub use vocab::{build_vocab, CorpusVocabs, Vocab, PAD, PAD_ID, UNK, UNK_ID};

/// Sentences longer than this are split before training.
pub const MAX_SENTENCE_TOKENS: usize = 512;
