//! Input embeddings and sequence encoders.
//!
//! Each token's input vector `x_e` concatenates up to four sources: a word
//! embedding plus BiLSTM summaries of its characters, of its morphological
//! analysis (read character by character), and of its subword pieces. The
//! sentence is then encoded either by a BiLSTM or by a small transformer
//! over subword pieces.

mod compose;
mod embedding;
mod lstm;
mod transformer;

pub use compose::{
    char_compose, chars_of, morph_compose, subword_compose, ComposerConfig, InputComposer, PreparedComposer, UnitComposer,
};
pub use embedding::{EmbeddingTable, PretrainedVectors, EMBEDDING_INIT};
pub use lstm::{bilstm_encode, lstm_step, BiLstm, LstmCell, PreparedBiLstm, PreparedLstm, FORGET_BIAS};
pub use transformer::{AttentionMaps, ToyTransformer, ToyTransformerConfig, TransformerLayer, TransformerOutput};
