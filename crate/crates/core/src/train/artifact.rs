use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::NerModel;
use crate::autodiff::{ParamStore, Tensor};
use crate::data::{CorpusVocabs, LabeledSentence, TagSet, Vocab};
use crate::error::{Error, Result};
use crate::evalscore::{score, EvalReport};
use crate::tokenize::UnigramVocab;

pub const MAGIC: &[u8; 8] = b"SEQTAG\0M";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model with everything needed to rebuild it.
///
/// Binary layout, little-endian: magic, `u32` version, `u32` section count,
/// then per section a `u32`-prefixed UTF-8 name and a `u64`-prefixed payload.
/// Text sections: `config`, `tags`, `vocab.words`, `vocab.chars`,
/// `vocab.morph_chars` and optionally `tokenizer`. Each parameter is a
/// `param.<name>` section holding `u32` rank, `u64` dims and `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub config: TrainConfig,
    pub vocabs: CorpusVocabs,
    pub tokenizer: Option<UnigramVocab>,
    pub model: NerModel,
    pub store: ParamStore,
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::Artifact(format!("{msg} (format version {FORMAT_VERSION})"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }
}

fn lines(text: &str) -> Vec<String> {
    text.lines().map(String::from).collect()
}

fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * (t.shape().len() + t.len()));
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for v in t.values() {
        out.extend(v.to_le_bytes());
    }
    out
}

fn decode_tensor(name: &str, bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    let rank = r.u32()? as usize;
    let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    if bytes.len() - r.pos != 8 * n {
        return Err(corrupt(format!("tensor {name} payload does not match shape {shape:?}")));
    }
    let values = r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(shape, values).map_err(|e| corrupt(format!("tensor {name}: {e}")))
}

impl Artifact {
    /// Rebuilds the model for `config` and takes parameter values from
    /// `values`, which must hold exactly the expected names and shapes.
    pub fn assemble(
        config: TrainConfig,
        vocabs: CorpusVocabs,
        tokenizer: Option<UnigramVocab>,
        values: &ParamStore,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = NerModel::build(&config, &vocabs, tokenizer.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
        if store.len() != values.len() {
            return Err(corrupt(format!("expected {} parameters, found {}", store.len(), values.len())));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let src = values.find(&name).ok_or_else(|| corrupt(format!("missing parameter {name}")))?;
            let src = values.get(src);
            let dst = store.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(corrupt(format!("parameter {name} has shape {:?}, expected {:?}", src.shape(), dst.shape())));
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(Self {
            config,
            vocabs,
            tokenizer,
            model,
            store,
        })
    }

    pub fn tag<S: AsRef<str>>(&self, words: &[S], morphs: &[Option<&str>]) -> Result<Vec<String>> {
        self.model.predict(&self.store, words, morphs)
    }

    /// Tags a labelled corpus using its surface forms and analyses.
    pub fn tag_corpus(&self, sentences: &[LabeledSentence]) -> Result<Vec<Vec<String>>> {
        sentences
            .iter()
            .map(|s| {
                let morphs: Vec<Option<&str>> = s.tokens.iter().map(|t| t.morph.as_deref()).collect();
                self.tag(&s.words(), &morphs)
            })
            .collect()
    }

    pub fn evaluate(&self, sentences: &[LabeledSentence]) -> Result<EvalReport> {
        let pred = self.tag_corpus(sentences)?;
        let gold: Vec<Vec<String>> = sentences.iter().map(LabeledSentence::tags).collect();
        score(&gold, &pred)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(String, Vec<u8>)> = vec![
            ("config".into(), self.config.to_text().into_bytes()),
            ("tags".into(), self.vocabs.tags.tags().join("\n").into_bytes()),
            ("vocab.words".into(), self.vocabs.words.entries().join("\n").into_bytes()),
            ("vocab.chars".into(), self.vocabs.chars.entries().join("\n").into_bytes()),
            ("vocab.morph_chars".into(), self.vocabs.morph_chars.entries().join("\n").into_bytes()),
        ];
        if let Some(tok) = &self.tokenizer {
            let mut text = Vec::new();
            tok.write(&mut text).expect("writing to memory");
            sections.push(("tokenizer".into(), text));
        }
        for (_, name, t) in self.store.iter() {
            sections.push((format!("param.{name}"), encode_tensor(t)));
        }
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((sections.len() as u32).to_le_bytes());
        for (name, payload) in sections {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((payload.len() as u64).to_le_bytes());
            out.extend(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < MAGIC.len() || r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Artifact("not a seqtag model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "artifact has format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let count = r.u32()?;
        let mut sections = BTreeMap::new();
        let mut params = Vec::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| corrupt("section name is not UTF-8"))?.to_string();
            let len = r.len()?;
            let payload = r.take(len)?;
            if let Some(p) = name.strip_prefix("param.") {
                params.push((p.to_string(), payload));
            } else if sections.insert(name.clone(), payload).is_some() {
                return Err(corrupt(format!("duplicate section {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after last section"));
        }
        let text = |name: &str| -> Result<&str> {
            let raw = sections.get(name).ok_or_else(|| corrupt(format!("missing section {name}")))?;
            std::str::from_utf8(raw).map_err(|_| corrupt(format!("section {name} is not UTF-8")))
        };
        let config = TrainConfig::from_text(text("config")?).map_err(|e| corrupt(format!("config: {e}")))?;
        let table = |name: &str| -> Result<Vocab> {
            Vocab::from_table(lines(text(name)?)).map_err(|e| corrupt(format!("{name}: {e}")))
        };
        let vocabs = CorpusVocabs {
            words: table("vocab.words")?,
            chars: table("vocab.chars")?,
            morph_chars: table("vocab.morph_chars")?,
            tags: TagSet::from_ordered(lines(text("tags")?)).map_err(|e| corrupt(format!("tags: {e}")))?,
        };
        let tokenizer = if sections.contains_key("tokenizer") {
            Some(UnigramVocab::read(text("tokenizer")?.as_bytes()).map_err(|e| corrupt(format!("tokenizer: {e}")))?)
        } else {
            None
        };
        let mut values = ParamStore::new();
        for (name, payload) in params {
            if values.find(&name).is_some() {
                return Err(corrupt(format!("duplicate parameter {name}")));
            }
            values.add(name.clone(), decode_tensor(&name, payload)?);
        }
        Self::assemble(config, vocabs, tokenizer, &values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
