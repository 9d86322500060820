use std::fmt;
use std::str::FromStr;

use crate::encoders::{ComposerConfig, ToyTransformerConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    BiLstmCrf,
    BiLstmLinear,
    TransformerCrf,
    TransformerLinear,
}

impl ModelKind {
    pub fn uses_crf(self) -> bool {
        matches!(self, ModelKind::BiLstmCrf | ModelKind::TransformerCrf)
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, ModelKind::TransformerCrf | ModelKind::TransformerLinear)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bilstm-crf" => ModelKind::BiLstmCrf,
            "bilstm-linear" => ModelKind::BiLstmLinear,
            "transformer-crf" => ModelKind::TransformerCrf,
            "transformer-linear" => ModelKind::TransformerLinear,
            _ => return Err(Error::Config(format!("unknown model_kind {s:?}"))),
        })
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::BiLstmCrf => "bilstm-crf",
            ModelKind::BiLstmLinear => "bilstm-linear",
            ModelKind::TransformerCrf => "transformer-crf",
            ModelKind::TransformerLinear => "transformer-linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    AdamDecoupledDecay,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd-momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adam-decoupled-decay" | "adamw" => Ok(OptimizerKind::AdamDecoupledDecay),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::SgdMomentum => "sgd-momentum",
            OptimizerKind::AdamDecoupledDecay => "adam-decoupled-decay",
        })
    }
}

/// Every training hyperparameter. Serialises to flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub composer: ComposerConfig,
    pub transformer: ToyTransformerConfig,
    /// Hidden size of each direction of the sentence-level BiLSTM.
    pub encoder_hidden: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    /// Apply the per-epoch decay in SGD mode.
    pub lr_decay: bool,
    pub clip_norm: f64,
    pub dropout_p: f64,
    pub epochs: usize,
    pub lambda_l2: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub mask_illegal: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Probability of replacing a training singleton by the unk word vector.
    pub unk_replace: f64,
    pub min_count: usize,
    pub tokenizer_vocab_size: usize,
    pub valid_fraction: f64,
    /// word2vec text file for the word table; empty means random init.
    pub pretrained: String,
}

impl TrainConfig {
    /// Defaults for a model family: SGD with momentum for BiLSTMs, Adam with
    /// decoupled weight decay for transformers.
    pub fn for_kind(model_kind: ModelKind) -> Self {
        let base = Self {
            model_kind,
            composer: ComposerConfig::default(),
            transformer: ToyTransformerConfig::default(),
            encoder_hidden: 256,
            optimizer: OptimizerKind::SgdMomentum,
            lr: 0.05,
            momentum: 0.9,
            lr_decay: true,
            clip_norm: 0.5,
            dropout_p: 0.5,
            epochs: 30,
            lambda_l2: 1e-8,
            seed: 1,
            batch_size: 1,
            mask_illegal: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            unk_replace: 0.5,
            min_count: 1,
            tokenizer_vocab_size: 1000,
            valid_fraction: 0.2,
            pretrained: String::new(),
        };
        let mut cfg = if model_kind.is_transformer() {
            Self {
                optimizer: OptimizerKind::AdamDecoupledDecay,
                lr: 5e-5,
                lr_decay: false,
                clip_norm: 1.0,
                dropout_p: 0.1,
                batch_size: 32,
                ..base
            }
        } else {
            base
        };
        cfg.transformer.dropout_p = cfg.dropout_p;
        cfg
    }

    /// Applies `pairs` in order on top of the defaults of the last
    /// `model_kind` mentioned (BiLSTM-CRF when absent).
    pub fn from_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> Result<Self> {
        let kind = pairs
            .iter()
            .rev()
            .find(|(k, _)| k.as_ref() == "model_kind")
            .map(|(_, v)| v.as_ref().parse())
            .transpose()?
            .unwrap_or(ModelKind::BiLstmCrf);
        let mut cfg = Self::for_kind(kind);
        for (k, v) in pairs {
            cfg.set(k.as_ref(), v.as_ref())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config file text.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_kv(text)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let c = &mut self.composer;
        let t = &mut self.transformer;
        match key {
            "model_kind" => self.model_kind = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "use_word" => c.use_word = parse(key, value)?,
            "use_char" => c.use_char = parse(key, value)?,
            "use_morph" => c.use_morph = parse(key, value)?,
            "use_subword" => c.use_subword = parse(key, value)?,
            "word_dim" => c.word_dim = parse(key, value)?,
            "char_dim" => c.char_dim = parse(key, value)?,
            "morph_dim" => c.morph_dim = parse(key, value)?,
            "subword_dim" => c.subword_dim = parse(key, value)?,
            "char_hidden" => c.char_hidden = parse(key, value)?,
            "morph_hidden" => c.morph_hidden = parse(key, value)?,
            "subword_hidden" => c.subword_hidden = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, value)?,
            "num_layers" => t.num_layers = parse(key, value)?,
            "num_heads" => t.num_heads = parse(key, value)?,
            "hidden_units" => t.hidden_units = parse(key, value)?,
            "ff_units" => t.ff_units = parse(key, value)?,
            "max_len" => t.max_len = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lambda_l2" => self.lambda_l2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "mask_illegal" => self.mask_illegal = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "unk_replace" => self.unk_replace = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "tokenizer_vocab_size" => self.tokenizer_vocab_size = parse(key, value)?,
            "valid_fraction" => self.valid_fraction = parse(key, value)?,
            "pretrained" => self.pretrained = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        self.transformer.dropout_p = self.dropout_p;
        Ok(())
    }

    /// All keys with their current values, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let c = &self.composer;
        let t = &self.transformer;
        vec![
            ("model_kind", self.model_kind.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("use_word", c.use_word.to_string()),
            ("use_char", c.use_char.to_string()),
            ("use_morph", c.use_morph.to_string()),
            ("use_subword", c.use_subword.to_string()),
            ("word_dim", c.word_dim.to_string()),
            ("char_dim", c.char_dim.to_string()),
            ("morph_dim", c.morph_dim.to_string()),
            ("subword_dim", c.subword_dim.to_string()),
            ("char_hidden", c.char_hidden.to_string()),
            ("morph_hidden", c.morph_hidden.to_string()),
            ("subword_hidden", c.subword_hidden.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("num_layers", t.num_layers.to_string()),
            ("num_heads", t.num_heads.to_string()),
            ("hidden_units", t.hidden_units.to_string()),
            ("ff_units", t.ff_units.to_string()),
            ("max_len", t.max_len.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lambda_l2", self.lambda_l2.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("mask_illegal", self.mask_illegal.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("unk_replace", self.unk_replace.to_string()),
            ("min_count", self.min_count.to_string()),
            ("tokenizer_vocab_size", self.tokenizer_vocab_size.to_string()),
            ("valid_fraction", self.valid_fraction.to_string()),
            ("pretrained", self.pretrained.clone()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every accepted key.
    pub fn keys() -> Vec<&'static str> {
        Self::for_kind(ModelKind::BiLstmCrf).to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Whether the model needs a subword tokenizer.
    pub fn needs_tokenizer(&self) -> bool {
        self.model_kind.is_transformer() || self.composer.use_subword
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.lambda_l2 >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lambda_l2 and weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("beta1, beta2 must lie in [0, 1) and eps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.unk_replace) {
            return bad(format!("unk_replace {} outside [0, 1]", self.unk_replace));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return bad(format!("valid_fraction {} outside (0, 1)", self.valid_fraction));
        }
        if self.min_count == 0 || self.tokenizer_vocab_size == 0 {
            return bad("min_count and tokenizer_vocab_size must be positive".into());
        }
        if self.model_kind.is_transformer() {
            self.transformer.validate()
        } else {
            if self.encoder_hidden == 0 {
                return bad("encoder_hidden must be positive".into());
            }
            self.composer.validate()
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))
}

/// Splits `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
