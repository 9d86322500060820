use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::artifact::Artifact;
use super::config::{OptimizerKind, TrainConfig};
use super::model::{Example, NerModel};
use super::optim::{clip_gradients, decay_step, AdamDecoupled, Optimizer, SgdMomentum};
use crate::autodiff::{Graph, ParamStore};
use crate::data::{build_vocab, LabeledSentence, TagSet};
use crate::encoders::PretrainedVectors;
use crate::error::{Error, Result};
use crate::evalscore::{score, EvalReport};
use crate::tokenize::{train_unigram, UnigramVocab};

/// One metrics-log row. Scores are percentages; `lr` is the rate used
/// during the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_f1: f64,
    pub valid_p: f64,
    pub valid_r: f64,
    pub lr: f64,
}

impl EpochMetrics {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tvalid_f1\tvalid_p\tvalid_r\tlr";

    /// Tab-separated `epoch, train_loss, valid_f1, valid_p, valid_r, lr`.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.8}",
            self.epoch, self.train_loss, self.valid_f1, self.valid_p, self.valid_r, self.lr
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub artifact: Artifact,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Trains a tokenizer over the surface forms of `sentences`.
pub fn train_tokenizer_on(sentences: &[LabeledSentence], vocab_size: usize, seed: u64) -> Result<UnigramVocab> {
    train_unigram(sentences.iter().map(|s| s.words().join(" ")), vocab_size, seed)
}

pub fn train(
    cfg: &TrainConfig,
    train_set: &[LabeledSentence],
    valid_set: &[LabeledSentence],
    tokenizer: Option<UnigramVocab>,
) -> Result<TrainOutcome> {
    train_with(cfg, train_set, valid_set, tokenizer, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with<F: FnMut(&EpochMetrics)>(
    cfg: &TrainConfig,
    train_set: &[LabeledSentence],
    valid_set: &[LabeledSentence],
    tokenizer: Option<UnigramVocab>,
    mut on_epoch: F,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.transformer.dropout_p = cfg.dropout_p;
    let cfg = &cfg;
    cfg.validate()?;
    let train_set: Vec<&LabeledSentence> = train_set.iter().filter(|s| !s.is_empty()).collect();
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let owned: Vec<LabeledSentence> = train_set.iter().map(|s| (*s).clone()).collect();
    let mut vocabs = build_vocab(&owned, cfg.min_count)?;
    let all_tags = owned.iter().chain(valid_set).flat_map(|s| s.tokens.iter().map(|t| t.tag.as_str()));
    vocabs.tags = TagSet::from_tags(all_tags)?;
    let tokenizer = match tokenizer {
        Some(t) => Some(t),
        None if cfg.needs_tokenizer() => Some(train_tokenizer_on(&owned, cfg.tokenizer_vocab_size, cfg.seed)?),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let model = NerModel::build(cfg, &vocabs, tokenizer.clone(), &mut store, &mut rng)?;
    if !cfg.pretrained.is_empty() {
        let table = model
            .word_table()
            .ok_or_else(|| Error::Config("pretrained vectors need word embeddings enabled".into()))?;
        let vectors = PretrainedVectors::load(&cfg.pretrained)?;
        let rate = table.apply_pretrained(&mut store, &vectors)?;
        log::info!("pretrained vectors cover {:.1}% of the word vocabulary", 100.0 * rate);
    }

    let examples = owned
        .iter()
        .map(|s| Example::from_sentence(s, &vocabs.tags))
        .collect::<Result<Vec<_>>>()?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in &examples {
        for w in &ex.words {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let singletons: Vec<Vec<bool>> = examples
        .iter()
        .map(|ex| ex.words.iter().map(|w| counts[w.as_str()] == 1).collect())
        .collect();
    let replace_unk = cfg.unk_replace > 0.0 && model.word_table().is_some();

    let mut opt = match cfg.optimizer {
        OptimizerKind::SgdMomentum => Optimizer::Sgd(SgdMomentum::new(&store, cfg.lr, cfg.momentum)),
        OptimizerKind::AdamDecoupledDecay => Optimizer::Adam(AdamDecoupled::new(
            &store,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
            cfg.weight_decay,
        )),
    };

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grad();
            for (k, &i) in batch.iter().enumerate() {
                let ex = &examples[i];
                let force_unk: Vec<bool> = if replace_unk {
                    singletons[i].iter().map(|&s| s && rng.gen::<f64>() < cfg.unk_replace).collect()
                } else {
                    Vec::new()
                };
                let l2 = if k == 0 { cfg.lambda_l2 } else { 0.0 };
                let mut g = Graph::new();
                let loss = model.loss(&mut g, &store, ex, &force_unk, l2, true, &mut rng)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        msg: format!("loss {value} on training sentence {i}"),
                    });
                }
                g.backward(loss, &mut store)?;
                total += value;
            }
            let norm = clip_gradients(&mut store, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    msg: format!("gradient norm {norm}"),
                });
            }
            opt.step(&mut store);
        }
        let report = evaluate_model(&model, &store, valid_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: total / examples.len() as f64,
            valid_f1: report.f1,
            valid_p: report.precision,
            valid_r: report.recall,
            lr: opt.lr(),
        };
        log::info!("{}", m.to_line());
        on_epoch(&m);
        if best.as_ref().map_or(true, |(f1, _, _)| m.valid_f1 > *f1) {
            let mut snapshot = store.clone();
            snapshot.zero_grad();
            best = Some((m.valid_f1, epoch, snapshot));
        }
        metrics.push(m);
        if cfg.optimizer == OptimizerKind::SgdMomentum && cfg.lr_decay {
            opt.set_lr(decay_step(opt.lr(), epoch));
        }
    }
    let (_, best_epoch, best_store) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        artifact: Artifact {
            config: cfg.clone(),
            vocabs,
            tokenizer,
            model,
            store: best_store,
        },
        metrics,
        best_epoch,
    })
}

/// Entity-level scores of `model` on `sentences`.
pub fn evaluate_model(model: &NerModel, store: &ParamStore, sentences: &[LabeledSentence]) -> Result<EvalReport> {
    let mut gold = Vec::with_capacity(sentences.len());
    let mut pred = Vec::with_capacity(sentences.len());
    for s in sentences {
        let morphs: Vec<Option<&str>> = s.tokens.iter().map(|t| t.morph.as_deref()).collect();
        pred.push(model.predict(store, &s.words(), &morphs)?);
        gold.push(s.tags());
    }
    score(&gold, &pred)
}
