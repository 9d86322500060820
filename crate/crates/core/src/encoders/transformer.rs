use rand::Rng;

use super::embedding::{EmbeddingTable, EMBEDDING_INIT};
use crate::autodiff::{Broadcast, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::data::Vocab;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_units: usize,
    pub ff_units: usize,
    pub max_len: usize,
    pub dropout_p: f64,
}

impl Default for ToyTransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 2,
            hidden_units: 64,
            ff_units: 128,
            max_len: 512,
            dropout_p: 0.1,
        }
    }
}

impl ToyTransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden_units == 0 || self.ff_units == 0 || self.max_len == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if self.hidden_units % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_units {} not divisible by num_heads {}",
                self.hidden_units, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl TransformerLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, h: usize, ff: usize, rng: &mut R) -> Self {
        let mut w = |name: &str, rows: usize, cols: usize| store.add(format!("{prefix}.{name}"), Tensor::xavier(rows, cols, rng));
        let (wq, wk, wv, wo) = (w("wq", h, h), w("wk", h, h), w("wv", h, h), w("wo", h, h));
        let (w1, w2) = (w("w1", ff, h), w("w2", h, ff));
        let mut v = |name: &str, len: usize, x: f64| store.add(format!("{prefix}.{name}"), Tensor::vector(vec![x; len]).expect("len > 0"));
        Self {
            wq,
            bq: v("bq", h, 0.0),
            wk,
            bk: v("bk", h, 0.0),
            wv,
            bv: v("bv", h, 0.0),
            wo,
            bo: v("bo", h, 0.0),
            ln1_gain: v("ln1_gain", h, 1.0),
            ln1_bias: v("ln1_bias", h, 0.0),
            w1,
            b1: v("b1", ff, 0.0),
            w2,
            b2: v("b2", h, 0.0),
            ln2_gain: v("ln2_gain", h, 1.0),
            ln2_bias: v("ln2_bias", h, 0.0),
        }
    }
}

/// Per-layer, per-head attention weights, each an `n × n` row-major matrix.
pub type AttentionMaps = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
pub struct TransformerOutput {
    /// One hidden vector per (kept) piece.
    pub hidden: Vec<NodeId>,
    pub attention: AttentionMaps,
    /// Pieces dropped beyond `max_len`.
    pub truncated: usize,
}

/// Post-norm transformer encoder with learned positional embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    pub cfg: ToyTransformerConfig,
    pub pieces: EmbeddingTable,
    pub positions: ParamId,
    pub layers: Vec<TransformerLayer>,
}

/// `x·Wᵀ + b` over the rows of `x`.
fn linear(g: &mut Graph, store: &ParamStore, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
    let w = g.param(store, w);
    let wt = g.transpose(w)?;
    let b = g.param(store, b);
    let y = g.matmul(x, wt)?;
    g.add_broadcast(y, b, Broadcast::PerCol)
}

fn columns(g: &mut Graph, x: NodeId, rows: usize, cols: usize, from: usize, width: usize) -> Result<NodeId> {
    let idx = (0..rows).flat_map(|r| (from..from + width).map(move |c| r * cols + c)).collect();
    g.gather(x, idx, vec![rows, width])
}

impl ToyTransformer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: ToyTransformerConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_units;
        let pieces = EmbeddingTable::new(store, &format!("{prefix}.pieces"), vocab, h, rng);
        let positions = store.add(
            format!("{prefix}.positions"),
            Tensor::uniform(vec![cfg.max_len, h], EMBEDDING_INIT, rng),
        );
        let layers = (0..cfg.num_layers)
            .map(|l| TransformerLayer::new(store, &format!("{prefix}.layer{l}"), h, cfg.ff_units, rng))
            .collect();
        Ok(Self {
            cfg,
            pieces,
            positions,
            layers,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.cfg.hidden_units
    }

    /// Encodes piece ids. Sequences longer than `max_len` are truncated.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        piece_ids: &[usize],
        training: bool,
        rng: &mut R,
    ) -> Result<TransformerOutput> {
        if piece_ids.is_empty() {
            return Err(Error::Usage("empty piece sequence".into()));
        }
        let keep = piece_ids.len().min(self.cfg.max_len);
        let truncated = piece_ids.len() - keep;
        if truncated > 0 {
            log::warn!("truncating {} pieces to max_len {}", piece_ids.len(), self.cfg.max_len);
        }
        let tok = g.lookup_rows(store, self.pieces.matrix, &piece_ids[..keep])?;
        let pos_ids: Vec<usize> = (0..keep).collect();
        let pos = g.lookup_rows(store, self.positions, &pos_ids)?;
        let x = g.add(tok, pos)?;
        let mut out = self.encode_embedded(g, store, x, training, rng)?;
        out.truncated = truncated;
        Ok(out)
    }

    /// Runs the layer stack on an already embedded `n × H` matrix.
    pub fn encode_embedded<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mut x: NodeId,
        training: bool,
        rng: &mut R,
    ) -> Result<TransformerOutput> {
        let h = self.cfg.hidden_units;
        if g.shape(x).len() != 2 || g.shape(x)[1] != h {
            return Err(Error::shape("transformer input", g.shape(x), &[0, h]));
        }
        let n = g.shape(x)[0];
        let heads = self.cfg.num_heads;
        let dk = h / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let p = self.cfg.dropout_p;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let q = linear(g, store, x, layer.wq, layer.bq)?;
            let k = linear(g, store, x, layer.wk, layer.bk)?;
            let v = linear(g, store, x, layer.wv, layer.bv)?;
            let mut head_out = Vec::with_capacity(heads);
            let mut maps = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = columns(g, q, n, h, hd * dk, dk)?;
                let kh = columns(g, k, n, h, hd * dk, dk)?;
                let vh = columns(g, v, n, h, hd * dk, dk)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, scale);
                let weights = g.softmax(scores);
                maps.push(g.value(weights).to_vec());
                head_out.push(g.matmul(weights, vh)?);
            }
            attention.push(maps);
            let merged = g.concat(&head_out, 1)?;
            let attn = linear(g, store, merged, layer.wo, layer.bo)?;
            let attn = g.dropout(attn, p, training, rng)?;
            let res = g.add(x, attn)?;
            let (g1, b1) = (g.param(store, layer.ln1_gain), g.param(store, layer.ln1_bias));
            x = g.layer_norm(res, g1, b1, LAYER_NORM_EPS)?;

            let ff = linear(g, store, x, layer.w1, layer.b1)?;
            let ff = g.gelu(ff);
            let ff = linear(g, store, ff, layer.w2, layer.b2)?;
            let ff = g.dropout(ff, p, training, rng)?;
            let res = g.add(x, ff)?;
            let (g2, b2) = (g.param(store, layer.ln2_gain), g.param(store, layer.ln2_bias));
            x = g.layer_norm(res, g2, b2, LAYER_NORM_EPS)?;
        }
        let hidden = (0..n).map(|i| g.row(x, i)).collect::<Result<Vec<_>>>()?;
        Ok(TransformerOutput {
            hidden,
            attention,
            truncated: 0,
        })
    }
}
