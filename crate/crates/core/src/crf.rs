//! Linear-chain CRF over per-token hidden states, and the per-token softmax
//! head used when no CRF is stacked on the encoder.
//!
//! The transition table is `(T+1) × (T+1)`: row `T` holds start scores
//! (`BOS → tag`) and column `T` holds stop scores (`tag → EOS`). Entry
//! `[T][T]` is unused.

use rand::Rng;

use crate::autodiff::{Broadcast, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::data::{is_allowed_transition, TagSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `T × H`, one row per label.
    pub emission: ParamId,
    /// `(T+1) × (T+1)` with BOS row and EOS column.
    pub transition: ParamId,
    num_labels: usize,
    hidden: usize,
    /// Additive mask (0 or −∞) over the transition table.
    mask: Option<Vec<f64>>,
}

impl CrfParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, num_labels: usize, hidden: usize, rng: &mut R) -> Self {
        let emission = store.add(format!("{prefix}.emission"), Tensor::xavier(num_labels, hidden, rng));
        let transition = store.add(
            format!("{prefix}.transition"),
            Tensor::zeros(vec![num_labels + 1, num_labels + 1]),
        );
        Self {
            emission,
            transition,
            num_labels,
            hidden,
            mask: None,
        }
    }

    /// Forbids BIO2-illegal transitions (`O → I-X`, `B-X → I-Y`, `BOS → I-X`).
    pub fn mask_illegal(&mut self, tags: &TagSet) {
        let t = self.num_labels;
        assert_eq!(tags.len(), t, "tag set size");
        let mut mask = vec![0.0; (t + 1) * (t + 1)];
        for prev in 0..=t {
            for next in 0..t {
                let prev_tag = (prev < t).then(|| tags.tag(prev));
                if !is_allowed_transition(prev_tag, tags.tag(next)) {
                    mask[prev * (t + 1) + next] = f64::NEG_INFINITY;
                }
            }
        }
        self.mask = Some(mask);
    }

    pub fn is_masked(&self) -> bool {
        self.mask.is_some()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn stride(&self) -> usize {
        self.num_labels + 1
    }

    /// Effective transition scores (parameters plus mask) as plain values.
    pub fn transition_values(&self, store: &ParamStore) -> Vec<f64> {
        let raw = store.get(self.transition).values();
        match &self.mask {
            Some(m) => raw.iter().zip(m).map(|(a, b)| a + b).collect(),
            None => raw.to_vec(),
        }
    }

    fn transition_node(&self, g: &mut Graph, store: &ParamStore) -> Result<NodeId> {
        let p = g.param(store, self.transition);
        match &self.mask {
            Some(m) => {
                let mask = g.constant(vec![self.stride(), self.stride()], m.clone())?;
                g.add(p, mask)
            }
            None => Ok(p),
        }
    }

    /// `W_CRF · h_i` for every position.
    pub fn emissions(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId]) -> Result<Vec<NodeId>> {
        let w = g.param(store, self.emission);
        hs.iter().map(|&h| g.matmul(w, h)).collect()
    }

    fn check_labels(&self, hs: &[NodeId], labels: &[usize]) -> Result<()> {
        if hs.is_empty() {
            return Err(Error::Usage("empty sequence".into()));
        }
        if hs.len() != labels.len() {
            return Err(Error::Usage(format!("{} positions but {} labels", hs.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_labels) {
            return Err(Error::Index {
                what: "tag set",
                index: bad,
                size: self.num_labels,
            });
        }
        Ok(())
    }

    fn path_score(&self, g: &mut Graph, trans: NodeId, ems: &[NodeId], labels: &[usize]) -> Result<NodeId> {
        let s = self.stride();
        let bos = self.num_labels;
        let mut parts = Vec::with_capacity(ems.len() + 1);
        let mut trans_index = Vec::with_capacity(ems.len() + 1);
        let mut prev = bos;
        for (&e, &l) in ems.iter().zip(labels) {
            parts.push(g.element(e, l)?);
            trans_index.push(prev * s + l);
            prev = l;
        }
        trans_index.push(prev * s + bos);
        let n = trans_index.len();
        parts.push(g.gather(trans, trans_index, vec![n])?);
        let all = g.concat(&parts, 0)?;
        Ok(g.sum(all))
    }

    fn partition(&self, g: &mut Graph, trans: NodeId, ems: &[NodeId]) -> Result<NodeId> {
        let t = self.num_labels;
        let s = self.stride();
        let start = g.gather(trans, (0..t).map(|j| t * s + j).collect(), vec![t])?;
        let inner = g.gather(trans, (0..t).flat_map(|i| (0..t).map(move |j| i * s + j)).collect(), vec![t, t])?;
        let stop = g.gather(trans, (0..t).map(|i| i * s + t).collect(), vec![t])?;
        let mut alpha = g.add(start, ems[0])?;
        for &e in &ems[1..] {
            // alpha'[j] = lse_i(alpha[i] + trans[i][j]) + e[j]
            let scores = g.add_broadcast(inner, alpha, Broadcast::PerRow)?;
            let reduced = g.log_sum_exp(scores, 0)?;
            alpha = g.add(reduced, e)?;
        }
        let last = g.add(alpha, stop)?;
        g.log_sum_exp(last, 0)
    }

    /// Unnormalised score of one labelling, including start and stop terms.
    pub fn score_sequence(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId], labels: &[usize]) -> Result<NodeId> {
        self.check_labels(hs, labels)?;
        let trans = self.transition_node(g, store)?;
        let ems = self.emissions(g, store, hs)?;
        self.path_score(g, trans, &ems, labels)
    }

    /// Log of the sum of exp-scores over all labellings (forward algorithm).
    pub fn log_partition(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId]) -> Result<NodeId> {
        if hs.is_empty() {
            return Err(Error::Usage("empty sequence".into()));
        }
        let trans = self.transition_node(g, store)?;
        let ems = self.emissions(g, store, hs)?;
        self.partition(g, trans, &ems)
    }

    /// `score_sequence − log_partition`.
    pub fn log_prob(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId], labels: &[usize]) -> Result<NodeId> {
        self.check_labels(hs, labels)?;
        let trans = self.transition_node(g, store)?;
        let ems = self.emissions(g, store, hs)?;
        let score = self.path_score(g, trans, &ems, labels)?;
        let z = self.partition(g, trans, &ems)?;
        g.sub(score, z)
    }

    /// Highest-scoring labelling and its score.
    pub fn viterbi_decode(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId]) -> Result<(Vec<usize>, f64)> {
        if hs.is_empty() {
            return Err(Error::Usage("empty sequence".into()));
        }
        let ems = self.emissions(g, store, hs)?;
        let ems: Vec<Vec<f64>> = ems.iter().map(|&e| g.value(e).to_vec()).collect();
        Ok(viterbi(&ems, &self.transition_values(store), self.num_labels))
    }

    /// `−Σ log P(y|s) + (λ/2)·‖Θ‖²` over a batch of `(hidden states, labels)`.
    pub fn nll_loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[(Vec<NodeId>, Vec<usize>)],
        lambda: f64,
        theta: &[ParamId],
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        if lambda < 0.0 {
            return Err(Error::Config(format!("negative L2 weight {lambda}")));
        }
        let mut terms = Vec::with_capacity(batch.len() + 1);
        for (hs, labels) in batch {
            let lp = self.log_prob(g, store, hs, labels)?;
            terms.push(g.scale(lp, -1.0));
        }
        if lambda > 0.0 {
            terms.push(g.squared_norm(store, theta, lambda / 2.0));
        }
        g.add_all(&terms)
    }
}

/// Max-product decoding over plain scores. `transition` is the
/// `(T+1) × (T+1)` table described in the module docs. Ties go to the lowest
/// tag index.
pub fn viterbi(emissions: &[Vec<f64>], transition: &[f64], num_labels: usize) -> (Vec<usize>, f64) {
    let t = num_labels;
    let s = t + 1;
    assert!(!emissions.is_empty());
    assert_eq!(transition.len(), s * s);
    let mut delta: Vec<f64> = (0..t).map(|j| transition[t * s + j] + emissions[0][j]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(emissions.len());
    for e in &emissions[1..] {
        let mut next = vec![f64::NEG_INFINITY; t];
        let mut ptr = vec![0; t];
        for j in 0..t {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (i, d) in delta.iter().enumerate() {
                let v = d + transition[i * s + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + e[j];
            ptr[j] = arg;
        }
        back.push(ptr);
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (i, d) in delta.iter().enumerate() {
        let v = d + transition[i * s + t];
        if v > best {
            best = v;
            last = i;
        }
    }
    let mut path = vec![last];
    for ptr in back.iter().rev() {
        let prev = ptr[*path.last().expect("non-empty")];
        path.push(prev);
    }
    path.reverse();
    (path, best)
}

/// Per-token affine projection followed by log-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: ParamId,
    pub bias: ParamId,
    num_labels: usize,
}

impl LinearHead {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, num_labels: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{prefix}.weight"), Tensor::xavier(num_labels, hidden, rng)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(vec![num_labels])),
            num_labels,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn log_probs(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId]) -> Result<Vec<NodeId>> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        hs.iter()
            .map(|&h| {
                let logits = g.matmul(w, h)?;
                let logits = g.add(logits, b)?;
                Ok(g.log_softmax(logits))
            })
            .collect()
    }

    /// Summed token cross-entropy. `None` labels (padding pieces) are skipped.
    pub fn cross_entropy(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId], labels: &[Option<usize>]) -> Result<NodeId> {
        if hs.len() != labels.len() {
            return Err(Error::Usage(format!("{} positions but {} labels", hs.len(), labels.len())));
        }
        let lps = self.log_probs(g, store, hs)?;
        let mut picks = Vec::new();
        for (&lp, label) in lps.iter().zip(labels) {
            if let Some(l) = *label {
                if l >= self.num_labels {
                    return Err(Error::Index {
                        what: "tag set",
                        index: l,
                        size: self.num_labels,
                    });
                }
                picks.push(g.element(lp, l)?);
            }
        }
        if picks.is_empty() {
            return g.constant(vec![1], vec![0.0]);
        }
        let all = g.concat(&picks, 0)?;
        let total = g.sum(all);
        Ok(g.scale(total, -1.0))
    }

    /// Argmax tag per position; ties go to the lowest index.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, hs: &[NodeId]) -> Result<Vec<usize>> {
        let lps = self.log_probs(g, store, hs)?;
        Ok(lps.iter().map(|&lp| argmax(g.value(lp))).collect())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
