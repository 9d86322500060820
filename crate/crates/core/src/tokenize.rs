//! Unigram subword tokenizer and first-piece label alignment.
//!
//! Text is normalized by collapsing whitespace; each word is then prefixed
//! with [`MARKER`] and segmented independently, so pieces never cross word
//! boundaries. The bare marker is always a piece of its own and is not
//! counted against the vocabulary size.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MARKER: char = '▁';
pub const MARKER_STR: &str = "▁";

/// Longest seed substring, in characters.
pub const MAX_PIECE_CHARS: usize = 16;
const EM_ROUNDS: usize = 2;
const PRUNE_FRACTION: f64 = 0.2;
/// Expected-count floor for pieces that may never be pruned.
const REQUIRED_FLOOR: f64 = 0.1;
/// Optional pieces with a smaller expected count are dropped after EM.
const MIN_EXPECTED: f64 = 1e-3;
/// Extra penalty (in nats) below the rarest piece for characters outside the vocabulary.
const UNK_PENALTY: f64 = 10.0;

/// Whitespace-collapsed text. A literal marker counts as whitespace.
pub fn normalize(text: &str) -> String {
    text.replace(MARKER, " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Inverse of segmentation: joins pieces and turns markers back into spaces.
pub fn detokenize<S: AsRef<str>>(pieces: &[S]) -> String {
    let joined: String = pieces.iter().map(|p| p.as_ref()).collect();
    joined.replace(MARKER, " ").trim_start().to_string()
}

fn strip_marker(piece: &str) -> &str {
    piece.strip_prefix(MARKER).unwrap_or(piece)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnigramVocab {
    /// Sorted by descending log-probability, then piece.
    pieces: Vec<(String, f64)>,
    index: HashMap<String, usize>,
    max_chars: usize,
    unk_logp: f64,
}

impl UnigramVocab {
    /// Builds from `(piece, log-probability)` pairs. The marker piece is
    /// added with the lowest observed log-probability if absent. The
    /// distribution is renormalized unless it already sums to one.
    pub fn from_pieces(pieces: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (p, lp) in &pieces {
            if p.is_empty() || p.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid piece {p:?}")));
            }
            if !lp.is_finite() {
                return Err(Error::Config(format!("piece {p:?} has log-probability {lp}")));
            }
            if !seen.insert(p.clone()) {
                return Err(Error::Config(format!("duplicate piece {p:?}")));
            }
        }
        let mut pieces = pieces;
        if !seen.contains(MARKER_STR) {
            let min = pieces.iter().map(|p| p.1).fold(0.0, f64::min);
            pieces.push((MARKER_STR.to_string(), min));
        }
        let z = crate::autodiff::log_sum_exp_slice(&pieces.iter().map(|p| p.1).collect::<Vec<_>>());
        if z.abs() > 1e-12 {
            for p in &mut pieces {
                p.1 -= z;
            }
        }
        pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = pieces.iter().enumerate().map(|(i, (p, _))| (p.clone(), i)).collect();
        let max_chars = pieces.iter().map(|(p, _)| p.chars().count()).max().unwrap_or(1);
        let unk_logp = pieces.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - UNK_PENALTY;
        Ok(Self {
            pieces,
            index,
            max_chars,
            unk_logp,
        })
    }

    /// Vocabulary size, excluding the bare marker.
    pub fn size(&self) -> usize {
        self.pieces.len() - 1
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.index.contains_key(piece)
    }

    pub fn log_prob(&self, piece: &str) -> Option<f64> {
        self.index.get(piece).map(|&i| self.pieces[i].1)
    }

    /// Log-probability charged to a character missing from the vocabulary.
    pub fn unk_log_prob(&self) -> f64 {
        self.unk_logp
    }

    /// Log-likelihood of a segmentation under the unigram model.
    pub fn likelihood<S: AsRef<str>>(&self, pieces: &[S]) -> f64 {
        pieces.iter().map(|p| self.log_prob(p.as_ref()).unwrap_or(self.unk_logp)).sum()
    }

    /// Viterbi segmentation of normalized `text`.
    pub fn segment(&self, text: &str) -> Vec<String> {
        normalize(text).split(' ').filter(|w| !w.is_empty()).flat_map(|w| self.segment_word(w)).collect()
    }

    /// Segmentation of a single word; the first piece carries the marker.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = std::iter::once(MARKER).chain(word.chars()).collect();
        let lookup = |s: &str| self.log_prob(s);
        viterbi_chars(&chars, self.max_chars, &lookup, self.unk_logp)
    }

    /// Per-word segmentations for an already tokenized sentence. Words are
    /// normalized individually; a word that normalizes to nothing yields the
    /// bare marker.
    pub fn segment_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<Vec<String>> {
        words
            .iter()
            .map(|w| {
                let w: String = w.as_ref().chars().filter(|c| !c.is_whitespace() && *c != MARKER).collect();
                self.segment_word(&w)
            })
            .collect()
    }

    /// One `piece<TAB>log-probability` line per piece.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (p, lp) in &self.pieces {
            writeln!(out, "{p}\t{lp}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut pieces = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (piece, lp) = line.split_once('\t').ok_or_else(|| parse_err("expected piece<TAB>log-probability"))?;
            let lp: f64 = lp.trim().parse().map_err(|_| parse_err("bad log-probability"))?;
            pieces.push((piece.to_string(), lp));
        }
        if pieces.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "empty vocabulary".into(),
            });
        }
        Self::from_pieces(pieces)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Max-likelihood segmentation of `chars`. Positions no piece covers fall
/// back to a single-character piece scored `unk_logp`. Among equal scores the
/// earliest split point wins.
fn viterbi_chars(chars: &[char], max_chars: usize, lookup: &dyn Fn(&str) -> Option<f64>, unk_logp: f64) -> Vec<String> {
    let n = chars.len();
    let mut best = vec![f64::NEG_INFINITY; n + 1];
    let mut back = vec![0usize; n + 1];
    best[0] = 0.0;
    let mut buf = String::new();
    for start in 0..n {
        if best[start] == f64::NEG_INFINITY {
            continue;
        }
        buf.clear();
        for len in 1..=max_chars.min(n - start) {
            buf.push(chars[start + len - 1]);
            let lp = match lookup(&buf) {
                Some(lp) => lp,
                None if len == 1 => unk_logp,
                None => continue,
            };
            let end = start + len;
            if best[start] + lp > best[end] {
                best[end] = best[start] + lp;
                back[end] = start;
            }
        }
    }
    let mut out = Vec::new();
    let mut end = n;
    while end > 0 {
        let start = back[end];
        out.push(chars[start..end].iter().collect());
        end = start;
    }
    out.reverse();
    out
}

struct Trainer {
    /// Unique marker-prefixed words with corpus frequency, sorted.
    words: Vec<(Vec<char>, f64)>,
    required: HashSet<String>,
    logp: HashMap<String, f64>,
}

impl Trainer {
    fn sorted_pieces(&self) -> Vec<String> {
        let mut v: Vec<String> = self.logp.keys().cloned().collect();
        v.sort();
        v
    }

    fn size(&self) -> usize {
        self.logp.len() - 1
    }

    /// Forward-backward expected counts over every word lattice.
    fn expected_counts(&self) -> HashMap<String, f64> {
        let mut counts: HashMap<String, f64> = HashMap::new();
        for (chars, freq) in &self.words {
            let n = chars.len();
            let mut edges: Vec<(usize, usize, f64)> = Vec::new();
            for start in 0..n {
                let mut buf = String::new();
                for len in 1..=MAX_PIECE_CHARS.min(n - start) {
                    buf.push(chars[start + len - 1]);
                    if let Some(&lp) = self.logp.get(&buf) {
                        edges.push((start, start + len, lp));
                    }
                }
            }
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            for &(s, e, lp) in &edges {
                alpha[e] = log_add(alpha[e], alpha[s] + lp);
            }
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            beta[n] = 0.0;
            for &(s, e, lp) in edges.iter().rev() {
                beta[s] = log_add(beta[s], beta[e] + lp);
            }
            let z = alpha[n];
            if z == f64::NEG_INFINITY {
                continue;
            }
            for &(s, e, lp) in &edges {
                let p = (alpha[s] + lp + beta[e] - z).exp();
                if p > 0.0 {
                    let piece: String = chars[s..e].iter().collect();
                    *counts.entry(piece).or_default() += freq * p;
                }
            }
        }
        counts
    }

    /// One EM step. Unused optional pieces are dropped.
    fn em_step(&mut self) {
        let counts = self.expected_counts();
        let mut next = HashMap::new();
        for piece in self.sorted_pieces() {
            let c = counts.get(&piece).copied().unwrap_or(0.0);
            if self.required.contains(&piece) {
                next.insert(piece, c.max(REQUIRED_FLOOR));
            } else if c >= MIN_EXPECTED {
                next.insert(piece, c);
            }
        }
        self.set_counts(next);
    }

    fn set_counts(&mut self, counts: HashMap<String, f64>) {
        let mut keys: Vec<&String> = counts.keys().collect();
        keys.sort();
        let total: f64 = keys.iter().map(|k| counts[*k]).sum();
        self.logp = counts.iter().map(|(k, c)| (k.clone(), (c / total).ln())).collect();
    }

    fn renormalize(&mut self) {
        let mut keys = self.sorted_pieces();
        keys.sort();
        let z = crate::autodiff::log_sum_exp_slice(&keys.iter().map(|k| self.logp[k]).collect::<Vec<_>>());
        for v in self.logp.values_mut() {
            *v -= z;
        }
    }

    fn viterbi(&self, chars: &[char], exclude: Option<&str>) -> Vec<String> {
        let lookup = |s: &str| if Some(s) == exclude { None } else { self.logp.get(s).copied() };
        viterbi_chars(chars, MAX_PIECE_CHARS, &lookup, f64::NEG_INFINITY)
    }

    /// Removes the pieces whose loss of corpus likelihood is smallest.
    fn prune(&mut self, target: usize, rng: &mut ChaCha8Rng) {
        let mut freq: HashMap<String, f64> = HashMap::new();
        for (chars, f) in &self.words {
            for p in self.viterbi(chars, None) {
                *freq.entry(p).or_default() += f;
            }
        }
        let sum: f64 = freq.values().sum();
        let mut candidates: Vec<String> = self.sorted_pieces().into_iter().filter(|p| !self.required.contains(p)).collect();
        candidates.shuffle(rng);
        let mut scored: Vec<(f64, usize, String)> = candidates
            .into_iter()
            .enumerate()
            .map(|(rank, p)| {
                let f = freq.get(&p).copied().unwrap_or(0.0);
                if f == 0.0 {
                    return (0.0, rank, p);
                }
                let chars: Vec<char> = p.chars().collect();
                let alt = self.viterbi(&chars, Some(&p));
                let new_sum = sum + f * (alt.len() as f64 - 1.0);
                let alt_logp: f64 = alt
                    .iter()
                    .map(|a| ((freq.get(a).copied().unwrap_or(0.0) + f) / new_sum).ln())
                    .sum();
                (f * ((f / sum).ln() - alt_logp), rank, p)
            })
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let excess = self.size() - target;
        let quota = ((scored.len() as f64 * PRUNE_FRACTION).ceil() as usize).clamp(1, excess);
        for (_, _, p) in scored.into_iter().take(quota) {
            self.logp.remove(&p);
        }
        self.renormalize();
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Trains a unigram vocabulary of `vocab_size` pieces (marker excluded).
pub fn train_unigram<I, S>(corpus: I, vocab_size: usize, seed: u64) -> Result<UnigramVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    train_unigram_traced(corpus, vocab_size, seed, |_| {})
}

/// As [`train_unigram`], calling `trace` with the vocabulary after every
/// pruning round.
pub fn train_unigram_traced<I, S, F>(corpus: I, vocab_size: usize, seed: u64, mut trace: F) -> Result<UnigramVocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
    F: FnMut(&UnigramVocab),
{
    let mut word_freq: HashMap<String, f64> = HashMap::new();
    for line in corpus {
        for w in normalize(line.as_ref()).split(' ').filter(|w| !w.is_empty()) {
            *word_freq.entry(format!("{MARKER}{w}")).or_default() += 1.0;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Usage("tokenizer corpus is empty".into()));
    }
    let mut words: Vec<(Vec<char>, f64)> = word_freq.into_iter().map(|(w, f)| (w.chars().collect(), f)).collect();
    words.sort_by(|a, b| a.0.cmp(&b.0));

    let mut required: HashSet<String> = words.iter().flat_map(|(w, _)| w.iter().map(|c| c.to_string())).collect();
    required.insert(MARKER_STR.to_string());
    let alphabet = required.len() - 1;
    if vocab_size < alphabet {
        return Err(Error::Config(format!(
            "vocabulary size {vocab_size} is smaller than the alphabet ({alphabet} characters)"
        )));
    }

    let mut seed_counts: HashMap<String, f64> = HashMap::new();
    for (chars, f) in &words {
        for start in 0..chars.len() {
            let mut buf = String::new();
            for len in 1..=MAX_PIECE_CHARS.min(chars.len() - start) {
                buf.push(chars[start + len - 1]);
                *seed_counts.entry(buf.clone()).or_default() += f;
            }
        }
    }
    // Keep every character plus the most frequent-times-longest substrings.
    let seed_cap = (vocab_size * 8).max(10_000);
    let mut optional: Vec<(String, f64)> = seed_counts
        .iter()
        .filter(|(p, _)| !required.contains(*p))
        .map(|(p, c)| (p.clone(), *c))
        .collect();
    optional.sort_by(|a, b| {
        let sa = a.1 * a.0.chars().count() as f64;
        let sb = b.1 * b.0.chars().count() as f64;
        sb.total_cmp(&sa).then_with(|| a.0.cmp(&b.0))
    });
    optional.truncate(seed_cap);
    let mut initial: HashMap<String, f64> = optional.into_iter().collect();
    for r in &required {
        initial.insert(r.clone(), seed_counts.get(r).copied().unwrap_or(0.0).max(REQUIRED_FLOOR));
    }

    let mut trainer = Trainer {
        words,
        required,
        logp: HashMap::new(),
    };
    trainer.set_counts(initial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        for _ in 0..EM_ROUNDS {
            trainer.em_step();
        }
        if trainer.size() <= vocab_size {
            break;
        }
        trainer.prune(vocab_size, &mut rng);
        trace(&trainer.snapshot()?);
    }
    if trainer.size() < vocab_size {
        log::info!("tokenizer corpus supports only {} pieces (requested {vocab_size})", trainer.size());
    }
    trainer.snapshot()
}

impl Trainer {
    fn snapshot(&self) -> Result<UnigramVocab> {
        let mut pieces: Vec<(String, f64)> = self.sorted_pieces().into_iter().map(|p| {
            let lp = self.logp[&p];
            (p, lp)
        }).collect();
        pieces.sort_by(|a, b| a.0.cmp(&b.0));
        UnigramVocab::from_pieces(pieces)
    }
}

/// Per-piece view of a labelled sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSequence<T> {
    pub pieces: Vec<String>,
    pub word_index: Vec<usize>,
    pub is_word_initial: Vec<bool>,
    /// Word tag on the first piece of each word, `None` (padding) elsewhere.
    pub labels: Vec<Option<T>>,
    pub num_words: usize,
}

impl<T> AlignedSequence<T> {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Index of each word's first piece.
    pub fn initial_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_word_initial[i]).collect()
    }
}

/// Spreads word tags over their pieces: the first piece keeps the tag, the
/// rest become padding. `pieces[w]` must spell `words[w]` once markers are
/// removed.
pub fn align_labels<S: AsRef<str>, T: Clone>(words: &[S], word_tags: &[T], pieces: &[Vec<String>]) -> Result<AlignedSequence<T>> {
    if words.len() != word_tags.len() || words.len() != pieces.len() {
        return Err(Error::Alignment(format!(
            "{} words, {} tags, {} piece groups",
            words.len(),
            word_tags.len(),
            pieces.len()
        )));
    }
    let mut out = AlignedSequence {
        pieces: Vec::new(),
        word_index: Vec::new(),
        is_word_initial: Vec::new(),
        labels: Vec::new(),
        num_words: words.len(),
    };
    for (w, ((word, tag), group)) in words.iter().zip(word_tags).zip(pieces).enumerate() {
        let spelled: String = group.iter().map(|p| strip_marker(p)).collect();
        let expected: String = word.as_ref().chars().filter(|c| !c.is_whitespace() && *c != MARKER).collect();
        if group.is_empty() || spelled != expected {
            return Err(Error::Alignment(format!(
                "word {w} {:?} does not match pieces {group:?}",
                word.as_ref()
            )));
        }
        for (k, p) in group.iter().enumerate() {
            out.pieces.push(p.clone());
            out.word_index.push(w);
            out.is_word_initial.push(k == 0);
            out.labels.push((k == 0).then(|| tag.clone()));
        }
    }
    Ok(out)
}

/// Word tags read off the word-initial pieces; other predictions are ignored.
pub fn project_predictions<T: Clone, U>(aligned: &AlignedSequence<U>, piece_tags: &[T]) -> Result<Vec<T>> {
    if piece_tags.len() != aligned.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} pieces",
            piece_tags.len(),
            aligned.len()
        )));
    }
    Ok(aligned
        .is_word_initial
        .iter()
        .zip(piece_tags)
        .filter(|(init, _)| **init)
        .map(|(_, t)| t.clone())
        .collect())
}
