use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conll::LabeledSentence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusSplit {
    pub train: Vec<LabeledSentence>,
    pub valid: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
    pub seed: u64,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")))
    }
}

/// Shuffles under `seed` and partitions into `(rest, held_out)` with
/// `round(n · fraction)` held-out sentences.
fn partition(
    sentences: Vec<LabeledSentence>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledSentence>, Vec<LabeledSentence>)> {
    check_fraction(fraction)?;
    let n = sentences.len();
    let held = (n as f64 * fraction).round() as usize;
    if held == 0 || held == n {
        return Err(Error::Config(format!(
            "{n} sentences cannot be split at fraction {fraction} into two non-empty parts"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<LabeledSentence>> = sentences.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| ids.iter().map(|&i| slots[i].take().expect("index used once")).collect::<Vec<_>>();
    let held_out = take(&order[..held]);
    let rest = take(&order[held..]);
    Ok((rest, held_out))
}

/// Train/valid split; `test` is left empty.
pub fn split_corpus(sentences: Vec<LabeledSentence>, valid_fraction: f64, seed: u64) -> Result<CorpusSplit> {
    let (train, valid) = partition(sentences, valid_fraction, seed)?;
    Ok(CorpusSplit {
        train,
        valid,
        test: Vec::new(),
        seed,
    })
}

/// Holds out `test_fraction` as the test set, then splits the remainder into
/// train/valid at `valid_fraction`.
pub fn split_with_test(
    sentences: Vec<LabeledSentence>,
    valid_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<CorpusSplit> {
    let (rest, test) = partition(sentences, test_fraction, seed)?;
    let mut split = split_corpus(rest, valid_fraction, seed.wrapping_add(1))?;
    split.test = test;
    split.seed = seed;
    Ok(split)
}
