use std::fmt::Write as _;
use std::time::Instant;

use super::config::TrainConfig;
use super::run::train;
use crate::data::CorpusSplit;
use crate::error::{Error, Result};
use crate::evalscore::EvalReport;

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchEntry {
    pub name: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub valid: EvalReport,
    /// `None` when the split has no test set.
    pub test: Option<EvalReport>,
    pub seconds: f64,
}

/// Mean scores (percentages) over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanScores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl MeanScores {
    fn of<'a>(reports: impl Iterator<Item = &'a EvalReport>) -> Self {
        let mut m = Self::default();
        let mut n = 0usize;
        for r in reports {
            m.f1 += r.f1;
            m.precision += r.precision;
            m.recall += r.recall;
            m.accuracy += r.token_accuracy;
            n += 1;
        }
        if n > 0 {
            let k = n as f64;
            m.f1 /= k;
            m.precision /= k;
            m.recall /= k;
            m.accuracy /= k;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub name: String,
    pub embedding: String,
    pub runs: Vec<SeedRun>,
    pub valid: MeanScores,
    pub test: Option<MeanScores>,
    /// Mean training time per seed.
    pub seconds: f64,
}

/// Trains every entry once per seed on the same split.
pub fn bench(entries: &[BenchEntry], split: &CorpusSplit, seeds: &[u64]) -> Result<Vec<BenchRow>> {
    if entries.is_empty() || seeds.is_empty() {
        return Err(Error::Usage("bench needs at least one config and one seed".into()));
    }
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = entry.config.clone();
            cfg.seed = seed;
            let start = Instant::now();
            let out = train(&cfg, &split.train, &split.valid, None)?;
            let seconds = start.elapsed().as_secs_f64();
            let valid = out.artifact.evaluate(&split.valid)?;
            let test = if split.test.is_empty() {
                None
            } else {
                Some(out.artifact.evaluate(&split.test)?)
            };
            log::info!("{} seed {seed}: valid F1 {:.2} in {seconds:.1}s", entry.name, valid.f1);
            runs.push(SeedRun {
                seed,
                best_epoch: out.best_epoch,
                valid,
                test,
                seconds,
            });
        }
        let valid = MeanScores::of(runs.iter().map(|r| &r.valid));
        let test = (!split.test.is_empty()).then(|| MeanScores::of(runs.iter().filter_map(|r| r.test.as_ref())));
        rows.push(BenchRow {
            name: entry.name.clone(),
            embedding: if entry.config.pretrained.is_empty() { "Random".into() } else { "Pretrained".into() },
            seconds: runs.iter().map(|r| r.seconds).sum::<f64>() / runs.len() as f64,
            runs,
            valid,
            test,
        });
    }
    Ok(rows)
}

fn clock(seconds: f64) -> String {
    let s = seconds.round() as u64;
    format!("{:02}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60)
}

/// Comparison table with one Valid and one Test line per model, followed by
/// per-seed F1 values.
pub fn render_table(rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let seeds = rows.first().map_or(0, |r| r.runs.len());
    let _ = writeln!(out, "Scores averaged over {seeds} seeds");
    let _ = writeln!(
        out,
        "{:<3} {:<28} {:<10} {:<5} {:>7} {:>9} {:>7} {:>8} {:>10}",
        "#", "Model", "Embedding", "Set", "F1", "Precision", "Recall", "Accuracy", "Trn. Time"
    );
    for (i, row) in rows.iter().enumerate() {
        let mut lines = vec![("Valid", row.valid)];
        if let Some(t) = row.test {
            lines.push(("Test", t));
        }
        for (k, (set, m)) in lines.iter().enumerate() {
            let (num, name, emb, time) = if k == 0 {
                ((i + 1).to_string(), row.name.as_str(), row.embedding.as_str(), clock(row.seconds))
            } else {
                (String::new(), "", "", String::new())
            };
            let _ = writeln!(
                out,
                "{num:<3} {name:<28} {emb:<10} {set:<5} {:>7.2} {:>9.2} {:>7.2} {:>8.2} {time:>10}",
                m.f1, m.precision, m.recall, m.accuracy
            );
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Per-seed F1");
    for (i, row) in rows.iter().enumerate() {
        for r in &row.runs {
            let test = r.test.as_ref().map_or("-".to_string(), |t| format!("{:.2}", t.f1));
            let _ = writeln!(
                out,
                "{:<3} {:<28} seed {:<4} valid {:>6.2} test {:>6} best epoch {:>3} {:>8.1}s",
                i + 1,
                row.name,
                r.seed,
                r.valid.f1,
                test,
                r.best_epoch,
                r.seconds
            );
        }
    }
    out
}
