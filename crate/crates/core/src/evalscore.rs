//! Entity-level precision/recall/F1 with seqeval's lenient chunking, plus
//! token accuracy.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::data::{repair_tags, Bio};
use crate::error::{Error, Result};

/// Half-open token range `[start, end)` labelled with an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub kind: String,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(kind: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            kind: kind.into(),
            start,
            end,
        }
    }
}

/// Maximal `B-X (I-X)*` runs. Invalid `I-` tags are first repaired to `B-`.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<EntitySpan> {
    let mut tags: Vec<String> = tags.iter().map(|t| t.as_ref().to_string()).collect();
    repair_tags(&mut tags);
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match Bio::parse(tag) {
            Some(Bio::Inside(_)) => {}
            other => {
                if let Some((kind, start)) = open.take() {
                    spans.push(EntitySpan::new(kind, start, i));
                }
                if let Some(Bio::Begin(kind)) = other {
                    open = Some((kind.to_string(), i));
                }
            }
        }
    }
    if let Some((kind, start)) = open {
        spans.push(EntitySpan::new(kind, start, tags.len()));
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// number of gold spans of this type
    pub support: usize,
    pub correct: usize,
    pub predicted: usize,
}

/// Scores as percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub token_accuracy: f64,
    pub per_type: BTreeMap<String, TypeScore>,
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
    pub tokens: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn score<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Usage(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let (mut tokens, mut matched_tokens) = (0, 0);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Usage(format!(
                "sentence {i}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
        tokens += g.len();
        matched_tokens += g.iter().zip(p).filter(|(a, b)| a.as_ref() == b.as_ref()).count();
        let gs: HashSet<EntitySpan> = extract_spans(g).into_iter().collect();
        let ps = extract_spans(p);
        for s in &gs {
            counts.entry(s.kind.clone()).or_default().2 += 1;
        }
        for s in ps {
            let e = counts.entry(s.kind.clone()).or_default();
            e.1 += 1;
            if gs.contains(&s) {
                e.0 += 1;
            }
        }
    }
    let mut report = EvalReport {
        tokens,
        token_accuracy: ratio(matched_tokens, tokens),
        ..Default::default()
    };
    for (kind, (correct, predicted, support)) in counts {
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, support);
        report.correct += correct;
        report.predicted += predicted;
        report.gold += support;
        report.per_type.insert(
            kind,
            TypeScore {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support,
                correct,
                predicted,
            },
        );
    }
    report.precision = ratio(report.correct, report.predicted);
    report.recall = ratio(report.correct, report.gold);
    report.f1 = f1_score(report.precision, report.recall);
    Ok(report)
}

impl EvalReport {
    /// One `key=value` line per metric.
    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "precision={:.4}\nrecall={:.4}\nf1={:.4}\naccuracy={:.4}\n",
            self.precision, self.recall, self.f1, self.token_accuracy
        );
        for (kind, s) in &self.per_type {
            out.push_str(&format!(
                "precision.{kind}={:.4}\nrecall.{kind}={:.4}\nf1.{kind}={:.4}\nsupport.{kind}={}\n",
                s.precision, s.recall, s.f1, s.support
            ));
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.per_type.keys().map(String::len).max().unwrap_or(0).max(9);
        writeln!(f, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "", "precision", "recall", "f1", "support")?;
        for (kind, s) in &self.per_type {
            writeln!(
                f,
                "{kind:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                s.precision, s.recall, s.f1, s.support
            )?;
        }
        writeln!(
            f,
            "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            "micro avg", self.precision, self.recall, self.f1, self.gold
        )?;
        write!(f, "{:>width$} {:>9.2}", "accuracy", self.token_accuracy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn spans() {
        assert_eq!(extract_spans(&tags("B-PER I-PER O")), vec![EntitySpan::new("PER", 0, 2)]);
        assert_eq!(
            extract_spans(&tags("B-PER B-PER")),
            vec![EntitySpan::new("PER", 0, 1), EntitySpan::new("PER", 1, 2)]
        );
        let example = tags(
            "B-PERSON I-PERSON O O O O B-ORGANIZATION I-ORGANIZATION I-ORGANIZATION I-ORGANIZATION O O",
        );
        assert_eq!(
            extract_spans(&example),
            vec![EntitySpan::new("PERSON", 0, 2), EntitySpan::new("ORGANIZATION", 6, 10)]
        );
        // lenient: orphan and type-switching I- start new chunks
        assert_eq!(
            extract_spans(&tags("O I-LOC B-LOC I-ORG")),
            vec![
                EntitySpan::new("LOC", 1, 2),
                EntitySpan::new("LOC", 2, 3),
                EntitySpan::new("ORG", 3, 4)
            ]
        );
    }

    #[test]
    fn perfect_prediction() {
        let g = vec![tags("B-PER I-PER O B-LOC")];
        let r = score(&g, &g).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.token_accuracy), (100.0, 100.0, 100.0, 100.0));
    }

    #[test]
    fn empty_prediction() {
        let g = vec![tags("B-PER O")];
        let p = vec![tags("O O")];
        let r = score(&g, &p).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert_eq!(r.token_accuracy, 50.0);
    }

    #[test]
    fn boundary_error_halves_scores() {
        let g = vec![tags(
            "B-PER I-PER O O O O B-ORG I-ORG I-ORG I-ORG O O",
        )];
        let p = vec![tags("B-PER I-PER O O O O B-ORG I-ORG I-ORG O O O")];
        let r = score(&g, &p).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (50.0, 50.0, 50.0));
        assert_eq!(r.per_type["PER"].f1, 100.0);
        assert_eq!(r.per_type["ORG"].f1, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(score(&[tags("O")], &[tags("O O")]), Err(Error::Usage(_))));
        assert!(matches!(score(&[tags("O")], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn key_value_output() {
        let g = vec![tags("B-PER O")];
        let kv = score(&g, &g).unwrap().to_key_values();
        assert!(kv.contains("f1=100.0000\n"));
        assert!(kv.contains("support.PER=1\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const POOL: [&str; 5] = ["O", "B-A", "I-A", "B-B", "I-B"];

        fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
            proptest::collection::vec(proptest::collection::vec(0usize..5, 1..10), 1..6).prop_map(|c| {
                c.into_iter()
                    .map(|s| {
                        let mut tags: Vec<String> = s.into_iter().map(|i| POOL[i].to_string()).collect();
                        repair_tags(&mut tags);
                        tags
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn self_score_is_perfect(c in corpus()) {
                let r = score(&c, &c).unwrap();
                prop_assert_eq!(r.token_accuracy, 100.0);
                if r.gold > 0 {
                    prop_assert_eq!((r.precision, r.recall, r.f1), (100.0, 100.0, 100.0));
                }
            }

            #[test]
            fn f1_between_precision_and_recall(g in corpus(), p in corpus()) {
                let n = g.len().min(p.len());
                let (g, p): (Vec<_>, Vec<_>) = g[..n]
                    .iter()
                    .zip(&p[..n])
                    .map(|(a, b)| {
                        let m = a.len().min(b.len());
                        let mut b = b[..m].to_vec();
                        repair_tags(&mut b);
                        (a[..m].to_vec(), b)
                    })
                    .unzip();
                let r = score(&g, &p).unwrap();
                if r.correct == 0 {
                    prop_assert_eq!(r.f1, 0.0);
                } else {
                    prop_assert!(r.f1 >= r.precision.min(r.recall) - 1e-9);
                    prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-9);
                }
                let sums = r.per_type.values().fold((0, 0, 0), |a, s| (a.0 + s.correct, a.1 + s.predicted, a.2 + s.support));
                prop_assert_eq!(sums, (r.correct, r.predicted, r.gold));
            }
        }
    }
}
