//! Training, persistence and benchmarking.
//!
//! BiLSTM models train with SGD plus momentum, per-sentence updates and a
//! learning rate decayed after every epoch. Transformer models train with
//! Adam and decoupled weight decay on mini-batches. Gradients are clipped by
//! global norm before each step, and the parameters of the epoch with the
//! best validation F1 are kept.

mod artifact;
mod bench;
mod config;
mod model;
mod optim;
mod run;

pub use artifact::{Artifact, FORMAT_VERSION, MAGIC};
pub use bench::{bench, render_table, BenchEntry, BenchRow, MeanScores, SeedRun, DEFAULT_SEEDS};
pub use config::{parse_kv, ModelKind, OptimizerKind, TrainConfig};
pub use model::{Encoder, Example, Head, NerModel};
pub use optim::{clip_gradients, decay_step, lr_schedule, AdamDecoupled, Optimizer, SgdMomentum, LR_DECAY};
pub use run::{evaluate_model, train, train_tokenizer_on, train_with, EpochMetrics, TrainOutcome};
