use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqtag::data::{
    parse_conll, split_corpus, split_long_sentences, split_with_test, validate_bio2, write_conll, Bio2Mode,
    LabeledSentence, Token, MAX_SENTENCE_TOKENS,
};
use seqtag::evalscore::{score, EvalReport};
use seqtag::synth::{generate, SynthConfig};
use seqtag::tokenize::{train_unigram, UnigramVocab};
use seqtag::train::{
    bench, parse_kv, render_table, train_with, Artifact, BenchEntry, EpochMetrics, TrainConfig, DEFAULT_SEEDS,
};
use seqtag::{Error, Result};

/// Generates the config-override flags, one `--<key> VALUE` per config key.
macro_rules! config_overrides {
    ($($key:ident),* $(,)?) => {
        #[derive(Args, Debug, Default, Clone)]
        struct ConfigOverrides {
            $(
                #[arg(long = stringify!($key), value_name = "VALUE", help_heading = "Config overrides")]
                $key: Option<String>,
            )*
        }

        impl ConfigOverrides {
            #[cfg(test)]
            const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn pairs(&self) -> Vec<(String, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        out.push((stringify!($key).to_string(), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

config_overrides!(
    model_kind,
    optimizer,
    use_word,
    use_char,
    use_morph,
    use_subword,
    word_dim,
    char_dim,
    morph_dim,
    subword_dim,
    char_hidden,
    morph_hidden,
    subword_hidden,
    encoder_hidden,
    num_layers,
    num_heads,
    hidden_units,
    ff_units,
    max_len,
    lr,
    momentum,
    lr_decay,
    clip_norm,
    dropout_p,
    epochs,
    lambda_l2,
    seed,
    batch_size,
    mask_illegal,
    beta1,
    beta2,
    eps,
    weight_decay,
    unk_replace,
    min_count,
    tokenizer_vocab_size,
    valid_fraction,
    pretrained,
);

#[derive(Parser, Debug)]
#[command(name = "seqtag", version, about = "Named entity recognition with BiLSTM and transformer taggers")]
struct Cli {
    /// Log progress at info level (RUST_LOG takes precedence).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ReportFormat {
    Table,
    Kv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tagger and save the best-validation model.
    Train {
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training corpus in CoNLL format.
        #[arg(long = "train")]
        train_file: PathBuf,
        /// Validation corpus; split off the training corpus when absent.
        #[arg(long)]
        valid: Option<PathBuf>,
        /// Pretrained subword tokenizer; trained on the corpus when needed and absent.
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        #[arg(long, default_value = "model.bin")]
        output: PathBuf,
        /// Also write the metrics log to this file.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Rewrite orphan I- tags in the input instead of rejecting it.
        #[arg(long)]
        repair_tags: bool,
        /// Forbid BIO2-illegal CRF transitions.
        #[arg(long = "mask-illegal")]
        mask_illegal_flag: bool,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Score a saved model on a labelled corpus.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
    /// Tag raw sentences (one per line) or a CoNLL file; writes CoNLL.
    Tag {
        #[arg(long)]
        model: PathBuf,
        /// Input file; standard input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Read CoNLL input (tags are ignored, analyses are used).
        #[arg(long)]
        conll: bool,
    },
    /// Train a unigram subword tokenizer.
    TokenizerTrain {
        /// Raw text, one sentence per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Read surface forms from a CoNLL file instead of raw text.
        #[arg(long)]
        conll: bool,
    },
    /// Compare predicted tags with gold tags (both CoNLL).
    Score {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
    /// Train several configs over a shared seed set and print a comparison table.
    Bench {
        /// Labelled corpus, split into train/valid(/test).
        #[arg(long)]
        data: PathBuf,
        /// Separate test corpus; otherwise `--test-fraction` of the data is held out.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Config files, one table row each (repeatable).
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Seed of the corpus split.
        #[arg(long, default_value_t = 1)]
        split_seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Generate a seeded synthetic corpus in CoNLL format.
    Synth {
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        novel_rate: f64,
        /// Omit the morphological analysis column.
        #[arg(long)]
        no_morph: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn read_corpus(path: &Path, mode: Bio2Mode) -> Result<Vec<LabeledSentence>> {
    let sentences = parse_conll(BufReader::new(File::open(path)?))?;
    let sentences = sentences
        .into_iter()
        .map(|s| validate_bio2(s, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(split_long_sentences(sentences, MAX_SENTENCE_TOKENS))
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn config_from(file: Option<&Path>, overrides: &ConfigOverrides, extra: &[(String, String)]) -> Result<TrainConfig> {
    let mut pairs = match file {
        Some(p) => parse_kv(&std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)?,
        None => Vec::new(),
    };
    pairs.extend(overrides.pairs());
    pairs.extend(extra.iter().cloned());
    TrainConfig::from_pairs(&pairs)
}

fn print_report(report: &EvalReport, format: ReportFormat) {
    match format {
        ReportFormat::Table => println!("{report}"),
        ReportFormat::Kv => print!("{}", report.to_key_values()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<&Path>,
    train_file: &Path,
    valid: Option<&Path>,
    tokenizer: Option<&Path>,
    output: &Path,
    metrics: Option<&Path>,
    repair: bool,
    mask: bool,
    overrides: &ConfigOverrides,
) -> Result<()> {
    let extra = if mask { vec![("mask_illegal".to_string(), "true".to_string())] } else { Vec::new() };
    let cfg = config_from(config, overrides, &extra)?;
    let mode = if repair { Bio2Mode::Repair } else { Bio2Mode::Strict };
    let corpus = read_corpus(train_file, mode)?;
    let (train_set, valid_set) = match valid {
        Some(v) => (corpus, read_corpus(v, mode)?),
        None => {
            let split = split_corpus(corpus, cfg.valid_fraction, cfg.seed)?;
            (split.train, split.valid)
        }
    };
    let tok = tokenizer.map(UnigramVocab::load).transpose()?;
    let mut log_file = metrics.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
    println!("{}", EpochMetrics::HEADER);
    if let Some(f) = log_file.as_mut() {
        writeln!(f, "{}", EpochMetrics::HEADER)?;
    }
    let mut io_err = None;
    let out = train_with(&cfg, &train_set, &valid_set, tok, |m| {
        println!("{}", m.to_line());
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{}", m.to_line()).and_then(|_| f.flush()) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    out.artifact.save(output)?;
    eprintln!(
        "saved {} (best epoch {}, valid F1 {:.2})",
        output.display(),
        out.best_epoch,
        out.metrics[out.best_epoch - 1].valid_f1
    );
    Ok(())
}

fn cmd_tag(model: &Path, input: Option<&Path>, output: Option<&Path>, conll: bool) -> Result<()> {
    let artifact = Artifact::load(model)?;
    let mut text = String::new();
    match input {
        Some(p) => {
            File::open(p)?.read_to_string(&mut text)?;
        }
        None => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    let sentences: Vec<LabeledSentence> = if conll {
        parse_conll(text.as_bytes())?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| LabeledSentence::new(l.split_whitespace().map(|w| Token::new(w, "O")).collect()))
            .collect()
    };
    let predicted = artifact.tag_corpus(&sentences)?;
    let tagged: Vec<LabeledSentence> = sentences
        .into_iter()
        .zip(predicted)
        .map(|(mut s, tags)| {
            for (t, tag) in s.tokens.iter_mut().zip(tags) {
                t.tag = tag;
            }
            s
        })
        .collect();
    let mut w = output_writer(output)?;
    write_conll(&mut w, &tagged)?;
    w.flush()?;
    Ok(())
}

fn cmd_tokenizer_train(input: &Path, vocab_size: usize, seed: u64, output: &Path, conll: bool) -> Result<()> {
    let lines: Vec<String> = if conll {
        parse_conll(BufReader::new(File::open(input)?))?
            .iter()
            .map(|s| s.words().join(" "))
            .collect()
    } else {
        BufReader::new(File::open(input)?).lines().collect::<io::Result<_>>()?
    };
    let vocab = train_unigram(lines.iter().filter(|l| !l.trim().is_empty()), vocab_size, seed)?;
    vocab.save(output)?;
    eprintln!("saved {} pieces to {}", vocab.size(), output.display());
    Ok(())
}

fn cmd_score(gold: &Path, pred: &Path, format: ReportFormat) -> Result<()> {
    let gold = parse_conll(BufReader::new(File::open(gold)?))?;
    let pred = parse_conll(BufReader::new(File::open(pred)?))?;
    if gold.len() != pred.len() {
        return Err(Error::Validation {
            index: gold.len().min(pred.len()),
            msg: format!("{} gold sentences but {} predicted", gold.len(), pred.len()),
        });
    }
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        if g.words() != p.words() {
            return Err(Error::Validation {
                index: i,
                msg: format!("sentence {} has different tokens in gold and prediction", i + 1),
            });
        }
    }
    let g: Vec<Vec<String>> = gold.iter().map(LabeledSentence::tags).collect();
    let p: Vec<Vec<String>> = pred.iter().map(LabeledSentence::tags).collect();
    print_report(&score(&g, &p)?, format);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    data: &Path,
    test: Option<&Path>,
    configs: &[PathBuf],
    seeds: &[u64],
    test_fraction: f64,
    split_seed: u64,
    output: Option<&Path>,
    overrides: &ConfigOverrides,
) -> Result<()> {
    let entries = configs
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(BenchEntry {
                name,
                config: config_from(Some(p), overrides, &[])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let valid_fraction = entries[0].config.valid_fraction;
    let corpus = read_corpus(data, Bio2Mode::Strict)?;
    let split = match test {
        Some(t) => {
            let mut s = split_corpus(corpus, valid_fraction, split_seed)?;
            s.test = read_corpus(t, Bio2Mode::Strict)?;
            s
        }
        None => split_with_test(corpus, valid_fraction, test_fraction, split_seed)?,
    };
    let rows = bench(&entries, &split, seeds)?;
    let mut w = output_writer(output)?;
    write!(w, "{}", render_table(&rows))?;
    w.flush()?;
    Ok(())
}

fn cmd_synth(sentences: usize, seed: u64, novel_rate: f64, no_morph: bool, output: Option<&Path>) -> Result<()> {
    let corpus = generate(&SynthConfig {
        sentences,
        seed,
        novel_rate,
        with_morph: !no_morph,
    })?;
    let mut w = output_writer(output)?;
    write_conll(&mut w, &corpus)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            train_file,
            valid,
            tokenizer,
            output,
            metrics,
            repair_tags,
            mask_illegal_flag,
            overrides,
        } => cmd_train(
            config.as_deref(),
            &train_file,
            valid.as_deref(),
            tokenizer.as_deref(),
            &output,
            metrics.as_deref(),
            repair_tags,
            mask_illegal_flag,
            &overrides,
        ),
        Command::Evaluate { model, data, format } => {
            let artifact = Artifact::load(&model)?;
            let corpus = read_corpus(&data, Bio2Mode::Strict)?;
            print_report(&artifact.evaluate(&corpus)?, format);
            Ok(())
        }
        Command::Tag {
            model,
            input,
            output,
            conll,
        } => cmd_tag(&model, input.as_deref(), output.as_deref(), conll),
        Command::TokenizerTrain {
            input,
            vocab_size,
            seed,
            output,
            conll,
        } => cmd_tokenizer_train(&input, vocab_size, seed, &output, conll),
        Command::Score { gold, pred, format } => cmd_score(&gold, &pred, format),
        Command::Bench {
            data,
            test,
            configs,
            seeds,
            test_fraction,
            split_seed,
            output,
            overrides,
        } => cmd_bench(
            &data,
            test.as_deref(),
            &configs,
            &seeds,
            test_fraction,
            split_seed,
            output.as_deref(),
            &overrides,
        ),
        Command::Synth {
            sentences,
            seed,
            novel_rate,
            no_morph,
            output,
        } => cmd_synth(sentences, seed, novel_rate, no_morph, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
