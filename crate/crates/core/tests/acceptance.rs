//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line (written to
//! the real stdout so it shows without `--nocapture`) and then asserts.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqtag::autodiff::check::{finite_difference, max_relative_error, FD_STEP};
use seqtag::autodiff::{Broadcast, Elementwise, Graph, NodeId, ParamId, ParamStore, Tensor};
use seqtag::crf::{viterbi, CrfParams, LinearHead};
use seqtag::data::{build_vocab, split_with_test, CorpusSplit, LabeledSentence, Token};
use seqtag::encoders::{bilstm_encode, lstm_step, BiLstm, LstmCell, ToyTransformer, ToyTransformerConfig};
use seqtag::evalscore::score;
use seqtag::synth::{generate, SynthConfig};
use seqtag::tokenize::{align_labels, detokenize, normalize, project_predictions, train_unigram, UnigramVocab};
use seqtag::train::{
    bench, lr_schedule, render_table, train_with, Artifact, BenchEntry, Example, NerModel, TrainConfig,
};

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("[acceptance {criterion}] {verdict} {name}: {detail}\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn cfg(pairs: &[(&str, &str)]) -> TrainConfig {
    let owned: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    TrainConfig::from_pairs(&owned).unwrap()
}

fn corpus_split() -> CorpusSplit {
    let data = generate(&SynthConfig {
        sentences: 2000,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    split_with_test(data, 0.1, 0.2, 1).unwrap()
}

// ---------------------------------------------------------------- CRF oracles

/// A CRF whose emission matrix is the identity, so hidden states are the
/// emission scores themselves.
struct CrfInstance {
    store: ParamStore,
    crf: CrfParams,
    emissions: Vec<Vec<f64>>,
    transition: Vec<f64>,
}

impl CrfInstance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let t = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=5);
        let mut store = ParamStore::new();
        let crf = CrfParams::new(&mut store, "crf", t, t, rng);
        let eye = Tensor::identity(t);
        store.get_mut(crf.emission).values_mut().copy_from_slice(eye.values());
        let transition: Vec<f64> = (0..(t + 1) * (t + 1)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        store.get_mut(crf.transition).values_mut().copy_from_slice(&transition);
        let emissions = (0..n).map(|_| (0..t).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        Self {
            store,
            crf,
            emissions,
            transition,
        }
    }

    fn labels(&self) -> usize {
        self.crf.num_labels()
    }

    fn hidden(&self, g: &mut Graph) -> Vec<NodeId> {
        self.emissions.iter().map(|e| g.input(Tensor::vector(e.clone()).unwrap())).collect()
    }

    /// Every labelling with its score, computed term by term.
    fn enumerate(&self) -> Vec<(Vec<usize>, f64)> {
        let t = self.labels();
        let s = t + 1;
        let n = self.emissions.len();
        let total = t.pow(n as u32);
        (0..total)
            .map(|mut code| {
                let y: Vec<usize> = (0..n)
                    .map(|_| {
                        let l = code % t;
                        code /= t;
                        l
                    })
                    .collect();
                let mut sc = self.transition[t * s + y[0]] + self.transition[y[n - 1] * s + t];
                for i in 0..n {
                    sc += self.emissions[i][y[i]];
                    if i > 0 {
                        sc += self.transition[y[i - 1] * s + y[i]];
                    }
                }
                (y, sc)
            })
            .collect()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[test]
fn crf_oracle_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut agree, mut worst_z) = (0, 0.0f64);
    for _ in 0..200 {
        let inst = CrfInstance::random(&mut rng);
        let all = inst.enumerate();
        let best = all.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let mut g = Graph::new();
        let hs = inst.hidden(&mut g);
        let (path, sc) = inst.crf.viterbi_decode(&mut g, &inst.store, &hs).unwrap();
        let (plain, _) = viterbi(&inst.emissions, &inst.transition, inst.labels());
        if path == best.0 && plain == best.0 && (sc - best.1).abs() < 1e-9 {
            agree += 1;
        }
        let z = inst.crf.log_partition(&mut g, &inst.store, &hs).unwrap();
        let scores: Vec<f64> = all.iter().map(|p| p.1).collect();
        worst_z = worst_z.max((g.scalar(z) - log_sum_exp(&scores)).abs());
    }
    let elapsed = start.elapsed();
    let pass = agree == 200 && worst_z <= 1e-9 && elapsed < Duration::from_secs(10);
    report(
        1,
        "CRF oracle suite",
        pass,
        &format!(
            "viterbi agreement {agree}/200 (need 200), max |logZ error| {worst_z:.2e} (tol 1e-9), {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn crf_probabilities_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let inst = CrfInstance::random(&mut rng);
        let mut total = 0.0;
        for (y, _) in inst.enumerate() {
            let mut g = Graph::new();
            let hs = inst.hidden(&mut g);
            let lp = inst.crf.log_prob(&mut g, &inst.store, &hs, &y).unwrap();
            total += g.scalar(lp).exp();
        }
        worst = worst.max((total - 1.0).abs());
    }
    let pass = worst <= 1e-9;
    report(
        3,
        "probability normalization",
        pass,
        &format!("max |sum exp(log_prob) - 1| {worst:.2e} over 50 instances (tol 1e-9)"),
    );
    assert!(pass);
}

// ------------------------------------------------------------ gradient suite

type Builder<'a> = dyn Fn(&mut Graph, &ParamStore) -> NodeId + 'a;

/// Weighted sum with fixed, distinct weights so every output element
/// contributes a different amount to the scalar.
fn reduce(g: &mut Graph, x: NodeId) -> NodeId {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = g.constant(shape, (0..n).map(|i| ((i + 1) as f64 * 0.7).sin()).collect()).unwrap();
    let y = g.mul(x, w).unwrap();
    g.sum(y)
}

/// Max relative error between reverse-mode and central-difference gradients
/// over every parameter value in `store`.
fn grad_error(store: &ParamStore, build: &Builder) -> f64 {
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    let mut g = Graph::new();
    let root = build(&mut g, &analytic_store);
    g.backward(root, &mut analytic_store).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let analytic: Vec<f64> = ids.iter().flat_map(|&id| analytic_store.get(id).grad().to_vec()).collect();
    let x0: Vec<f64> = ids.iter().flat_map(|&id| store.get(id).values().to_vec()).collect();
    let mut probe = store.clone();
    let numeric = finite_difference(
        |x| {
            let mut off = 0;
            for &id in &ids {
                let v = probe.get_mut(id).values_mut();
                v.copy_from_slice(&x[off..off + v.len()]);
                off += v.len();
            }
            let mut g = Graph::new();
            let root = build(&mut g, &probe);
            g.scalar(root)
        },
        &x0,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

struct OpCase {
    name: &'static str,
    store: ParamStore,
    build: Box<Builder<'static>>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn op_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut cases = Vec::new();
    let mut case = |name: &'static str,
                    shapes: &[(Vec<usize>, f64, f64)],
                    rng: &mut ChaCha8Rng,
                    f: Box<dyn Fn(&mut Graph, &ParamStore, &[ParamId]) -> NodeId>| {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, (s, lo, hi))| store.add(format!("p{i}"), uniform(rng, s.clone(), *lo, *hi)))
            .collect();
        cases.push(OpCase {
            name,
            store,
            build: Box::new(move |g, st| {
                let out = f(g, st, &ids);
                if g.shape(out).iter().product::<usize>() == 1 && g.shape(out).len() <= 1 {
                    out
                } else {
                    reduce(g, out)
                }
            }),
        });
    };
    let m = |r, c| (vec![r, c], -1.0, 1.0);
    let v = |n| (vec![n], -1.0, 1.0);
    let p = |g: &mut Graph, st: &ParamStore, id: ParamId| g.param(st, id);

    case("matmul matrix-matrix", &[m(2, 3), m(3, 4)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.matmul(a, b).unwrap()
    }));
    case("matmul matrix-vector", &[m(3, 4), v(4)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.matmul(a, b).unwrap()
    }));
    case("add", &[m(2, 3), m(2, 3)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.add(a, b).unwrap()
    }));
    case("sub", &[v(4), v(4)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.sub(a, b).unwrap()
    }));
    case("mul", &[v(4), v(4)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.mul(a, b).unwrap()
    }));
    case("add_all", &[v(3), v(3), v(3)], &mut rng, Box::new(move |g, st, ids| {
        let xs: Vec<NodeId> = ids.iter().map(|&i| p(g, st, i)).collect();
        g.add_all(&xs).unwrap()
    }));
    case("scale", &[v(3)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.scale(a, -2.5)
    }));
    case("sigmoid", &[v(5)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.sigmoid(a)
    }));
    case("tanh", &[v(5)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.tanh(a)
    }));
    case("exp", &[v(5)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.exp(a)
    }));
    case("log", &[(vec![5], 0.5, 2.0)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.log(a).unwrap()
    }));
    case("gelu", &[v(5)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.gelu(a)
    }));
    case("elementwise dispatch", &[(vec![4], 0.5, 2.0), v(4)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        let ops = [
            Elementwise::Sigmoid,
            Elementwise::Tanh,
            Elementwise::Exp,
            Elementwise::Log,
            Elementwise::Scale(0.3),
        ];
        let mut parts: Vec<NodeId> = ops.iter().map(|&op| g.elementwise(op, &[a]).unwrap()).collect();
        parts.push(g.elementwise(Elementwise::Add, &[a, b]).unwrap());
        parts.push(g.elementwise(Elementwise::Mul, &[a, b]).unwrap());
        g.concat(&parts, 0).unwrap()
    }));
    case("sum", &[m(2, 3)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        let s = g.sum(a);
        g.mul(s, s).unwrap()
    }));
    case("concat vectors", &[v(2), v(3)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.concat(&[a, b], 0).unwrap()
    }));
    case("concat columns", &[m(2, 2), m(2, 3)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.concat(&[a, b], 1).unwrap()
    }));
    case("stack", &[v(3), v(3)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.stack(&[a, b, a]).unwrap()
    }));
    case("gather", &[m(3, 3)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.gather(a, vec![8, 0, 4, 4, 2, 1], vec![2, 3]).unwrap()
    }));
    case("row and element", &[m(3, 2)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        let r = g.row(a, 1).unwrap();
        let e = g.element(a, 4).unwrap();
        g.concat(&[r, e], 0).unwrap()
    }));
    case("reshape", &[m(2, 3)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.reshape(a, vec![3, 2]).unwrap()
    }));
    case("transpose", &[m(2, 3)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.transpose(a).unwrap()
    }));
    case("log_sum_exp rows", &[m(3, 4)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.log_sum_exp(a, 0).unwrap()
    }));
    case("log_sum_exp columns", &[m(3, 4)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.log_sum_exp(a, 1).unwrap()
    }));
    case("broadcast per row", &[m(2, 3), v(2)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.add_broadcast(a, b, Broadcast::PerRow).unwrap()
    }));
    case("broadcast per column", &[m(2, 3), v(3)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b) = (p(g, st, ids[0]), p(g, st, ids[1]));
        g.add_broadcast(a, b, Broadcast::PerCol).unwrap()
    }));
    case("softmax", &[m(2, 4)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.softmax(a)
    }));
    case("log_softmax", &[v(5)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.log_softmax(a)
    }));
    case("layer_norm", &[m(2, 5), v(5), v(5)], &mut rng, Box::new(move |g, st, ids| {
        let (a, b, c) = (p(g, st, ids[0]), p(g, st, ids[1]), p(g, st, ids[2]));
        g.layer_norm(a, b, c, 1e-5).unwrap()
    }));
    case("dropout", &[v(8)], &mut rng, Box::new(move |g, st, ids| {
        let a = p(g, st, ids[0]);
        g.dropout(a, 0.4, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }));
    case("lookup", &[m(4, 3)], &mut rng, Box::new(move |g, st, ids| {
        let a = g.lookup(st, ids[0], 2).unwrap();
        let b = g.lookup_rows(st, ids[0], &[1, 2, 1]).unwrap();
        let b = g.reshape(b, vec![9]).unwrap();
        g.concat(&[a, b], 0).unwrap()
    }));
    case("squared_norm", &[m(2, 2), v(3)], &mut rng, Box::new(move |g, st, ids| {
        g.squared_norm(st, ids, 0.35)
    }));
    cases
}

fn vector_inputs(g: &mut Graph, rng_seed: u64, n: usize, dim: usize) -> Vec<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n).map(|_| g.input(uniform(&mut rng, vec![dim], -1.0, 1.0))).collect()
}

fn module_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let crf = CrfParams::new(&mut store, "crf", 3, 4, &mut rng);
    {
        let crf = crf.clone();
        cases.push(OpCase {
            name: "crf score_sequence",
            store: store.clone(),
            build: Box::new(move |g, st| {
                let hs = vector_inputs(g, 1, 3, 4);
                crf.score_sequence(g, st, &hs, &[2, 0, 1]).unwrap()
            }),
        });
    }
    {
        let crf = crf.clone();
        cases.push(OpCase {
            name: "crf log_partition",
            store: store.clone(),
            build: Box::new(move |g, st| {
                let hs = vector_inputs(g, 2, 3, 4);
                crf.log_partition(g, st, &hs).unwrap()
            }),
        });
    }
    {
        let crf = crf.clone();
        cases.push(OpCase {
            name: "crf nll_loss with L2",
            store: store.clone(),
            build: Box::new(move |g, st| {
                let a = vector_inputs(g, 3, 2, 4);
                let b = vector_inputs(g, 4, 3, 4);
                let theta = [crf.emission, crf.transition];
                crf.nll_loss(g, st, &[(a, vec![0, 2]), (b, vec![1, 1, 0])], 0.1, &theta).unwrap()
            }),
        });
    }

    let mut store = ParamStore::new();
    let head = LinearHead::new(&mut store, "linear", 3, 4, &mut rng);
    cases.push(OpCase {
        name: "linear head cross_entropy",
        store,
        build: Box::new(move |g, st| {
            let hs = vector_inputs(g, 5, 3, 4);
            head.cross_entropy(g, st, &hs, &[Some(1), None, Some(2)]).unwrap()
        }),
    });

    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "cell", 3, 2, &mut rng);
    cases.push(OpCase {
        name: "lstm_step",
        store,
        build: Box::new(move |g, st| {
            let xs = vector_inputs(g, 6, 3, 3);
            let (mut h, mut c) = (g.zeros(2), g.zeros(2));
            for &x in &xs {
                (h, c) = lstm_step(g, st, &cell, x, h, c).unwrap();
            }
            let out = g.concat(&[h, c], 0).unwrap();
            reduce(g, out)
        }),
    });

    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "bilstm", 3, 2, &mut rng);
    cases.push(OpCase {
        name: "bilstm_encode",
        store,
        build: Box::new(move |g, st| {
            let xs = vector_inputs(g, 7, 3, 3);
            let hs = bilstm_encode(g, st, &lstm, &xs).unwrap();
            let out = g.concat(&hs, 0).unwrap();
            reduce(g, out)
        }),
    });

    let mut store = ParamStore::new();
    let vocab = seqtag::data::Vocab::from_tokens(["a", "b", "c"]).unwrap();
    let tcfg = ToyTransformerConfig {
        num_layers: 1,
        num_heads: 2,
        hidden_units: 4,
        ff_units: 6,
        max_len: 8,
        dropout_p: 0.2,
    };
    let net = ToyTransformer::new(&mut store, "transformer", tcfg, vocab, &mut rng).unwrap();
    cases.push(OpCase {
        name: "transformer encoder",
        store,
        build: Box::new(move |g, st| {
            let out = net.encode(g, st, &[2, 3, 4], true, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let h = g.concat(&out.hidden, 0).unwrap();
            reduce(g, h)
        }),
    });
    cases
}

/// End-to-end loss of a full model on a two-token sentence.
fn model_case(kind: &str) -> OpCase {
    let sentence = LabeledSentence::new(vec![
        Token::new("Ali", "B-PER").with_morph("Ali+Noun+Prop"),
        Token::new("geldi", "O").with_morph("gel+Verb+Past"),
    ]);
    let corpus = vec![sentence.clone()];
    let vocabs = build_vocab(&corpus, 1).unwrap();
    let config = cfg(&[
        ("model_kind", kind),
        ("use_morph", "true"),
        ("word_dim", "3"),
        ("char_dim", "2"),
        ("char_hidden", "2"),
        ("morph_dim", "2"),
        ("morph_hidden", "2"),
        ("encoder_hidden", "3"),
        ("num_layers", "1"),
        ("num_heads", "1"),
        ("hidden_units", "4"),
        ("ff_units", "4"),
        ("lambda_l2", "0.01"),
    ]);
    let tokenizer = config
        .model_kind
        .is_transformer()
        .then(|| train_unigram(["Ali geldi"], 8, 1).unwrap());
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let model = NerModel::build(&config, &vocabs, tokenizer, &mut store, &mut rng).unwrap();
    let ex = Example::from_sentence(&sentence, &model.tags).unwrap();
    let l2 = config.lambda_l2;
    OpCase {
        name: if kind == "bilstm-crf" { "BiLSTM-CRF nll_loss (2 tokens)" } else { "transformer-CRF loss (2 tokens)" },
        store,
        build: Box::new(move |g, st| {
            model
                .loss(g, st, &ex, &[], l2, false, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap()
        }),
    }
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    let mut cases = op_cases();
    cases.extend(module_cases());
    cases.push(model_case("bilstm-crf"));
    cases.push(model_case("transformer-crf"));
    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for c in &cases {
        let err = grad_error(&c.store, &c.build);
        if err > worst.0 {
            worst = (err, c.name);
        }
        if !(err <= 1e-4) {
            failures.push(format!("{} ({err:.2e})", c.name));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    report(
        2,
        "gradient suite",
        pass,
        &format!(
            "{} checks, max relative error {:.2e} in {} (tol 1e-4), {:.2}s (limit 60s){}",
            cases.len(),
            worst.0,
            worst.1,
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------- scorer oracle

const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

fn random_bio2(rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(len);
    for i in 0..len {
        let inside_ok = i > 0 && out[i - 1] != "O";
        let r = rng.gen_range(0..10);
        let tag = if r < 4 {
            "O".to_string()
        } else if r < 7 || !inside_ok {
            format!("B-{}", TYPES[rng.gen_range(0..3)])
        } else {
            format!("I-{}", &out[i - 1][2..])
        };
        out.push(tag);
    }
    out
}

/// Every `(kind, start, end)` such that `tags[start..end]` is one full
/// entity: a `B-X`, then only `I-X`, not followed by another `I-X`.
fn brute_spans(sentence: usize, tags: &[String]) -> BTreeSet<(usize, String, usize, usize)> {
    let mut out = BTreeSet::new();
    for start in 0..tags.len() {
        for end in start + 1..=tags.len() {
            let Some(kind) = tags[start].strip_prefix("B-") else { continue };
            let inside = format!("I-{kind}");
            let body_ok = tags[start + 1..end].iter().all(|t| *t == inside);
            let closed = end == tags.len() || tags[end] != inside;
            if body_ok && closed {
                out.insert((sentence, kind.to_string(), start, end));
            }
        }
    }
    out
}

#[test]
fn scorer_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mismatches = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=6);
        let lens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=12)).collect();
        let gold: Vec<Vec<String>> = lens.iter().map(|&l| random_bio2(&mut rng, l)).collect();
        let pred: Vec<Vec<String>> = gold
            .iter()
            .map(|g| if rng.gen_bool(0.3) { g.clone() } else { random_bio2(&mut rng, g.len()) })
            .collect();
        let (mut gs, mut ps) = (BTreeSet::new(), BTreeSet::new());
        for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
            gs.extend(brute_spans(i, g));
            ps.extend(brute_spans(i, p));
        }
        let correct = gs.intersection(&ps).count();
        let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let (p, r) = (pct(correct, ps.len()), pct(correct, gs.len()));
        let f = if correct == 0 { 0.0 } else { 200.0 * correct as f64 / (ps.len() + gs.len()) as f64 };
        let tokens: usize = lens.iter().sum();
        let same = gold.iter().flatten().zip(pred.iter().flatten()).filter(|(a, b)| a == b).count();
        let rep = score(&gold, &pred).unwrap();
        let ok = rep.correct == correct
            && rep.predicted == ps.len()
            && rep.gold == gs.len()
            && rep.precision == p
            && rep.recall == r
            && (rep.f1 - f).abs() <= 1e-9
            && rep.token_accuracy == pct(same, tokens);
        if !ok {
            mismatches += 1;
        }
    }
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let gold = vec![t("B-PER I-PER O O O O B-ORG I-ORG I-ORG I-ORG O O")];
    let pred = vec![t("B-PER I-PER O O O O B-ORG I-ORG I-ORG O O O")];
    let rep = score(&gold, &pred).unwrap();
    let boundary = (rep.precision, rep.recall, rep.f1) == (50.0, 50.0, 50.0);
    let pass = mismatches == 0 && boundary;
    report(
        4,
        "scorer oracle",
        pass,
        &format!(
            "{mismatches} mismatches on 500 random corpora (counts exact, F1 tol 1e-9); boundary case P/R/F1 = {}/{}/{} (expect 50/50/50)",
            rep.precision, rep.recall, rep.f1
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- tokenizer

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &[
        'a', 'e', 'ı', 'i', 'o', 'ö', 'u', 'ü', 'k', 'l', 'r', 'n', 'ş', 'ç', 'ğ', 'A', 'İ', 'Ş', '\'', '.', '1',
        ' ', ' ', ' ', '\t', '\n', '▁', 'q', 'ж',
    ];
    let len = rng.gen_range(0..40);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

/// All segmentations of `word` (marker-prefixed), scored like the lattice:
/// vocabulary pieces at their log-probability, unknown single characters at
/// the unknown penalty.
fn enumerate_best(vocab: &UnigramVocab, word: &str) -> f64 {
    let chars: Vec<char> = std::iter::once('▁').chain(word.chars()).collect();
    let n = chars.len();
    let mut best = f64::NEG_INFINITY;
    for cuts in 0..(1u32 << (n - 1)) {
        let mut total = 0.0;
        let mut start = 0;
        let mut feasible = true;
        for end in 1..=n {
            if end < n && cuts & (1 << (end - 1)) == 0 {
                continue;
            }
            let piece: String = chars[start..end].iter().collect();
            match vocab.log_prob(&piece) {
                Some(lp) => total += lp,
                None if end - start == 1 => total += vocab.unk_log_prob(),
                None => {
                    feasible = false;
                    break;
                }
            }
            start = end;
        }
        if feasible {
            best = best.max(total);
        }
    }
    best
}

#[test]
fn tokenizer_properties() {
    let split = corpus_split();
    let all: Vec<LabeledSentence> = split.train.iter().chain(&split.valid).chain(&split.test).cloned().collect();
    let lines: Vec<String> = all.iter().map(|s| s.words().join(" ")).collect();
    let vocab = train_unigram(&lines, 400, 1).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut round_trip_fail = 0;
    for _ in 0..10_000 {
        let s = random_text(&mut rng);
        if detokenize(&vocab.segment(&s)) != normalize(&s) {
            round_trip_fail += 1;
        }
    }

    let mut viterbi_fail = 0;
    let mut checked = 0;
    for _ in 0..500 {
        let k = rng.gen_range(1..=8);
        let letters = ['a', 'b', 'c', 'd'];
        let mut pieces = BTreeSet::new();
        while pieces.len() < k {
            let len = rng.gen_range(1..=3);
            let mut p: String = (0..len).map(|_| letters[rng.gen_range(0..4)]).collect();
            if rng.gen_bool(0.3) {
                p.insert(0, '▁');
            }
            pieces.insert(p);
        }
        let toy = UnigramVocab::from_pieces(pieces.into_iter().map(|p| (p, -rng.gen_range(0.5..4.0))).collect()).unwrap();
        for _ in 0..4 {
            let len = rng.gen_range(1..=7);
            let word: String = (0..len).map(|_| letters[rng.gen_range(0..4)]).collect();
            let seg = toy.segment_word(&word);
            let got = toy.likelihood(&seg);
            let want = enumerate_best(&toy, &word);
            checked += 1;
            if (got - want).abs() > 1e-12 || seg.concat() != format!("▁{word}") {
                viterbi_fail += 1;
            }
        }
    }

    let mut align_fail = 0;
    for s in &all {
        let words = s.words();
        let tags = s.tags();
        let pieces = vocab.segment_words(&words);
        let aligned = align_labels(&words, &tags, &pieces).unwrap();
        let piece_tags: Vec<String> = aligned.labels.iter().map(|l| l.clone().unwrap_or_else(|| "PAD".into())).collect();
        if project_predictions(&aligned, &piece_tags).unwrap() != tags {
            align_fail += 1;
        }
    }
    let pass = round_trip_fail == 0 && viterbi_fail == 0 && align_fail == 0;
    report(
        7,
        "tokenizer properties",
        pass,
        &format!(
            "round trip {round_trip_fail}/10000 failures; viterbi vs enumeration {viterbi_fail}/{checked} failures (vocabularies of 1 to 8 pieces); alignment identity {align_fail}/{} failures",
            all.len()
        ),
    );
    assert!(pass);
}

// -------------------------------------------------------------- LR schedule

#[test]
fn lr_schedule_values() {
    let expected = [0.0476190, 0.0432900, 0.0376435];
    let mut recurrence = 0.05;
    let mut worst = 0.0f64;
    for (k, want) in expected.iter().enumerate() {
        let epoch = k + 1;
        recurrence /= 1.0 + 0.05 * epoch as f64;
        let got = lr_schedule(0.05, epoch);
        worst = worst.max((got - want).abs()).max((recurrence - want).abs());
    }
    let pass = worst <= 1e-6;
    report(
        8,
        "learning-rate schedule",
        pass,
        &format!(
            "lr(1..3) = {:.7}, {:.7}, {:.7}; max deviation {worst:.2e} (tol 1e-6)",
            lr_schedule(0.05, 1),
            lr_schedule(0.05, 2),
            lr_schedule(0.05, 3)
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------ learning and ablation

fn train_and_test(config: &TrainConfig, split: &CorpusSplit) -> (f64, usize, Duration) {
    let start = Instant::now();
    let out = train_with(config, &split.train, &split.valid, None, |_| {}).unwrap();
    let test = out.artifact.evaluate(&split.test).unwrap();
    (test.f1, out.best_epoch, start.elapsed())
}

#[test]
fn scaled_down_learning() {
    let split = corpus_split();
    let budget = Duration::from_secs(15 * 60);

    let bilstm = cfg(&[
        ("model_kind", "bilstm-crf"),
        ("word_dim", "50"),
        ("char_dim", "25"),
        ("char_hidden", "25"),
        ("encoder_hidden", "50"),
        ("epochs", "10"),
    ]);
    let (f1, best, time) = train_and_test(&bilstm, &split);
    let pass_bilstm = f1 >= 95.0 && bilstm.epochs <= 30 && time < budget;
    report(
        5,
        "BiLSTM-CRF (word+char) learning",
        pass_bilstm,
        &format!(
            "test F1 {f1:.2} (need >= 95), {} epochs (limit 30), best epoch {best}, {:.0}s (limit 900s)",
            bilstm.epochs,
            time.as_secs_f64()
        ),
    );

    let transformer = cfg(&[
        ("model_kind", "transformer-crf"),
        ("lr", "0.0005"),
        ("batch_size", "8"),
        ("dropout_p", "0.2"),
        ("tokenizer_vocab_size", "400"),
        ("epochs", "30"),
    ]);
    let (f1, best, time) = train_and_test(&transformer, &split);
    let pass_transformer = f1 >= 90.0 && transformer.epochs <= 30 && time < budget;
    report(
        5,
        "transformer-CRF learning",
        pass_transformer,
        &format!(
            "test F1 {f1:.2} (need >= 90), {} epochs (limit 30), best epoch {best}, {:.0}s (limit 900s)",
            transformer.epochs,
            time.as_secs_f64()
        ),
    );
    assert!(pass_bilstm && pass_transformer);
}

#[test]
fn ablation_direction() {
    let split = corpus_split();
    let dims = [("word_dim", "50"), ("encoder_hidden", "50"), ("epochs", "4")];
    let mut full = vec![("model_kind", "bilstm-crf"), ("char_dim", "25"), ("char_hidden", "25")];
    full.extend(dims);
    let mut word_only = vec![("model_kind", "bilstm-linear"), ("use_char", "false")];
    word_only.extend(dims);
    let entries = [
        BenchEntry {
            name: "Word-Char-BiLSTM-CRF".into(),
            config: cfg(&full),
        },
        BenchEntry {
            name: "Word-BiLSTM".into(),
            config: cfg(&word_only),
        },
    ];
    let rows = bench(&entries, &split, &[1, 2, 3, 4, 5]).unwrap();
    let table = render_table(&rows);
    let _ = std::io::stdout().lock().write_all(table.as_bytes());
    let (a, b) = (rows[0].test.as_ref().unwrap().f1, rows[1].test.as_ref().unwrap().f1);
    let pass = a >= b;
    report(
        6,
        "ablation direction",
        pass,
        &format!("mean test F1 over 5 seeds: word+char CRF {a:.2} vs word-only linear {b:.2} (need first >= second)"),
    );
    assert!(pass);
}

// ----------------------------------------------- determinism and persistence

fn pipeline(dir: &std::path::Path, tag: &str, split: &CorpusSplit) -> (Vec<String>, Vec<u8>, String) {
    let config = cfg(&[
        ("model_kind", "bilstm-crf"),
        ("word_dim", "16"),
        ("char_dim", "8"),
        ("char_hidden", "8"),
        ("encoder_hidden", "16"),
        ("epochs", "2"),
        ("seed", "7"),
    ]);
    let out = train_with(&config, &split.train, &split.valid, None, |_| {}).unwrap();
    let metrics: Vec<String> = out.metrics.iter().map(|m| m.to_line()).collect();
    let path = dir.join(format!("{tag}.bin"));
    out.artifact.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = Artifact::load(&path).unwrap();
    let predicted = loaded.tag_corpus(&split.test).unwrap();
    let gold: Vec<Vec<String>> = split.test.iter().map(LabeledSentence::tags).collect();
    let rep = score(&gold, &predicted).unwrap();
    (metrics, bytes, rep.to_key_values())
}

#[test]
fn determinism_and_persistence() {
    let data = generate(&SynthConfig {
        sentences: 300,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_with_test(data, 0.15, 0.15, 3).unwrap();
    let dir = std::env::temp_dir().join(format!("seqtag-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let first = pipeline(&dir, "first", &split);
    let second = pipeline(&dir, "second", &split);
    let _ = std::fs::remove_dir_all(&dir);
    let pass = first == second;
    report(
        9,
        "determinism and persistence",
        pass,
        &format!(
            "two fixed-seed train/save/load/tag/score runs: metrics {}, model bytes {}, scores {}",
            if first.0 == second.0 { "identical" } else { "differ" },
            if first.1 == second.1 { "identical" } else { "differ" },
            if first.2 == second.2 { "identical" } else { "differ" },
        ),
    );
    assert!(pass);
}
