//! Independent oracles and fixtures shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilkit::corpus::Document;
use tilkit::eval::{EvalError, LanguageModel, McItem, TaskConfig};
use tilkit::model::{ModelConfig, Parameters, Transformer};
use tilkit::tokenizer::{pretokenize, BlockFile, TokenizerModel, END_OF_TEXT};
use tilkit::trainer::{train, BatchPlan, OptimizerConfig, OptimizerState, StepRecord};

pub fn eot() -> Vec<String> {
    vec![END_OF_TEXT.to_string()]
}

// ---- corpus ----

/// Ten hand-traced documents: one violation per filter stage, two duplicates
/// and three survivors (d01, d02, d10).
pub fn synthetic_corpus() -> Vec<Document> {
    include_str!("../../fixtures/synthetic_corpus.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---- tokenizer ----

/// The printable byte alphabet, derived from its definition: printable
/// Latin-1 bytes map to themselves, the rest to U+0100 onwards in byte order.
pub fn byte_alphabet() -> Vec<char> {
    let keep = |b: u32| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
    let mut next = 0x100;
    (0..256u32)
        .map(|b| {
            if keep(b) {
                char::from_u32(b).unwrap()
            } else {
                next += 1;
                char::from_u32(next - 1).unwrap()
            }
        })
        .collect()
}

pub fn spell(piece: &str, alphabet: &[char]) -> Vec<String> {
    piece.bytes().map(|b| alphabet[b as usize].to_string()).collect()
}

/// Recounts every pair from scratch each round.
pub fn brute_force_merges(corpus: &[String], vocab_size: usize, n_specials: usize) -> Vec<(String, String)> {
    let alphabet = byte_alphabet();
    let mut words: Vec<Vec<String>> =
        corpus.iter().flat_map(|t| pretokenize(t).into_iter().map(|p| spell(p, &alphabet))).collect();
    let mut vocab: HashSet<String> = alphabet.iter().map(|c| c.to_string()).collect();
    vocab.insert(END_OF_TEXT.to_string());
    let mut merges = Vec::new();
    while 256 + n_specials + merges.len() < vocab_size {
        let mut counts: HashMap<(String, String), u64> = HashMap::new();
        for w in &words {
            for p in w.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_default() += 1;
            }
        }
        let best = counts
            .into_iter()
            .filter(|((l, r), c)| *c >= 2 && !vocab.contains(&format!("{l}{r}")))
            .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)));
        let Some(((l, r), _)) = best else { break };
        let joined = format!("{l}{r}");
        for w in &mut words {
            *w = merge_pair(w, &l, &r);
        }
        vocab.insert(joined);
        merges.push((l, r));
    }
    merges
}

fn merge_pair(syms: &[String], l: &str, r: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
            out.push(format!("{l}{r}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

/// Reference encoder: within each pre-token, merge every occurrence of the
/// lowest-rank pair, left to right, until no ranked pair remains.
pub fn reference_encode(model: &TokenizerModel, text: &str) -> Vec<u32> {
    let alphabet = byte_alphabet();
    let ranks: HashMap<(String, String), usize> = model.merges().into_iter().enumerate().map(|(i, p)| (p, i)).collect();
    let mut out = Vec::new();
    for piece in pretokenize(text) {
        let mut syms = spell(piece, &alphabet);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min();
            let Some((_, l, r)) = best else { break };
            syms = merge_pair(&syms, &l, &r);
        }
        out.extend(syms.iter().map(|s| model.token_id(s).unwrap()));
    }
    out
}

/// Documents totalling 100..1000 bytes built from a few Kazakh and Latin
/// fragments, so that pair counts tie often.
pub fn small_corpus(rng: &mut ChaCha8Rng) -> Vec<String> {
    const PIECES: [&str; 10] = ["қаз", "ақ", "тіл", "дер", "ің", "ab", "ba", "aab", " ", "1"];
    let mut docs = Vec::new();
    let mut size = 0;
    let budget = rng.random_range(100..1000);
    while size < budget {
        let words: Vec<String> = (0..rng.random_range(1..8))
            .map(|_| (0..rng.random_range(1..4)).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect())
            .collect();
        let doc = words.join(" ");
        size += doc.len();
        docs.push(doc);
    }
    docs
}

pub fn random_utf8(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(0..40))
        .map(|_| loop {
            let cp = match rng.random_range(0..4) {
                0 => rng.random_range(0u32..0x80),
                1 => rng.random_range(0x400..0x530),
                2 => rng.random_range(0x80..0x10000),
                _ => rng.random_range(0x10000..0x110000),
            };
            if let Some(c) = char::from_u32(cp) {
                break c;
            }
        })
        .collect()
}

/// Distinct pseudo-words, each used twice, so every merge stays available
/// until the whole word is one token.
pub fn wide_corpus(n_words: usize) -> Vec<String> {
    let letters: Vec<char> = "абвгғдеёжзийкқлмнңоөпрстуұүфхһцчшщъыіьэюяә".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(50257);
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(n_words);
    while words.len() < n_words {
        let w: String = (0..rng.random_range(4..9)).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words.chunks(100).map(|c| format!("{} {}", c.join(" "), c.join(" "))).collect()
}

/// Two synthetic languages with disjoint scripts and morphology: Cyrillic
/// stems with stacked suffixes, and Latin stems with a prefix system.
pub fn language(cyrillic: bool, seed: u64, n_sentences: usize) -> String {
    let (stems, affixes): (&[&str], &[&str]) = if cyrillic {
        (&["жаз", "оқы", "бар", "кел", "сөйле", "біл", "қара", "ойла"], &["ушы", "лар", "ымыз", "да", "ған", "ды"])
    } else {
        (&["tova", "miru", "sela", "kopa", "ranu", "vidi", "pela", "lomu"], &["ex", "ob", "ip", "ut", "ak", "en"])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let word = |rng: &mut ChaCha8Rng| {
        let stem = stems[rng.random_range(0..stems.len())];
        let affs: String = (0..rng.random_range(0..3)).map(|_| affixes[rng.random_range(0..affixes.len())]).collect();
        if cyrillic {
            format!("{stem}{affs}")
        } else {
            format!("{affs}{stem}")
        }
    };
    (0..n_sentences)
        .map(|_| (0..rng.random_range(4..10)).map(|_| word(&mut rng)).collect::<Vec<_>>().join(" ") + ".")
        .collect::<Vec<_>>()
        .join("\n")
}

// ---- model ----

pub fn grad_cfg(n_kv_heads: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 64,
        n_layers: 2,
        hidden: 16,
        n_heads: 2,
        n_kv_heads: Some(n_kv_heads),
        intermediate: 56,
        context_len: 16,
        rope_base: 10_000.0,
        norm_eps: 1e-5,
    }
}

pub const GRAD_IDS: [u32; 9] = [3, 17, 42, 5, 63, 0, 17, 29, 8];

/// Largest relative error between the analytic gradient and a central
/// difference (step 1e-4, f64) over every parameter.
pub fn max_relative_error(cfg: ModelConfig, std: f64, ids: &[u32]) -> (f64, String) {
    let params = Parameters::<f64>::init(&cfg, 11, std);
    let model = Transformer::new(cfg.clone(), params).unwrap();
    let (_, grads) = model.loss_and_grad(ids, 1.0).unwrap();
    let specs = Parameters::<f64>::specs(&cfg);
    let h = 1e-4;
    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (ti, spec) in specs.iter().enumerate() {
        for j in 0..spec.len() {
            let orig = probe.params.tensors()[ti][j];
            probe.params.tensors_mut()[ti][j] = orig + h;
            let up = probe.loss(ids).unwrap();
            probe.params.tensors_mut()[ti][j] = orig - h;
            let down = probe.loss(ids).unwrap();
            probe.params.tensors_mut()[ti][j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors()[ti][j];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            if rel > worst.0 {
                worst = (rel, format!("{}[{j}] analytic {analytic:e} numeric {numeric:e}", spec.name));
            }
        }
    }
    worst
}

/// Closed-form parameter count, evaluated independently of the library.
pub fn closed_form_params(vocab: u64, layers: u64, hidden: u64, heads: u64, kv_heads: u64, inter: u64) -> u64 {
    let kv_dim = hidden / heads * kv_heads;
    let attn = 2 * hidden * hidden + 2 * hidden * kv_dim;
    let ffn = 3 * hidden * inter;
    vocab * hidden + layers * (attn + ffn + 2 * hidden) + hidden
}

// ---- trainer ----

/// Textbook AdamW on one scalar, written independently of the library.
pub fn scalar_adamw(theta0: f64, grads: &[f64], lrs: &[f64], cfg: &OptimizerConfig, decay: bool) -> f64 {
    let (mut theta, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
    for (i, (&g, &lr)) in grads.iter().zip(lrs).enumerate() {
        let t = (i + 1) as i32;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1.powi(t));
        let v_hat = v / (1.0 - cfg.beta2.powi(t));
        let wd = if decay { cfg.weight_decay } else { 0.0 };
        theta -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + wd * theta);
    }
    theta
}

/// Smallest legal model; only the first embedding entry and the first
/// attention-norm gain are exercised by the scalar comparison.
pub fn one_param_cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 1,
        n_layers: 1,
        hidden: 2,
        n_heads: 1,
        n_kv_heads: None,
        intermediate: 1,
        context_len: 2,
        rope_base: 10_000.0,
        norm_eps: 1e-5,
    }
}

pub fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig { vocab_size: vocab, ..ModelConfig::preset("tiny").unwrap() }
}

pub fn random_blocks(vocab: usize, n: usize, len: usize, seed: u64) -> BlockFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BlockFile {
        block_len: len,
        vocab_size: vocab,
        ids: (0..n * len).map(|_| rng.random_range(0..vocab as u32)).collect(),
    }
}

/// Trains a fresh tiny model without weight decay.
pub fn train_tiny(
    blocks: &BlockFile,
    vocab: usize,
    batch: usize,
    steps: u64,
    peak_lr: f64,
    seed: u64,
) -> Vec<StepRecord> {
    let mut model = Transformer::<f32>::init(tiny(vocab), seed).unwrap();
    let opt = OptimizerConfig { weight_decay: 0.0, ..OptimizerConfig::new(peak_lr, steps) };
    let plan = BatchPlan { n_blocks: blocks.block_count(), batch_size: batch, seed };
    let mut state = OptimizerState::new(&model.params);
    train(&mut model, blocks, &opt, &plan, &mut state, |_, _, _| Ok(())).unwrap()
}

pub fn trace_bits(t: &[StepRecord]) -> Vec<(u64, u64)> {
    t.iter().map(|r| (r.loss.to_bits(), r.grad_norm.to_bits())).collect()
}

// ---- eval ----

pub fn byte_tokenizer() -> TokenizerModel {
    TokenizerModel::from_merges(&[], &eot()).unwrap()
}

/// Logits computed by a closure of the prefix seen so far.
pub struct FnModel<F> {
    pub vocab: usize,
    pub context: usize,
    pub f: F,
}

impl<F: Fn(&[u32]) -> Vec<f64> + Sync> LanguageModel for FnModel<F> {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn context_len(&self) -> usize {
        self.context
    }
    fn logits(&self, ids: &[u32]) -> Result<Vec<f64>, EvalError> {
        Ok((1..=ids.len()).flat_map(|n| (self.f)(&ids[..n])).collect())
    }
}

pub fn uniform(vocab: usize) -> FnModel<impl Fn(&[u32]) -> Vec<f64> + Sync> {
    FnModel { vocab, context: 4096, f: move |_: &[u32]| vec![0.0; vocab] }
}

/// Adds `bonus` to the next token of any target sequence the prefix follows.
pub fn steering(vocab: usize, targets: Vec<Vec<u32>>, bonus: f64) -> FnModel<impl Fn(&[u32]) -> Vec<f64> + Sync> {
    FnModel {
        vocab,
        context: 4096,
        f: move |prefix: &[u32]| {
            let mut row = vec![0.0; vocab];
            for t in &targets {
                if t.len() > prefix.len() && t.starts_with(prefix) {
                    row[t[prefix.len()] as usize] = bonus;
                }
            }
            row
        },
    }
}

pub fn mc_items() -> Vec<McItem> {
    let questions = [
        ("Қазақстанның астанасы қай қала?", ["Астана", "Шымкент", "Тараз", "Өскемен"], 0),
        ("Абай қай ғасырда өмір сүрді?", ["XVII ғасыр", "XIX ғасыр", "XXI ғасыр", "X ғасыр"], 1),
        ("Ең ұзын өзен қайсы?", ["Жайық", "Шу", "Ертіс", "Іле"], 2),
        ("Жылда неше ай бар?", ["тоғыз", "жеті", "бес", "он екі"], 3),
        ("Балқаш деген не?", ["көл", "тау", "қала", "өзен"], 0),
    ];
    questions
        .iter()
        .enumerate()
        .map(|(i, (q, choices, gold))| McItem {
            id: format!("q{i}"),
            context: if i % 2 == 0 {
                "Қазақстан туралы сұрақтар.".into()
            } else {
                String::new()
            },
            question: q.to_string(),
            choices: choices.iter().map(|c| c.to_string()).collect(),
            gold: *gold,
        })
        .collect()
}

pub fn gold_sequences(tok: &TokenizerModel, task: &TaskConfig, items: &[McItem]) -> Vec<Vec<u32>> {
    items.iter().map(|it| tok.encode(&format!("{}{}", task.render_mc(it), it.choices[it.gold]))).collect()
}

pub const TOPICS: [&str; 7] = ["ғылым", "саясат", "спорт", "денсаулық", "саяхат", "ойын-сауық", "география"];
