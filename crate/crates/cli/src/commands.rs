use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::anyhow;
use serde::Deserialize;
use tilkit::corpus::{clean_jsonl, CorpusError, DigestOrigin, DigestSet, StageConfig};
use tilkit::eval::{
    evaluate_classification, evaluate_mc, read_cls_items, read_mc_items, scaling_report, write_scaling_csv, EvalReport,
    TaskConfig, TaskKind,
};
use tilkit::io::{write_atomic, write_atomic_bytes};
use tilkit::model::Checkpoint;
use tilkit::tokenizer::{fertility, pretokenize_corpus, train_bpe, TokenizerError, TokenizerModel, END_OF_TEXT};
use tilkit::trainer::{run_training, RunConfig, TrainError};

use crate::manifest::{beside, RunManifest};
use crate::{
    CleanArgs, Cli, Command, EvalArgs, FertilityArgs, PretokenizeArgs, ReportArgs, TrainArgs, TrainTokenizerArgs,
};

/// A failure and whether it came from configuration (exit 2) or data (exit 1).
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    pub fn inner(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) => e,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 1,
        }
    }
}

trait Classify<T> {
    fn config(self, what: impl Fn() -> String) -> Result<T, Failure>;
    fn data(self, what: impl Fn() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self, what: impl Fn() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into().context(what())))
    }

    fn data(self, what: impl Fn() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into().context(what())))
    }
}

fn tokenizer_failure(e: TokenizerError, what: String) -> Failure {
    let config = matches!(e, TokenizerError::VocabTooSmall { .. } | TokenizerError::BlockLen(_));
    let e = anyhow::Error::from(e).context(what);
    if config {
        Failure::Config(e)
    } else {
        Failure::Data(e)
    }
}

fn default_workers() -> usize {
    std::env::var("TILKIT_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Clean(a) => clean(a, seed),
        Command::TrainTokenizer(a) => train_tokenizer(a, seed),
        Command::Fertility(a) => fertility_cmd(a, seed),
        Command::Pretokenize(a) => pretokenize(a, seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Eval(a) => eval(a, seed),
        Command::Report(a) => report(a, seed),
    }
}

fn clean(a: &CleanArgs, seed: u64) -> Result<(), Failure> {
    let mut manifest = RunManifest::start("clean", seed);
    let cfg: StageConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).config(|| format!("reading {}", shown(p)))?;
            serde_json::from_str(&text).config(|| format!("parsing {}", shown(p)))?
        }
        None => StageConfig::default(),
    };
    cfg.validate().config(|| "stage config".into())?;
    manifest.config_path = a.config.clone();
    let reference = match &a.ref_hashes {
        Some(p) => DigestSet::load(p).data(|| format!("loading reference hashes {}", shown(p)))?,
        None => DigestSet::new(DigestOrigin::ExternalReference),
    };
    let input = File::open(&a.input).data(|| format!("opening {}", shown(&a.input)))?;
    let workers = a.workers.unwrap_or_else(default_workers);

    let mut outcome = None;
    let written = write_atomic(&a.output, |w| match clean_jsonl(BufReader::new(input), w, &cfg, &reference, workers) {
        Ok(v) => {
            outcome = Some(Ok(v));
            Ok(())
        }
        Err(e) => {
            outcome = Some(Err(e));
            Err(std::io::Error::other("cleaning failed"))
        }
    });
    let (report, digests) = match outcome {
        Some(Ok(v)) => v,
        Some(Err(CorpusError::Config(m))) => return Err(Failure::Config(anyhow!(m))),
        Some(Err(e)) => return Err(Failure::Data(anyhow::Error::from(e).context("cleaning"))),
        None => {
            written.data(|| format!("writing {}", shown(&a.output)))?;
            return Err(Failure::Data(anyhow!("cleaning did not run")));
        }
    };
    written.data(|| format!("writing {}", shown(&a.output)))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic_bytes(&a.report, json.as_bytes()).data(|| format!("writing {}", shown(&a.report)))?;
    manifest.outputs = vec![a.output.clone(), a.report.clone()];
    if let Some(h) = &a.hashes_out {
        digests.save_hex(h).data(|| format!("writing {}", shown(h)))?;
        manifest.outputs.push(h.clone());
    }
    manifest.inputs = std::iter::once(a.input.clone()).chain(a.ref_hashes.clone()).collect();
    eprintln!("clean: {} in, {} kept, pass rate {:.4}", report.input_count, report.output_count, report.pass_rate);
    manifest.finish(&beside(&a.output)).data(|| "writing manifest".into())
}

#[derive(Deserialize)]
struct TextRecord {
    text: String,
}

fn read_texts(path: &Path) -> Result<Vec<String>, Failure> {
    let file = File::open(path).data(|| format!("opening {}", shown(path)))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.data(|| format!("reading {}", shown(path)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(&line).data(|| format!("{} line {}", shown(path), i + 1))?;
        out.push(rec.text);
    }
    Ok(out)
}

fn load_tokenizer(path: &Path) -> Result<TokenizerModel, Failure> {
    TokenizerModel::load(path).map_err(|e| tokenizer_failure(e, format!("loading tokenizer {}", shown(path))))
}

fn train_tokenizer(a: &TrainTokenizerArgs, seed: u64) -> Result<(), Failure> {
    let mut manifest = RunManifest::start("train-tokenizer", seed);
    let texts = read_texts(&a.corpus)?;
    let model = train_bpe(&texts, a.vocab_size, &[END_OF_TEXT.to_string()])
        .map_err(|e| tokenizer_failure(e, "training tokenizer".into()))?;
    model.save(&a.out).map_err(|e| tokenizer_failure(e, format!("writing {}", shown(&a.out))))?;
    if model.vocab_size() < a.vocab_size {
        eprintln!(
            "train-tokenizer: corpus supports only {} merges; vocabulary is {} of {} requested",
            model.num_merges(),
            model.vocab_size(),
            a.vocab_size
        );
    }
    manifest.inputs = vec![a.corpus.clone()];
    manifest.outputs = vec![a.out.clone()];
    manifest.finish(&beside(&a.out)).data(|| "writing manifest".into())
}

fn fertility_cmd(a: &FertilityArgs, seed: u64) -> Result<(), Failure> {
    let mut manifest = RunManifest::start("fertility", seed);
    let text = std::fs::read_to_string(&a.text).data(|| format!("reading {}", shown(&a.text)))?;
    let mut reports = Vec::new();
    for p in &a.tokenizers {
        let model = load_tokenizer(p)?;
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let r = fertility(&model, &name, &text).map_err(|e| tokenizer_failure(e, "measuring fertility".into()))?;
        eprintln!("fertility: {name} {:.4}", r.fertility);
        reports.push(r);
    }
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    write_atomic_bytes(&a.out, json.as_bytes()).data(|| format!("writing {}", shown(&a.out)))?;
    manifest.inputs = a.tokenizers.iter().cloned().chain([a.text.clone()]).collect();
    manifest.outputs = vec![a.out.clone()];
    manifest.finish(&beside(&a.out)).data(|| "writing manifest".into())
}

fn pretokenize(a: &PretokenizeArgs, seed: u64) -> Result<(), Failure> {
    let mut manifest = RunManifest::start("pretokenize", seed);
    let model = load_tokenizer(&a.tokenizer)?;
    let texts = read_texts(&a.corpus)?;
    let blocks =
        pretokenize_corpus(&model, &texts, a.block_len).map_err(|e| tokenizer_failure(e, "packing blocks".into()))?;
    if blocks.block_count() == 0 {
        return Err(Failure::Data(anyhow!("corpus is shorter than one block of {} tokens", a.block_len)));
    }
    blocks.save(&a.out).data(|| format!("writing {}", shown(&a.out)))?;
    eprintln!("pretokenize: {} blocks of {} tokens", blocks.block_count(), a.block_len);
    manifest.inputs = vec![a.tokenizer.clone(), a.corpus.clone()];
    manifest.outputs = vec![a.out.clone()];
    manifest.finish(&beside(&a.out)).data(|| "writing manifest".into())
}

fn train_failure(e: TrainError) -> Failure {
    if e.is_config_error() {
        Failure::Config(anyhow::Error::from(e).context("training"))
    } else {
        Failure::Data(anyhow::Error::from(e).context("training"))
    }
}

fn train(a: &TrainArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&a.run_config).map_err(|e| match e {
        TrainError::Io(_) | TrainError::Json(_) => {
            Failure::Config(anyhow::Error::from(e).context(shown(&a.run_config)))
        }
        other => train_failure(other),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let mut manifest = RunManifest::start("train", cfg.seed);
    manifest.config_path = Some(a.run_config.clone());
    let summary = run_training(&cfg, a.resume.as_deref()).map_err(train_failure)?;
    eprintln!(
        "train: {} steps, final loss {:.4}, {} tokens, {:.2} tokens/parameter",
        summary.steps,
        summary.final_loss.unwrap_or(f64::NAN),
        summary.tokens_seen,
        summary.tokens_per_parameter
    );
    manifest.inputs = std::iter::once(cfg.blocks.clone()).chain(a.resume.clone()).collect();
    manifest.outputs = vec![summary.checkpoint.clone(), summary.loss_trace.clone()];
    let summary_path = cfg.output_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic_bytes(&summary_path, json.as_bytes()).data(|| "writing summary".into())?;
    manifest.outputs.push(summary_path);
    manifest.finish(&cfg.output_dir.join("manifest.json")).data(|| "writing manifest".into())
}

fn eval(a: &EvalArgs, seed: u64) -> Result<(), Failure> {
    let mut manifest = RunManifest::start("eval", seed);
    let task = TaskConfig::load(&a.task_config).config(|| format!("task config {}", shown(&a.task_config)))?;
    manifest.config_path = Some(a.task_config.clone());
    let tokenizer = load_tokenizer(&a.tokenizer)?;
    let ckpt = Checkpoint::load(&a.checkpoint).data(|| format!("loading {}", shown(&a.checkpoint)))?;
    let parameters = ckpt.config.count_parameters();
    let model = ckpt.into_model().data(|| "building model".into())?;
    if tokenizer.vocab_size() > model.cfg.vocab_size {
        return Err(Failure::Config(anyhow!(
            "tokenizer has {} ids but the model only {}",
            tokenizer.vocab_size(),
            model.cfg.vocab_size
        )));
    }
    let model_name = a.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dataset = BufReader::new(File::open(&a.dataset).data(|| format!("opening {}", shown(&a.dataset)))?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.workers.unwrap_or_else(default_workers))
        .build()
        .config(|| "worker pool".into())?;
    let report: EvalReport = pool
        .install(|| match task.kind {
            TaskKind::MultipleChoice => {
                let (items, bad) = read_mc_items(dataset)?;
                evaluate_mc(&model, &model_name, &tokenizer, &items, &task).map(|r| r.with_unparsed(bad))
            }
            TaskKind::Classification => {
                let (items, bad) = read_cls_items(dataset)?;
                evaluate_classification(&model, &model_name, &tokenizer, &items, &task).map(|r| r.with_unparsed(bad))
            }
        })
        .data(|| "evaluating".into())?;
    let report = EvalReport { parameters, ..report };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic_bytes(&a.out, json.as_bytes()).data(|| format!("writing {}", shown(&a.out)))?;
    eprintln!(
        "eval: {} on {}: accuracy {:.4} over {} items ({} skipped), baseline {:.4}",
        report.model, report.task, report.accuracy, report.n_items, report.n_skipped, report.random_baseline
    );
    manifest.inputs = vec![a.checkpoint.clone(), a.tokenizer.clone(), a.dataset.clone()];
    manifest.outputs = vec![a.out.clone()];
    manifest.finish(&beside(&a.out)).data(|| "writing manifest".into())
}

fn report(a: &ReportArgs, seed: u64) -> Result<(), Failure> {
    let mut manifest = RunManifest::start("report", seed);
    let mut entries = Vec::new();
    for p in &a.evals {
        let text = std::fs::read_to_string(p).data(|| format!("reading {}", shown(p)))?;
        let r: EvalReport = serde_json::from_str(&text).data(|| format!("parsing {}", shown(p)))?;
        entries.push((r.parameters, r));
    }
    let rows = scaling_report(&entries);
    write_scaling_csv(&a.out, &rows).data(|| format!("writing {}", shown(&a.out)))?;
    manifest.inputs = a.evals.clone();
    manifest.outputs = vec![a.out.clone()];
    manifest.finish(&beside(&a.out)).data(|| "writing manifest".into())
}
