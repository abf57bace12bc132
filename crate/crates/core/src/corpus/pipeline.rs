use std::collections::HashSet;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dedup::{Deduplicator, DigestSet};
use super::stages::clean_and_filter;
use super::{CorpusError, Document, Stage, StageConfig};

/// Per-run accounting. `output_count + Σ rejections + ingestion_errors`
/// always equals `input_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub input_count: u64,
    pub ingestion_errors: u64,
    pub per_stage_rejections: IndexMap<String, u64>,
    pub output_count: u64,
    pub pass_rate: f64,
}

impl Default for PipelineReport {
    fn default() -> Self {
        Self {
            input_count: 0,
            ingestion_errors: 0,
            per_stage_rejections: Stage::ALL.iter().map(|s| (s.name().to_string(), 0)).collect(),
            output_count: 0,
            pass_rate: 0.0,
        }
    }
}

impl PipelineReport {
    pub fn rejections(&self, stage: Stage) -> u64 {
        self.per_stage_rejections.get(stage.name()).copied().unwrap_or(0)
    }

    pub fn total_rejections(&self) -> u64 {
        self.per_stage_rejections.values().sum()
    }

    /// Builds a report from raw counts, e.g. to check the pass-rate formula
    /// against published totals.
    pub fn from_counts(input_count: u64, output_count: u64) -> Self {
        let mut r = Self { input_count, output_count, ..Default::default() };
        r.finish();
        r
    }

    fn reject(&mut self, stage: Stage) {
        *self.per_stage_rejections.entry(stage.name().to_string()).or_insert(0) += 1;
    }

    fn finish(&mut self) {
        self.pass_rate = if self.input_count > 0 { self.output_count as f64 / self.input_count as f64 } else { 0.0 };
    }
}

/// A raw record after ingestion checks.
enum Ingested {
    Doc(Document),
    Invalid,
}

struct Run<'a> {
    cfg: &'a StageConfig,
    dedup: Deduplicator<'a>,
    ids: HashSet<String>,
    report: PipelineReport,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a StageConfig, reference: &'a DigestSet, workers: usize) -> Result<Self, CorpusError> {
        cfg.validate()?;
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| CorpusError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            cfg,
            dedup: Deduplicator::new(reference),
            ids: HashSet::new(),
            report: PipelineReport::default(),
            pool,
        })
    }

    /// Runs one chunk through every stage and hands survivors to `emit` in
    /// input order.
    fn process_chunk(
        &mut self,
        chunk: Vec<Ingested>,
        mut emit: impl FnMut(Document) -> Result<(), CorpusError>,
    ) -> Result<(), CorpusError> {
        let cfg = self.cfg;
        let mut docs = Vec::with_capacity(chunk.len());
        for item in chunk {
            self.report.input_count += 1;
            match item {
                Ingested::Doc(d) if !d.id.is_empty() && self.ids.insert(d.id.clone()) => docs.push(d),
                _ => self.report.ingestion_errors += 1,
            }
        }
        let work = |d: Document| match clean_and_filter(&d.text, cfg) {
            Ok(text) => Ok(Document { text, ..d }),
            Err(stage) => Err(stage),
        };
        // Stages 1-8 are pure; `collect` keeps input order at any worker count.
        let cleaned: Vec<Result<Document, Stage>> = match &self.pool {
            Some(pool) => pool.install(|| docs.into_par_iter().map(work).collect()),
            None => docs.into_iter().map(work).collect(),
        };
        for r in cleaned {
            match r {
                Ok(doc) if self.dedup.admit(&doc.text) => {
                    self.report.output_count += 1;
                    emit(doc)?;
                }
                Ok(_) => self.report.reject(Stage::Dedup),
                Err(stage) => self.report.reject(stage),
            }
        }
        Ok(())
    }

    fn finish(mut self) -> (PipelineReport, DigestSet) {
        self.report.finish();
        (self.report, self.dedup.into_seen())
    }
}

/// Runs all nine stages over in-memory documents on the calling thread.
pub fn run_pipeline(
    docs: impl IntoIterator<Item = Document>,
    cfg: &StageConfig,
    reference: &DigestSet,
) -> Result<(Vec<Document>, PipelineReport), CorpusError> {
    run_pipeline_with_workers(docs, cfg, reference, 1)
}

pub fn run_pipeline_with_workers(
    docs: impl IntoIterator<Item = Document>,
    cfg: &StageConfig,
    reference: &DigestSet,
    workers: usize,
) -> Result<(Vec<Document>, PipelineReport), CorpusError> {
    let mut run = Run::new(cfg, reference, workers)?;
    let mut out = Vec::new();
    let chunk: Vec<Ingested> = docs.into_iter().map(Ingested::Doc).collect();
    run.process_chunk(chunk, |d| {
        out.push(d);
        Ok(())
    })?;
    Ok((out, run.finish().0))
}

const CHUNK: usize = 4096;

fn ingest_line(line: &[u8]) -> Ingested {
    let Ok(text) = std::str::from_utf8(line) else {
        return Ingested::Invalid;
    };
    match serde_json::from_str::<Document>(text) {
        Ok(d) => Ingested::Doc(d),
        Err(_) => Ingested::Invalid,
    }
}

/// Streams a JSON Lines corpus through the pipeline. Lines that are not
/// valid UTF-8 JSON documents, or that repeat an earlier id, are counted as
/// ingestion errors. Blank lines are ignored. Returns the report and the
/// digests of every emitted document.
pub fn clean_jsonl(
    mut input: impl BufRead,
    mut output: impl Write,
    cfg: &StageConfig,
    reference: &DigestSet,
    workers: usize,
) -> Result<(PipelineReport, DigestSet), CorpusError> {
    let mut run = Run::new(cfg, reference, workers)?;
    let mut buf = Vec::new();
    let mut chunk = Vec::with_capacity(CHUNK);
    let mut write = |d: Document| -> Result<(), CorpusError> {
        serde_json::to_writer(&mut output, &d).map_err(std::io::Error::from)?;
        output.write_all(b"\n")?;
        Ok(())
    };
    loop {
        buf.clear();
        let n = input.read_until(b'\n', &mut buf)?;
        if n > 0 {
            let line = buf.strip_suffix(b"\n").unwrap_or(&buf);
            if !line.iter().all(u8::is_ascii_whitespace) {
                chunk.push(ingest_line(line));
            }
        }
        if chunk.len() >= CHUNK || (n == 0 && !chunk.is_empty()) {
            run.process_chunk(std::mem::take(&mut chunk), &mut write)?;
        }
        if n == 0 {
            break;
        }
    }
    Ok(run.finish())
}
