use std::collections::HashSet;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score_candidate, EvalError, LanguageModel};
use crate::tokenizer::TokenizerModel;

pub const DEFAULT_MC_TEMPLATE: &str = "«{context}»\n{question}\n";
pub const DEFAULT_MC_TEMPLATE_NO_CONTEXT: &str = "{question}\n";
pub const DEFAULT_CLS_TEMPLATE: &str = "{text}\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McItem {
    pub id: String,
    #[serde(default)]
    pub context: String,
    pub question: String,
    pub choices: Vec<String>,
    pub gold: usize,
}

impl McItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.choices.len() < 2 {
            return Err(EvalError::InvalidItem(format!("{} has {} choices", self.id, self.choices.len())));
        }
        if self.gold >= self.choices.len() {
            return Err(EvalError::InvalidItem(format!("{} gold index {} out of range", self.id, self.gold)));
        }
        if self.choices.iter().any(|c| c.is_empty()) {
            return Err(EvalError::InvalidItem(format!("{} has an empty choice", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsItem {
    pub id: String,
    pub text: String,
    #[serde(rename = "label")]
    pub gold_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    Classification,
}

/// Task description read from JSON. Templates use `{context}`, `{question}`
/// and `{text}` placeholders; `separator` goes between prompt and candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub template: Option<String>,
    /// Multiple choice only: template for items with an empty context.
    #[serde(default)]
    pub template_no_context: Option<String>,
    #[serde(default)]
    pub separator: String,
    /// Classification only.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl TaskConfig {
    pub fn multiple_choice(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: TaskKind::MultipleChoice,
            template: None,
            template_no_context: None,
            separator: String::new(),
            labels: Vec::new(),
        }
    }

    pub fn classification(name: &str, labels: &[&str]) -> Self {
        Self {
            kind: TaskKind::Classification,
            labels: labels.iter().map(|s| s.to_string()).collect(),
            ..Self::multiple_choice(name)
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, EvalError> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        match self.kind {
            TaskKind::MultipleChoice => {
                if !self.mc_template(false).contains("{question}") {
                    return bad("multiple-choice template lacks {question}".into());
                }
            }
            TaskKind::Classification => {
                if !self.cls_template().contains("{text}") {
                    return bad("classification template lacks {text}".into());
                }
                if self.labels.len() < 2 {
                    return bad(format!("need at least 2 labels, got {}", self.labels.len()));
                }
                let mut seen = HashSet::new();
                if let Some(dup) = self.labels.iter().find(|l| !seen.insert(l.as_str())) {
                    return bad(format!("duplicate label {dup:?}"));
                }
                if self.labels.iter().any(|l| l.is_empty()) {
                    return bad("empty label".into());
                }
            }
        }
        Ok(())
    }

    fn mc_template(&self, empty_context: bool) -> &str {
        match (empty_context, &self.template_no_context, &self.template) {
            (true, Some(t), _) => t,
            (true, None, None) => DEFAULT_MC_TEMPLATE_NO_CONTEXT,
            (_, _, Some(t)) => t,
            (false, _, None) => DEFAULT_MC_TEMPLATE,
        }
    }

    fn cls_template(&self) -> &str {
        self.template.as_deref().unwrap_or(DEFAULT_CLS_TEMPLATE)
    }

    pub fn render_mc(&self, item: &McItem) -> String {
        let t = self.mc_template(item.context.is_empty());
        let prompt = t.replace("{context}", &item.context).replace("{question}", &item.question);
        prompt + &self.separator
    }

    pub fn render_cls(&self, item: &ClsItem) -> String {
        self.cls_template().replace("{text}", &item.text) + &self.separator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    /// Length-normalized score per choice or label, in input order.
    pub scores: Vec<f64>,
    pub predicted: usize,
    pub gold: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub model: String,
    /// Parameter count of the evaluated model, used by the scaling report.
    #[serde(default)]
    pub parameters: u64,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// Expected accuracy of uniform guessing over the scored items.
    pub random_baseline: f64,
    pub n_skipped: usize,
    pub skipped: Vec<SkippedItem>,
    pub per_item: Vec<ItemResult>,
}

impl EvalReport {
    fn build(task: &str, model: &str, outcomes: Vec<Result<(ItemResult, usize), SkippedItem>>) -> Self {
        let mut per_item = Vec::new();
        let mut skipped = Vec::new();
        let mut inv_sum = 0.0;
        let mut option_counts = HashSet::new();
        for o in outcomes {
            match o {
                Ok((r, n_options)) => {
                    inv_sum += 1.0 / n_options as f64;
                    option_counts.insert(n_options);
                    per_item.push(r);
                }
                Err(s) => skipped.push(s),
            }
        }
        let n_items = per_item.len();
        let n_correct = per_item.iter().filter(|r| r.correct).count();
        let ratio = |a: f64| if n_items == 0 { 0.0 } else { a / n_items as f64 };
        Self {
            task: task.into(),
            model: model.into(),
            parameters: 0,
            n_items,
            n_correct,
            accuracy: ratio(n_correct as f64),
            // Exact 1/k when every item offers k options.
            random_baseline: match option_counts.len() {
                1 => 1.0 / *option_counts.iter().next().unwrap() as f64,
                _ => ratio(inv_sum),
            },
            n_skipped: skipped.len(),
            skipped,
            per_item,
        }
    }

    /// Adds unparseable dataset lines to the skipped list.
    pub fn with_unparsed(mut self, unparsed: Vec<SkippedItem>) -> Self {
        self.skipped.extend(unparsed);
        self.n_skipped = self.skipped.len();
        self
    }
}

/// Index of the highest score; the lowest index wins ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn score_options<M: LanguageModel + ?Sized>(
    model: &M,
    tokenizer: &TokenizerModel,
    id: &str,
    prompt: &str,
    options: &[String],
    gold: usize,
) -> Result<(ItemResult, usize), SkippedItem> {
    let scores = options
        .iter()
        .map(|c| score_candidate(model, tokenizer, prompt, c).map(|s| s.normalized))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| SkippedItem { id: id.into(), reason: e.to_string() })?;
    let predicted = argmax(&scores);
    Ok((ItemResult { id: id.into(), scores, predicted, gold, correct: predicted == gold }, options.len()))
}

/// Scores every choice of every item and predicts the best. Invalid items
/// and items that overflow the context are skipped and listed. Items are
/// scored in parallel; the report keeps input order.
pub fn evaluate_mc<M: LanguageModel + ?Sized>(
    model: &M,
    model_name: &str,
    tokenizer: &TokenizerModel,
    items: &[McItem],
    task: &TaskConfig,
) -> Result<EvalReport, EvalError> {
    if task.kind != TaskKind::MultipleChoice {
        return Err(EvalError::Config(format!("{} is not a multiple-choice task", task.name)));
    }
    task.validate()?;
    let outcomes = items
        .par_iter()
        .map(|item| {
            item.validate().map_err(|e| SkippedItem { id: item.id.clone(), reason: e.to_string() })?;
            score_options(model, tokenizer, &item.id, &task.render_mc(item), &item.choices, item.gold)
        })
        .collect();
    Ok(EvalReport::build(&task.name, model_name, outcomes))
}

/// Scores each label string as a candidate after the rendered text.
pub fn evaluate_classification<M: LanguageModel + ?Sized>(
    model: &M,
    model_name: &str,
    tokenizer: &TokenizerModel,
    items: &[ClsItem],
    task: &TaskConfig,
) -> Result<EvalReport, EvalError> {
    if task.kind != TaskKind::Classification {
        return Err(EvalError::Config(format!("{} is not a classification task", task.name)));
    }
    task.validate()?;
    let outcomes = items
        .par_iter()
        .map(|item| {
            let gold = task.labels.iter().position(|l| *l == item.gold_label).ok_or_else(|| SkippedItem {
                id: item.id.clone(),
                reason: format!("label {:?} not in the task's label set", item.gold_label),
            })?;
            score_options(model, tokenizer, &item.id, &task.render_cls(item), &task.labels, gold)
        })
        .collect();
    Ok(EvalReport::build(&task.name, model_name, outcomes))
}

/// Reads JSON Lines. Lines that fail to parse are returned as skipped items
/// named by line number; blank lines are ignored.
fn read_jsonl<T: for<'de> Deserialize<'de>>(r: impl BufRead) -> Result<(Vec<T>, Vec<SkippedItem>), EvalError> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(item) => items.push(item),
            Err(e) => skipped.push(SkippedItem { id: format!("line {}", i + 1), reason: e.to_string() }),
        }
    }
    Ok((items, skipped))
}

pub fn read_mc_items(r: impl BufRead) -> Result<(Vec<McItem>, Vec<SkippedItem>), EvalError> {
    read_jsonl(r)
}

pub fn read_cls_items(r: impl BufRead) -> Result<(Vec<ClsItem>, Vec<SkippedItem>), EvalError> {
    read_jsonl(r)
}
