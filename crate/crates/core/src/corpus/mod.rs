//! Document cleaning and exact deduplication.
//!
//! Stages run in a fixed order: NFC normalization, control-character removal,
//! whitespace collapsing, minimum length, URL density, HTML tag count, script
//! ratio, language identification and MD5 deduplication. The first three
//! rewrite text, the rest either keep or reject a document.

mod dedup;
mod pipeline;
mod stages;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dedup::{md5_digest, Deduplicator, Digest, DigestOrigin, DigestSet, HASHSET_MAGIC};
pub use pipeline::{clean_jsonl, run_pipeline, run_pipeline_with_workers, PipelineReport};
pub use stages::{
    clean_text, collapse_whitespace, count_html_tags, count_urls, filter_html_tags, filter_language_id,
    filter_min_length, filter_script_ratio, filter_url_density, normalize_nfc, strip_control_chars, Decision,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid stage config: {0}")]
    Config(String),
    #[error("reference hash file {path}: {reason}")]
    Reference { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
}

/// Filtering stages in pipeline order. Only these can reject a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    MinLength,
    UrlDensity,
    HtmlTags,
    ScriptRatio,
    LanguageId,
    Dedup,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::MinLength, Stage::UrlDensity, Stage::HtmlTags, Stage::ScriptRatio, Stage::LanguageId, Stage::Dedup];

    pub fn name(self) -> &'static str {
        match self {
            Stage::MinLength => "min_length",
            Stage::UrlDensity => "url_density",
            Stage::HtmlTags => "html_tags",
            Stage::ScriptRatio => "script_ratio",
            Stage::LanguageId => "language_id",
            Stage::Dedup => "dedup",
        }
    }
}

/// The nine Kazakh-specific Cyrillic letters, upper and lower case.
pub const KAZAKH_MARKERS: &str = "ӘәҒғҚқҢңӨөҰұҮүҺһІі";

/// Thresholds for the filtering stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub min_length_chars: usize,
    pub max_urls_per_1000_chars: f64,
    pub max_html_tags: usize,
    pub min_language_script_ratio: f64,
    pub min_language_marker_ratio: f64,
    /// Inclusive code point ranges that make up the target script.
    pub script_ranges: Vec<(u32, u32)>,
    /// Letters that distinguish the target language inside its script.
    pub marker_letters: String,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            min_length_chars: 50,
            max_urls_per_1000_chars: 5.0,
            max_html_tags: 5,
            min_language_script_ratio: 0.7,
            min_language_marker_ratio: 0.02,
            // Cyrillic and Cyrillic Supplement.
            script_ranges: vec![(0x0400, 0x04FF), (0x0500, 0x052F)],
            marker_letters: KAZAKH_MARKERS.to_string(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Config(m.to_string()));
        if self.min_length_chars < 1 {
            return bad("min_length_chars must be >= 1");
        }
        if self.max_urls_per_1000_chars.is_nan() || self.max_urls_per_1000_chars < 0.0 {
            return bad("max_urls_per_1000_chars must be >= 0");
        }
        for (name, r) in [
            ("min_language_script_ratio", self.min_language_script_ratio),
            ("min_language_marker_ratio", self.min_language_marker_ratio),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(CorpusError::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if self.script_ranges.iter().any(|&(lo, hi)| lo > hi) {
            return bad("script range with lo > hi");
        }
        Ok(())
    }

    pub(crate) fn in_script(&self, c: char) -> bool {
        let cp = c as u32;
        self.script_ranges.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        StageConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_out_of_range_ratios() {
        let cfg = StageConfig { min_language_script_ratio: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = StageConfig { min_length_chars: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = StageConfig { max_urls_per_1000_chars: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn partial_config_json_fills_defaults() {
        let cfg: StageConfig = serde_json::from_str(r#"{"min_length_chars": 10}"#).unwrap();
        assert_eq!(cfg.min_length_chars, 10);
        assert_eq!(cfg.max_html_tags, 5);
        assert_eq!(cfg.marker_letters.chars().count(), 18);
    }
}
