use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

use super::{Stage, StageConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject,
}

impl Decision {
    fn from_keep(keep: bool) -> Self {
        if keep {
            Decision::Keep
        } else {
            Decision::Reject
        }
    }

    pub fn is_keep(self) -> bool {
        self == Decision::Keep
    }
}

pub fn normalize_nfc(text: &str) -> String {
    if is_nfc_quick(text.chars()) == IsNormalized::Yes {
        return text.to_string();
    }
    text.nfc().collect()
}

/// Removes every Unicode `Cc` code point except `\n` and `\t`.
///
/// Removing a control character can bring a base letter next to a combining
/// mark it was separated from, so the result is renormalized whenever
/// something was dropped. Without that the transform chain is not idempotent.
pub fn strip_control_chars(text: &str) -> String {
    let keep = |c: char| !c.is_control() || c == '\n' || c == '\t';
    if text.chars().all(keep) {
        return text.to_string();
    }
    let stripped: String = text.chars().filter(|&c| keep(c)).collect();
    normalize_nfc(&stripped)
}

/// Collapses horizontal whitespace runs to one space, caps newline runs at
/// two, and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\n' {
            let mut run = 1;
            while chars.peek() == Some(&'\n') {
                chars.next();
                run += 1;
            }
            out.push_str(if run >= 2 { "\n\n" } else { "\n" });
        } else if c.is_whitespace() {
            while matches!(chars.peek(), Some(&n) if n.is_whitespace() && n != '\n') {
                chars.next();
            }
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.trim_matches(char::is_whitespace).to_string()
}

/// Stages 1 to 3: the text rewrites.
pub fn clean_text(text: &str) -> String {
    collapse_whitespace(&strip_control_chars(&normalize_nfc(text)))
}

pub fn filter_min_length(text: &str, cfg: &StageConfig) -> Decision {
    Decision::from_keep(text.chars().count() >= cfg.min_length_chars)
}

const URL_PREFIXES: [&[u8]; 3] = [b"https://", b"http://", b"www."];

/// Case-insensitive count of `http://`, `https://` and `www.` occurrences.
pub fn count_urls(text: &str) -> usize {
    let lower = text.to_ascii_lowercase();
    let b = lower.as_bytes();
    let mut n = 0;
    let mut i = 0;
    while i < b.len() {
        let rest = &b[i..];
        let hit = URL_PREFIXES.iter().find(|p| rest.starts_with(p));
        match hit {
            Some(p) => {
                n += 1;
                i += p.len();
            }
            None => i += 1,
        }
    }
    n
}

pub fn filter_url_density(text: &str, cfg: &StageConfig) -> Decision {
    let urls = count_urls(text);
    if urls == 0 {
        return Decision::Keep;
    }
    // urls / chars * 1000 <= max, rearranged to stay exact for integer inputs.
    let chars = text.chars().count() as f64;
    Decision::from_keep(urls as f64 * 1000.0 <= cfg.max_urls_per_1000_chars * chars)
}

const MAX_TAG_BODY: usize = 100;

/// Counts spans of the form `<`, optional `/`, an ASCII letter, at most 100
/// non-`>` characters, then `>`.
pub fn count_html_tags(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut n = 0;
    let mut i = 0;
    while i < chars.len() {
        if chars[i] != '<' {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        if chars.get(j) == Some(&'/') {
            j += 1;
        }
        if !chars.get(j).is_some_and(|c| c.is_ascii_alphabetic()) {
            i += 1;
            continue;
        }
        j += 1;
        let body_start = j;
        while j < chars.len() && chars[j] != '>' && j - body_start < MAX_TAG_BODY {
            j += 1;
        }
        if chars.get(j) == Some(&'>') {
            n += 1;
            i = j + 1;
        } else {
            i += 1;
        }
    }
    n
}

pub fn filter_html_tags(text: &str, cfg: &StageConfig) -> Decision {
    Decision::from_keep(count_html_tags(text) <= cfg.max_html_tags)
}

/// Fraction of alphabetic code points that fall inside the target script.
/// Text with no letters at all is rejected.
pub fn filter_script_ratio(text: &str, cfg: &StageConfig) -> Decision {
    let (mut letters, mut in_script) = (0usize, 0usize);
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        letters += 1;
        if cfg.in_script(c) {
            in_script += 1;
        }
    }
    if letters == 0 {
        return Decision::Reject;
    }
    Decision::from_keep(in_script as f64 / letters as f64 >= cfg.min_language_script_ratio)
}

/// Marker-letter language check: the share of configured marker letters among
/// the target-script letters must reach `min_language_marker_ratio`.
pub fn filter_language_id(text: &str, cfg: &StageConfig) -> Decision {
    if cfg.marker_letters.is_empty() {
        return Decision::Keep;
    }
    let (mut script, mut markers) = (0usize, 0usize);
    for c in text.chars().filter(|&c| c.is_alphabetic() && cfg.in_script(c)) {
        script += 1;
        if cfg.marker_letters.contains(c) {
            markers += 1;
        }
    }
    if script == 0 {
        return Decision::Reject;
    }
    Decision::from_keep(markers as f64 / script as f64 >= cfg.min_language_marker_ratio)
}

/// Stages 1 to 8 on one document. Returns the cleaned text or the first
/// stage that rejected it.
pub(crate) fn clean_and_filter(text: &str, cfg: &StageConfig) -> Result<String, Stage> {
    let text = clean_text(text);
    type Filter = fn(&str, &StageConfig) -> Decision;
    let filters: [(Stage, Filter); 5] = [
        (Stage::MinLength, filter_min_length),
        (Stage::UrlDensity, filter_url_density),
        (Stage::HtmlTags, filter_html_tags),
        (Stage::ScriptRatio, filter_script_ratio),
        (Stage::LanguageId, filter_language_id),
    ];
    for (stage, f) in filters {
        if !f(&text, cfg).is_keep() {
            return Err(stage);
        }
    }
    Ok(text)
}
