use serde::{Deserialize, Serialize};

use super::{TokenizerError, TokenizerModel};

/// Tokens per whitespace-separated word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FertilityReport {
    pub tokenizer_name: String,
    pub token_count: u64,
    pub word_count: u64,
    pub fertility: f64,
}

impl FertilityReport {
    pub fn new(tokenizer_name: &str, token_count: u64, word_count: u64) -> Result<Self, TokenizerError> {
        if word_count == 0 {
            return Err(TokenizerError::NoWords);
        }
        Ok(Self {
            tokenizer_name: tokenizer_name.to_string(),
            token_count,
            word_count,
            fertility: token_count as f64 / word_count as f64,
        })
    }
}

pub fn fertility(model: &TokenizerModel, name: &str, text: &str) -> Result<FertilityReport, TokenizerError> {
    let words = text.split_whitespace().count() as u64;
    if words == 0 {
        return Err(TokenizerError::NoWords);
    }
    FertilityReport::new(name, model.encode(text).len() as u64, words)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_arithmetic() {
        let r = FertilityReport::new("t", 10, 4).unwrap();
        assert_eq!(r.fertility, 2.5);
        assert!(FertilityReport::new("t", 10, 0).is_err());
    }

    #[test]
    fn whole_word_tokens_give_fertility_one() {
        let m = crate::tokenizer::train_bpe(&["ab cd ab cd ab cd"], 300, &[]).unwrap();
        // "ab" plus the space-prefixed " cd" and " ab" are all single tokens.
        let r = fertility(&m, "m", "ab cd ab").unwrap();
        assert_eq!((r.token_count, r.word_count), (3, 3));
        assert_eq!(r.fertility, 1.0);
    }

    #[test]
    fn whitespace_only_text_is_an_error() {
        let m = crate::tokenizer::train_bpe(&["ab ab"], 260, &[]).unwrap();
        assert!(matches!(fertility(&m, "m", " \n\t "), Err(TokenizerError::NoWords)));
    }
}
