use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use rayon::prelude::*;

use super::pretok::pretokenize;
use super::{ByteMap, TokenizerError, TokenizerModel};

type Pair = (u32, u32);

/// Heap entry ordered by count, then by the smaller (left, right) spelling.
#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: Reverse<String>,
    right: Reverse<String>,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.count, &self.left, &self.right).cmp(&(other.count, &other.left, &other.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const MIN_PAIR_FREQUENCY: u64 = 2;

/// Counts distinct pre-tokens over the corpus. Counting is sharded across
/// the rayon pool; the reduced totals do not depend on the sharding.
fn count_pieces<S: AsRef<str> + Sync>(corpus: &[S]) -> HashMap<String, u64> {
    corpus
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<String, u64>, text| {
            for p in pretokenize(text.as_ref()) {
                *acc.entry(p.to_string()).or_insert(0) += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        })
}

struct Word {
    symbols: Vec<u32>,
    freq: u64,
}

impl Word {
    fn pairs(&self) -> impl Iterator<Item = Pair> + '_ {
        self.symbols.windows(2).map(|w| (w[0], w[1]))
    }

    /// Replaces non-overlapping occurrences of `pair`, scanning left to right.
    fn merge(&mut self, pair: Pair, new_id: u32) -> bool {
        let mut out = Vec::with_capacity(self.symbols.len());
        let mut i = 0;
        let mut changed = false;
        while i < self.symbols.len() {
            if i + 1 < self.symbols.len() && (self.symbols[i], self.symbols[i + 1]) == pair {
                out.push(new_id);
                i += 2;
                changed = true;
            } else {
                out.push(self.symbols[i]);
                i += 1;
            }
        }
        self.symbols = out;
        changed
    }
}

/// Trains a byte-level BPE model.
///
/// Pair frequencies count every adjacent position of every pre-token, weighted
/// by how often the pre-token occurs. Each round merges the most frequent pair;
/// ties go to the pair whose (left, right) spellings sort first. Training stops
/// at `vocab_size` or when no pair occurs at least twice. A pair whose
/// concatenation is already a token (or a special) is never merged, so every
/// merge adds exactly one vocabulary entry.
pub fn train_bpe<S: AsRef<str> + Sync>(
    corpus: &[S],
    vocab_size: usize,
    specials: &[String],
) -> Result<TokenizerModel, TokenizerError> {
    let minimum = 256 + specials.len();
    if vocab_size < minimum {
        return Err(TokenizerError::VocabTooSmall { vocab_size, minimum });
    }
    if corpus.is_empty() || corpus.iter().all(|t| t.as_ref().is_empty()) {
        return Err(TokenizerError::EmptyCorpus);
    }
    let target_merges = vocab_size - minimum;

    let bytes = ByteMap::new();
    let mut tokens: Vec<String> = (0..=255u8).map(|b| bytes.to_char(b).to_string()).collect();
    let mut known: HashSet<String> = tokens.iter().cloned().chain(specials.iter().cloned()).collect();

    let mut pieces: Vec<(String, u64)> = count_pieces(corpus).into_iter().collect();
    pieces.sort_unstable();
    let mut words: Vec<Word> =
        pieces.into_iter().map(|(p, freq)| Word { symbols: p.bytes().map(u32::from).collect(), freq }).collect();

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut where_: HashMap<Pair, Vec<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.pairs() {
            *counts.entry(p).or_insert(0) += w.freq;
            where_.entry(p).or_default().push(wi);
        }
    }

    let candidate = |tokens: &[String], pair: Pair, count: u64| Candidate {
        count,
        left: Reverse(tokens[pair.0 as usize].clone()),
        right: Reverse(tokens[pair.1 as usize].clone()),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> = counts.iter().map(|(&p, &c)| candidate(&tokens, p, c)).collect();

    let mut merges: Vec<(String, String)> = Vec::with_capacity(target_merges);
    let mut banned: HashSet<Pair> = HashSet::new();
    while merges.len() < target_merges {
        let Some(top) = heap.pop() else { break };
        if top.count < MIN_PAIR_FREQUENCY {
            break;
        }
        if counts.get(&top.pair).copied().unwrap_or(0) != top.count || banned.contains(&top.pair) {
            continue;
        }
        let pair = top.pair;
        let merged = format!("{}{}", tokens[pair.0 as usize], tokens[pair.1 as usize]);
        if known.contains(&merged) {
            banned.insert(pair);
            continue;
        }
        let new_id = tokens.len() as u32;
        merges.push((top.left.0, top.right.0));
        known.insert(merged.clone());
        tokens.push(merged);

        let mut affected = where_.remove(&pair).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        let mut touched: HashSet<Pair> = HashSet::new();
        for wi in affected {
            let w = &mut words[wi];
            if !w.pairs().any(|p| p == pair) {
                continue;
            }
            for p in w.pairs() {
                let c = counts.get_mut(&p).expect("counted pair");
                *c -= w.freq;
                touched.insert(p);
            }
            w.merge(pair, new_id);
            for p in w.pairs() {
                *counts.entry(p).or_insert(0) += w.freq;
                touched.insert(p);
                if p.0 == new_id || p.1 == new_id {
                    where_.entry(p).or_default().push(wi);
                }
            }
        }
        for p in touched {
            let c = counts[&p];
            if c == 0 {
                counts.remove(&p);
            } else if p != pair {
                heap.push(candidate(&tokens, p, c));
            }
        }
    }

    TokenizerModel::from_merges(&merges, specials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> String {
        x.to_string()
    }

    #[test]
    fn classic_example_under_lexicographic_tie_break() {
        // After (a,a), both (aa,a) and (a,b) occur twice; "a" < "aa" picks (a,b).
        let m = train_bpe(&["aaabdaaabac"], 256 + 3, &[]).unwrap();
        assert_eq!(m.merges(), [(s("a"), s("a")), (s("a"), s("b")), (s("aa"), s("ab"))]);
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let m = train_bpe(&["abcdef"], 300, &[s("<|endoftext|>")]).unwrap();
        assert_eq!(m.num_merges(), 0);
        assert_eq!(m.vocab_size(), 257);
    }

    #[test]
    fn configuration_errors() {
        assert!(matches!(train_bpe(&["abc"], 256, &[s("<|endoftext|>")]), Err(TokenizerError::VocabTooSmall { .. })));
        let empty: [&str; 0] = [];
        assert!(matches!(train_bpe(&empty, 300, &[]), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(train_bpe(&[""], 300, &[]), Err(TokenizerError::EmptyCorpus)));
    }

    #[test]
    fn merges_never_cross_pre_token_boundaries() {
        let m = train_bpe(&["ab ab ab ab"], 300, &[]).unwrap();
        assert!(m.merges().iter().all(|(l, r)| !format!("{l}{r}").contains("bĠ")));
    }

    #[test]
    fn duplicate_spelling_is_not_merged_twice() {
        // "aab" is reachable as (aa, b) and (a, ab); only one may become a token.
        let m = train_bpe(&["aab aab aab xaab xaab ab ab ab aa aa aa aa"], 400, &[]).unwrap();
        let spellings: Vec<String> = m.merges().iter().map(|(l, r)| format!("{l}{r}")).collect();
        let unique: HashSet<&String> = spellings.iter().collect();
        assert_eq!(unique.len(), spellings.len());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["Қазақ тілі бай тіл", "тілі тілдер тілдің", "қазақша сөйлейміз"];
        let a = train_bpe(&corpus, 290, &[s("<|endoftext|>")]).unwrap();
        let b = train_bpe(&corpus, 290, &[s("<|endoftext|>")]).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
