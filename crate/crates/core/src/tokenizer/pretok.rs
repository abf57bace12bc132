//! Splits text into the spans that merges may not cross.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Digit
    } else {
        Class::Other
    }
}

/// Splits `text` into runs of letters, runs of digits and runs of other
/// non-space symbols. A single U+0020 directly before such a run joins it.
/// Any other whitespace forms its own span. The spans concatenate back to
/// `text` exactly.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let at = |i: usize| if i < n { chars[i].0 } else { text.len() };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if chars[i].1.is_whitespace() {
            let mut j = i;
            while j < n && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j < n && chars[j - 1].1 == ' ' {
                // Everything but the final space stands alone; that space
                // prefixes the following run.
                if j - 1 > i {
                    out.push(&text[at(i)..at(j - 1)]);
                }
                i = j - 1;
            } else {
                out.push(&text[at(i)..at(j)]);
                i = j;
                continue;
            }
        }
        let start = i;
        if chars[i].1 == ' ' {
            i += 1;
        }
        let cls = class(chars[i].1);
        i += 1;
        while i < n && !chars[i].1.is_whitespace() && class(chars[i].1) == cls {
            i += 1;
        }
        out.push(&text[at(start)..at(i)]);
    }
    out
}
