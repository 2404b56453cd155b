//! Word-level pre-tokenization shared by the corpus loaders and the subword
//! tokenizer.
//!
//! Text is lowercased and split on whitespace; every punctuation character
//! becomes its own word. Two strings are considered equivalent when their
//! [`normalize`]d forms are equal.

/// Splits `text` into lowercase words, emitting punctuation as standalone words.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut out);
        } else if is_punct(ch) {
            flush(&mut current, &mut out);
            out.push(ch.to_lowercase().collect());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    flush(&mut current, &mut out);
    out
}

/// Canonical form used to compare texts before and after tokenization:
/// lowercase with all whitespace removed.
pub fn normalize(text: &str) -> String {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_punct(ch: char) -> bool {
    ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace())
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(std::mem::take(current));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(
            words("John McCain, exposed!"),
            vec!["john", "mccain", ",", "exposed", "!"]
        );
    }

    #[test]
    fn empty_and_blank() {
        assert!(words("").is_empty());
        assert!(words(" \t\n").is_empty());
    }

    #[test]
    fn normalize_ignores_spacing_and_case() {
        assert_eq!(normalize("A b  C"), normalize("a bc"));
    }
}
