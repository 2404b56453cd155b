use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
const SPECIALS: [&str; 3] = [PAD, UNK, MASK];
const CONTINUATION: &str = "##";

/// One subword piece. `text` is the surface form even when `id` is the
/// unknown token, so detokenization never loses input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub id: usize,
    /// Index of the word this piece belongs to.
    pub word_index: usize,
}

impl Token {
    pub fn is_continuation(&self) -> bool {
        self.text.starts_with(CONTINUATION)
    }
}

/// Greedy longest-match subword tokenizer over a corpus-derived vocabulary.
///
/// The vocabulary holds frequent whole words, frequent word prefixes
/// (`exp`), frequent continuation suffixes (`##ed`) and every character seen
/// in training in both positions, so any word made of known characters can
/// be segmented.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    pieces: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Tokenizer {
    fn from(pieces: Vec<String>) -> Self {
        let ids = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Self { pieces, ids }
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.pieces
    }
}

impl Tokenizer {
    /// Builds a vocabulary from `texts`. Words (and affixes shared by
    /// distinct words) seen at least `min_count` times become pieces.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for w in text::words(t) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        let min_count = min_count.max(1);
        let mut vocab: BTreeSet<String> = BTreeSet::new();
        let mut chars: BTreeSet<char> = BTreeSet::new();
        let mut prefixes: BTreeMap<String, usize> = BTreeMap::new();
        let mut suffixes: BTreeMap<String, usize> = BTreeMap::new();
        for (w, &c) in &word_counts {
            chars.extend(w.chars());
            if c >= min_count {
                vocab.insert(w.clone());
            }
            let cs: Vec<char> = w.chars().collect();
            for len in 3..cs.len().min(7) {
                *prefixes.entry(cs[..len].iter().collect()).or_default() += 1;
            }
            for start in (cs.len().saturating_sub(5)).max(1)..cs.len().saturating_sub(1) {
                let s: String = cs[start..].iter().collect();
                *suffixes.entry(format!("{CONTINUATION}{s}")).or_default() += 1;
            }
        }
        let affix_min = min_count.max(2);
        vocab.extend(prefixes.into_iter().filter(|(_, c)| *c >= affix_min).map(|(p, _)| p));
        vocab.extend(suffixes.into_iter().filter(|(_, c)| *c >= affix_min).map(|(p, _)| p));
        for ch in chars {
            vocab.insert(ch.to_string());
            vocab.insert(format!("{CONTINUATION}{ch}"));
        }
        let pieces: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(vocab.into_iter().filter(|p| !SPECIALS.contains(&p.as_str())))
            .collect();
        pieces.into()
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn pad_id(&self) -> usize {
        self.ids[PAD]
    }

    pub fn unk_id(&self) -> usize {
        self.ids[UNK]
    }

    pub fn mask_id(&self) -> usize {
        self.ids[MASK]
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Splits `text` into subword tokens tagged with their word index.
    pub fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let words = text::words(text);
        if words.is_empty() {
            return Err(Error::validation("cannot tokenize empty text"));
        }
        Ok(self.tokenize_words(&words))
    }

    pub fn tokenize_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<Token> {
        let mut out = Vec::new();
        for (word_index, w) in words.iter().enumerate() {
            self.split_word(w.as_ref(), word_index, &mut out);
        }
        out
    }

    fn split_word(&self, word: &str, word_index: usize, out: &mut Vec<Token>) {
        if let Some(id) = self.id(word) {
            out.push(Token {
                text: word.to_string(),
                id,
                word_index,
            });
            return;
        }
        let cs: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < cs.len() {
            let mut found = None;
            for end in (start + 1..=cs.len()).rev() {
                let body: String = cs[start..end].iter().collect();
                let piece = if start == 0 {
                    body
                } else {
                    format!("{CONTINUATION}{body}")
                };
                if let Some(id) = self.id(&piece) {
                    found = Some((piece, id, end));
                    break;
                }
            }
            match found {
                Some((piece, id, end)) => {
                    pieces.push(Token {
                        text: piece,
                        id,
                        word_index,
                    });
                    start = end;
                }
                None => {
                    out.push(Token {
                        text: word.to_string(),
                        id: self.unk_id(),
                        word_index,
                    });
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

/// Joins pieces back into space-separated words.
pub fn detokenize(tokens: &[Token]) -> String {
    merge_words(tokens).join(" ")
}

/// Merges pieces into words, in word-index order.
pub fn merge_words(tokens: &[Token]) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut last = None;
    for t in tokens {
        let body = t.text.strip_prefix(CONTINUATION).unwrap_or(&t.text);
        if last == Some(t.word_index) {
            words.last_mut().expect("word started").push_str(body);
        } else {
            words.push(body.to_string());
            last = Some(t.word_index);
        }
    }
    words
}
