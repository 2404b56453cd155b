//! Article and neutrality-pair corpora, per-source bias scores and dataset
//! splitting.
//!
//! Bias scores live on a continuous scale from -1 (far left) through 0
//! (neutral) to +1 (right). Scores are assigned per publishing source and
//! inherited by every article from that source.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// A bias score in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SourceScore(f64);

impl SourceScore {
    pub const NEUTRAL: SourceScore = SourceScore(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && (-1.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::validation(format!(
                "bias score {value} is outside [-1, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SourceScore {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SourceScore> for f64 {
    fn from(s: SourceScore) -> f64 {
        s.0
    }
}

impl fmt::Display for SourceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+.2}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Article {
    pub id: String,
    pub source_id: String,
    pub text: String,
    pub image_ref: String,
    pub topic: String,
    pub source_score: SourceScore,
}

/// Same shape as [`Article`] but with an unchecked score, so that range
/// violations surface as validation errors instead of parse errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArticle {
    id: String,
    source_id: String,
    text: String,
    image_ref: String,
    topic: String,
    source_score: f64,
}

/// Reads a line-delimited JSON article file. Blank lines are ignored.
pub fn load_articles(path: impl AsRef<Path>) -> Result<Vec<Article>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut articles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawArticle = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let at = |msg: String| Error::validation(format!("{}:{lineno}: {msg}", path.display()));
        let source_score = SourceScore::new(raw.source_score).map_err(|e| at(e.to_string()))?;
        if raw.text.trim().is_empty() {
            return Err(at(format!("article `{}` has empty text", raw.id)));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(at(format!("duplicate article id `{}`", raw.id)));
        }
        articles.push(Article {
            id: raw.id,
            source_id: raw.source_id,
            text: raw.text,
            image_ref: raw.image_ref,
            topic: raw.topic,
            source_score,
        });
    }
    Ok(articles)
}

pub fn write_articles(path: impl AsRef<Path>, articles: &[Article]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for a in articles {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Per-source bias scores. Built once and read-only afterwards.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreTable(BTreeMap<String, SourceScore>);

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source_id: impl Into<String>, score: SourceScore) {
        self.0.insert(source_id.into(), score);
    }

    /// Collects the source scores carried by `articles`, failing if two
    /// articles disagree about the same source.
    pub fn from_articles(articles: &[Article]) -> Result<Self> {
        let mut table = BTreeMap::new();
        for a in articles {
            match table.get(&a.source_id) {
                Some(existing) if *existing != a.source_score => {
                    return Err(Error::validation(format!(
                        "source `{}` scored both {} and {}",
                        a.source_id, existing, a.source_score
                    )));
                }
                _ => {
                    table.insert(a.source_id.clone(), a.source_score);
                }
            }
        }
        Ok(Self(table))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    pub fn get(&self, source_id: &str) -> Option<SourceScore> {
        self.0.get(source_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, SourceScore)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that every article's score equals the table entry for its source.
    pub fn check_articles(&self, articles: &[Article]) -> Result<()> {
        for a in articles {
            let expected = assign_source_score(&a.source_id, self)?;
            if expected != a.source_score {
                return Err(Error::validation(format!(
                    "article `{}` carries score {} but source `{}` is scored {}",
                    a.id, a.source_score, a.source_id, expected
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, SourceScore)> for ScoreTable {
    fn from_iter<I: IntoIterator<Item = (String, SourceScore)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Looks up the score of `source_id`. Unknown sources are an error, never
/// an implicit neutral.
pub fn assign_source_score(source_id: &str, table: &ScoreTable) -> Result<SourceScore> {
    table.get(source_id).ok_or_else(|| Error::MissingScore {
        source_id: source_id.to_string(),
    })
}

/// A biased sentence and its neutralized rewrite, as word tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeutralityPair {
    pub id: String,
    pub biased_tokens: Vec<String>,
    pub neutral_tokens: Vec<String>,
}

impl NeutralityPair {
    pub fn new(id: impl Into<String>, biased: Vec<String>, neutral: Vec<String>) -> Result<Self> {
        let id = id.into();
        if biased.is_empty() || neutral.is_empty() {
            return Err(Error::validation(format!("pair `{id}` has an empty side")));
        }
        if biased == neutral {
            return Err(Error::validation(format!(
                "pair `{id}` has token-identical sides"
            )));
        }
        Ok(Self {
            id,
            biased_tokens: biased,
            neutral_tokens: neutral,
        })
    }

    pub fn from_sentences(id: impl Into<String>, biased: &str, neutral: &str) -> Result<Self> {
        Self::new(id, text::words(biased), text::words(neutral))
    }

    pub fn biased_text(&self) -> String {
        self.biased_tokens.join(" ")
    }

    pub fn neutral_text(&self) -> String {
        self.neutral_tokens.join(" ")
    }
}

#[derive(Debug, Clone, Default)]
pub struct PairLoad {
    pub pairs: Vec<NeutralityPair>,
    /// Lines dropped because both sentences tokenized identically.
    pub dropped: usize,
}

/// Reads a headerless three-column TSV of `id, biased, neutral`.
pub fn load_neutrality_pairs(path: impl AsRef<Path>) -> Result<PairLoad> {
    let path = path.as_ref();
    parse_neutrality_pairs(BufReader::new(File::open(path)?), path)
}

pub fn parse_neutrality_pairs(reader: impl BufRead, origin: &Path) -> Result<PairLoad> {
    let mut load = PairLoad::default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        message,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let biased = text::words(fields[1]);
        let neutral = text::words(fields[2]);
        if biased.is_empty() || neutral.is_empty() {
            return Err(parse_err(lineno, "empty sentence".into()));
        }
        if biased == neutral {
            load.dropped += 1;
            continue;
        }
        load.pairs
            .push(NeutralityPair::new(fields[0].trim(), biased, neutral)?);
    }
    if load.dropped > 0 {
        log::info!(
            "{}: dropped {} token-identical pairs",
            origin.display(),
            load.dropped
        );
    }
    Ok(load)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Shuffles `items` with `seed` and cuts them into train/val/test parts.
/// Part sizes are `round(n·train)`, `round(n·val)` and the remainder.
pub fn split_dataset<T: Clone>(items: &[T], ratios: (f64, f64, f64), seed: u64) -> Result<Split<T>> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) {
        return Err(Error::validation("split ratios must be positive"));
    }
    if ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split ratios sum to {}, not 1",
            tr + va + te
        )));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * tr).round() as usize).min(n);
    let n_val = ((n as f64 * va).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}
