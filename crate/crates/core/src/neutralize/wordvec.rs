use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable word → vector map. All vectors share one dimension and have
/// non-zero norm.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn from_entries<S: Into<String>>(
        dim: usize,
        entries: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut table = Self::new(dim);
        for (word, v) in entries {
            table.insert(word, v)?;
        }
        Ok(table)
    }

    fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let word = word.into();
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(format!("vector for `{word}` has non-finite entries")));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::validation(format!("vector for `{word}` has zero norm")));
        }
        if self.vectors.insert(word.clone(), v).is_some() {
            return Err(Error::validation(format!("duplicate word vector for `{word}`")));
        }
        Ok(())
    }

    /// Reads the text format: a `count dim` header, then one `word v1 … vD`
    /// line per word.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(BufReader::new(File::open(path)?), path)
    }

    pub fn parse(reader: impl BufRead, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: PathBuf::from(origin),
            line,
            message,
        };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match fields.as_slice() {
            [c, d] => (
                c.parse::<usize>().map_err(|e| parse_err(1, format!("bad count: {e}")))?,
                d.parse::<usize>().map_err(|e| parse_err(1, format!("bad dimension: {e}")))?,
            ),
            _ => return Err(parse_err(1, "header must be `count dim`".into())),
        };
        if dim == 0 {
            return Err(parse_err(1, "dimension must be positive".into()));
        }
        let mut table = Self::new(dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let v = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(lineno, e.to_string()))?;
            table.insert(word, v).map_err(|e| parse_err(lineno, e.to_string()))?;
        }
        if table.len() != count {
            log::warn!(
                "{}: header declares {count} words, found {}",
                origin.display(),
                table.len()
            );
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }
}

/// Cosine of the two words' vectors; `None` if either is out of vocabulary.
pub fn cosine_similarity(w1: &str, w2: &str, table: &WordVectorTable) -> Option<f64> {
    let (a, b) = (table.get(w1)?, table.get(w2)?);
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeutralizationReport {
    /// Mean over in-vocabulary pairs only.
    pub mean_cosine: f64,
    pub oov_count: usize,
    /// Total number of pairs, including out-of-vocabulary ones.
    pub n: usize,
}

/// Mean cosine between original and predicted words. Out-of-vocabulary pairs
/// are excluded and counted.
pub fn evaluate_neutralization<S: AsRef<str>>(
    samples: &[(S, S)],
    table: &WordVectorTable,
) -> Result<NeutralizationReport> {
    if samples.is_empty() {
        return Err(Error::EmptySample("no neutralization pairs".into()));
    }
    let sims: Vec<f64> = samples
        .iter()
        .filter_map(|(o, p)| cosine_similarity(o.as_ref(), p.as_ref(), table))
        .collect();
    if sims.is_empty() {
        return Err(Error::UndefinedMean("every pair is out of vocabulary".into()));
    }
    Ok(NeutralizationReport {
        mean_cosine: sims.iter().sum::<f64>() / sims.len() as f64,
        oov_count: samples.len() - sims.len(),
        n: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table() -> WordVectorTable {
        WordVectorTable::from_entries(
            2,
            [
                ("a", vec![1.0, 0.0]),
                ("b", vec![0.0, 2.0]),
                ("c", vec![3.0, 4.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_and_orthogonal() {
        let t = table();
        assert_relative_eq!(cosine_similarity("c", "c", &t).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(cosine_similarity("a", "b", &t), Some(0.0));
        assert_eq!(cosine_similarity("a", "zzz", &t), None);
    }

    #[test]
    fn mean_of_point_two_and_point_six() {
        // cos = 0.2 and 0.6 against the unit x axis.
        let y2 = (1.0f64 - 0.04).sqrt();
        let y6 = (1.0f64 - 0.36).sqrt();
        let t = WordVectorTable::from_entries(
            2,
            [("x", vec![1.0, 0.0]), ("p", vec![0.2, y2]), ("q", vec![0.6, y6])],
        )
        .unwrap();
        let r = evaluate_neutralization(&[("x", "p"), ("x", "q"), ("x", "oov")], &t).unwrap();
        assert_relative_eq!(r.mean_cosine, 0.4, epsilon = 1e-12);
        assert_eq!((r.oov_count, r.n), (1, 3));
    }

    #[test]
    fn identity_pairs_score_one() {
        let r = evaluate_neutralization(&[("a", "a"), ("b", "b")], &table()).unwrap();
        assert_eq!(r.mean_cosine, 1.0);
    }

    #[test]
    fn all_oov_is_undefined() {
        let err = evaluate_neutralization(&[("p", "q")], &table()).unwrap_err();
        assert!(matches!(err, Error::UndefinedMean(_)));
        let empty: [(&str, &str); 0] = [];
        assert!(matches!(evaluate_neutralization(&empty, &table()), Err(Error::EmptySample(_))));
    }

    #[test]
    fn rejects_zero_and_mixed_dimensions() {
        assert!(WordVectorTable::from_entries(2, [("z", vec![0.0, 0.0])]).is_err());
        assert!(matches!(
            WordVectorTable::from_entries(2, [("a", vec![1.0, 0.0, 1.0])]),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn parses_text_format() {
        let text = "2 3\nvacation 1 0 0.5\nholiday 0.5 1 0\n";
        let t = WordVectorTable::parse(text.as_bytes(), Path::new("v.txt")).unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        let bad = "1 3\nword 1 0\n";
        let err = WordVectorTable::parse(bad.as_bytes(), Path::new("v.txt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(WordVectorTable::parse("x\n".as_bytes(), Path::new("v.txt")).is_err());
    }

    /// The pretrained table is not shipped; point the variable at it to run.
    #[test]
    fn vacation_holiday_with_pretrained_table() {
        let Ok(path) = std::env::var("DEBIAS_WORD_VECTORS") else {
            eprintln!("DEBIAS_WORD_VECTORS unset; skipping");
            return;
        };
        let t = WordVectorTable::load(path).unwrap();
        let c = cosine_similarity("vacation", "holiday", &t).unwrap();
        assert!((c - 0.2400).abs() < 5e-5, "cosine {c}");
    }

    proptest! {
        #[test]
        fn symmetric_and_scale_invariant(
            a in prop::collection::vec(0.1f64..5.0, 4),
            b in prop::collection::vec(-5.0f64..5.0, 4),
            c in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let t = WordVectorTable::from_entries(4, [("a", a), ("b", b.clone()), ("s", scaled)]);
            prop_assume!(t.is_ok());
            let t = t.unwrap();
            let ab = cosine_similarity("a", "b", &t).unwrap();
            prop_assert!((ab - cosine_similarity("b", "a", &t).unwrap()).abs() < 1e-12);
            prop_assert!((ab - cosine_similarity("s", "b", &t).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
