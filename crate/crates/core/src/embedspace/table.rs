use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(Error::validation(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub modality: Modality,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, modality: Modality) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding has non-finite entries"));
        }
        Ok(Self { values, modality })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm. The zero vector is left unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }
}

/// Embeddings keyed by (id, modality), all of one dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<(String, Modality), Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.contains(char::is_whitespace) {
            return Err(Error::validation(format!("embedding id `{id}` must be non-empty without whitespace")));
        }
        if vector.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        self.entries.insert((id, vector.modality), vector.values);
        Ok(())
    }

    pub fn get(&self, id: &str, modality: Modality) -> Option<EmbeddingVector> {
        self.entries
            .get(&(id.to_string(), modality))
            .map(|v| EmbeddingVector {
                values: v.clone(),
                modality,
            })
    }

    /// Entries of one modality in ascending id order.
    pub fn of_modality(&self, modality: Modality) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries
            .iter()
            .filter(move |((_, m), _)| *m == modality)
            .map(|((id, _), v)| (id.as_str(), v.as_slice()))
    }

    pub fn modalities(&self) -> Vec<Modality> {
        let mut m: Vec<Modality> = self.entries.keys().map(|(_, m)| *m).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Text format: header `count dim modalities` (modalities comma-joined,
    /// `-` when empty), then one `id modality v1 … vD` line per entry.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mods: Vec<String> = self.modalities().iter().map(Modality::to_string).collect();
        let flags = if mods.is_empty() { "-".to_string() } else { mods.join(",") };
        writeln!(w, "{} {} {}", self.len(), self.dim, flags)?;
        for ((id, m), v) in &self.entries {
            write!(w, "{id} {m}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let perr = |line: usize, message: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            message,
        };
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines.next().ok_or_else(|| perr(1, "missing header".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [count, dim, flags] = fields.as_slice() else {
            return Err(perr(1, "header must be `count dim modalities`".into()));
        };
        let count: usize = count.parse().map_err(|e| perr(1, format!("bad count: {e}")))?;
        let dim: usize = dim.parse().map_err(|e| perr(1, format!("bad dimension: {e}")))?;
        let declared: Vec<Modality> = if *flags == "-" {
            Vec::new()
        } else {
            flags.split(',').map(str::parse).collect::<Result<_>>().map_err(|e| perr(1, e.to_string()))?
        };
        let mut table = Self::new(dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let mut parts = line.split_whitespace();
            let Some(id) = parts.next() else { continue };
            let modality: Modality = parts
                .next()
                .ok_or_else(|| perr(lineno, "missing modality".into()))?
                .parse()
                .map_err(|e: Error| perr(lineno, e.to_string()))?;
            let values = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(lineno, e.to_string()))?;
            let v = EmbeddingVector::new(values, modality).map_err(|e| perr(lineno, e.to_string()))?;
            table.insert(id, v).map_err(|e| perr(lineno, e.to_string()))?;
        }
        if table.len() != count {
            return Err(perr(1, format!("header declares {count} entries, found {}", table.len())));
        }
        if table.modalities() != declared {
            return Err(perr(1, "modality flags do not match the records".into()));
        }
        Ok(table)
    }
}
