use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::judgments::{aggregate_judgments, JudgmentRecord, JudgmentReport, JudgmentStore};
use super::pipeline::DebiasedArticle;
use crate::error::{Error, Result};

/// Original and debiased versions of one article, shown side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    pub pair_id: String,
    pub original_text: String,
    pub debiased_text: String,
    pub original_image: Option<PathBuf>,
    pub debiased_image: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairSide {
    Original,
    Debiased,
}

impl EvalPair {
    pub fn from_article(article: &DebiasedArticle, image_root: &Path) -> Self {
        let original = image_root.join(&article.original.image_ref);
        let original_image = original.is_file().then_some(original);
        Self {
            pair_id: article.original.id.clone(),
            original_text: article.original.text.clone(),
            debiased_text: article.neutralized_text.clone(),
            debiased_image: article
                .replacement_image_path
                .clone()
                .or_else(|| original_image.clone()),
            original_image,
        }
    }

    pub fn image(&self, side: PairSide) -> Option<&Path> {
        match side {
            PairSide::Original => self.original_image.as_deref(),
            PairSide::Debiased => self.debiased_image.as_deref(),
        }
    }
}

/// Uniform sample of `n` articles without replacement, in sampled order.
pub fn sample_pairs(corpus: &[DebiasedArticle], image_root: &Path, n: usize, seed: u64) -> Result<Vec<EvalPair>> {
    if n > corpus.len() {
        return Err(Error::validation(format!(
            "cannot sample {n} pairs from {} articles",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, corpus.len(), n)
        .into_iter()
        .map(|i| EvalPair::from_article(&corpus[i], image_root))
        .collect())
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[EvalPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<EvalPair>> {
    let path = path.as_ref();
    let mut pairs: Vec<EvalPair> = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = pairs.iter().find(|p| !seen.insert(p.pair_id.as_str())) {
        return Err(Error::validation(format!("duplicate pair_id `{}`", dup.pair_id)));
    }
    Ok(pairs)
}

/// Serves pairs to graders and records their judgments.
#[derive(Debug)]
pub struct EvalSession {
    pairs: Vec<EvalPair>,
    by_id: BTreeMap<String, usize>,
    store: JudgmentStore,
}

impl EvalSession {
    pub fn new(pairs: Vec<EvalPair>, store: JudgmentStore) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, p) in pairs.iter().enumerate() {
            if by_id.insert(p.pair_id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate pair_id `{}`", p.pair_id)));
            }
        }
        Ok(Self { pairs, by_id, store })
    }

    pub fn pairs(&self) -> &[EvalPair] {
        &self.pairs
    }

    pub fn pair(&self, pair_id: &str) -> Option<&EvalPair> {
        self.by_id.get(pair_id).map(|&i| &self.pairs[i])
    }

    pub fn store(&self) -> &JudgmentStore {
        &self.store
    }

    /// First pair, in file order, that `grader_id` has not judged.
    pub fn next_pair(&self, grader_id: &str) -> Option<&EvalPair> {
        self.pairs
            .iter()
            .find(|p| !self.store.has_judged(&p.pair_id, grader_id))
    }

    pub fn submit(&mut self, record: JudgmentRecord) -> Result<()> {
        if !self.by_id.contains_key(&record.pair_id) {
            return Err(Error::NotFound(format!("pair `{}`", record.pair_id)));
        }
        self.store.submit(record)
    }

    pub fn report(&self) -> JudgmentReport {
        aggregate_judgments(self.store.records())
    }
}
