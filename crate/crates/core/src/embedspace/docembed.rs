use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::text::words;

/// Unsupervised document embedding that defines semantic neighborhoods.
pub trait DocEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Mean of fixed random Gaussian word vectors, seeded per word. Texts with
/// no words embed to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagOfWordsEmbedder {
    dim: usize,
    seed: u64,
}

impl BagOfWordsEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut h = DefaultHasher::new();
        word.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish() ^ self.seed);
        let scale = (self.dim as f64).sqrt().recip();
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect()
    }
}

impl Default for BagOfWordsEmbedder {
    fn default() -> Self {
        Self::new(64, 0xb0)
    }
}

impl DocEmbedder for BagOfWordsEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let ws = words(text);
        let mut out = vec![0.0; self.dim];
        for w in &ws {
            for (o, v) in out.iter_mut().zip(self.word_vector(w)) {
                *o += v;
            }
        }
        if !ws.is_empty() {
            out.iter_mut().for_each(|o| *o /= ws.len() as f64);
        }
        out
    }
}
