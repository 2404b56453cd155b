use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Mat, Var};
use super::params::{glorot, normal_init, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Affine map `x W + b` over row vectors.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(format!("{name}.w"), glorot(inputs, outputs, rng)),
            bias: store.add(format!("{name}.b"), Mat::zeros((1, outputs))),
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            weight: lookup(store, &format!("{name}.w"))?,
            bias: lookup(store, &format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Multi-layer perceptron with tanh between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn bind(store: &ParamStore, name: &str, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Linear::bind(store, &format!("{name}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        h
    }
}

/// A contextual token-sequence encoder. Implementations own parameter ids in
/// the model's [`ParamStore`].
pub trait SequenceEncoder: Send + Sync {
    fn hidden_size(&self) -> usize;
    /// Longest sequence accepted by [`SequenceEncoder::encode`].
    fn context_len(&self) -> usize;
    /// Encodes `ids` (length ≤ `context_len`) into an n×hidden matrix.
    fn encode(&self, g: &mut Graph, ids: &[usize]) -> Var;
    fn descriptor(&self) -> EncoderDescriptor;
}

/// Serializable description of a built-in encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderDescriptor {
    Conv {
        vocab_size: usize,
        hidden: usize,
        layers: usize,
        context_len: usize,
    },
}

impl EncoderDescriptor {
    pub fn init<R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Box<dyn SequenceEncoder> {
        match *self {
            EncoderDescriptor::Conv {
                vocab_size,
                hidden,
                layers,
                context_len,
            } => Box::new(ConvEncoder::init(
                store,
                prefix,
                vocab_size,
                hidden,
                layers,
                context_len,
                rng,
            )),
        }
    }

    pub fn bind(&self, store: &ParamStore, prefix: &str) -> Result<Box<dyn SequenceEncoder>> {
        match *self {
            EncoderDescriptor::Conv {
                layers,
                context_len,
                ..
            } => Ok(Box::new(ConvEncoder::bind(store, prefix, layers, context_len)?)),
        }
    }
}

/// Token + position embeddings followed by residual width-3 convolutions:
/// `h ← h + tanh([h₋₁ ‖ h ‖ h₊₁] W + b)`.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    tokens: ParamId,
    positions: ParamId,
    layers: Vec<Linear>,
    vocab_size: usize,
    hidden: usize,
    context_len: usize,
}

impl ConvEncoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        vocab_size: usize,
        hidden: usize,
        layers: usize,
        context_len: usize,
        rng: &mut R,
    ) -> Self {
        let tokens = store.add(format!("{prefix}.tok"), normal_init(vocab_size, hidden, 0.1, rng));
        let positions = store.add(
            format!("{prefix}.pos"),
            normal_init(context_len, hidden, 0.02, rng),
        );
        let layers = (0..layers)
            .map(|i| Linear::init(store, &format!("{prefix}.conv{i}"), 3 * hidden, hidden, rng))
            .collect();
        Self {
            tokens,
            positions,
            layers,
            vocab_size,
            hidden,
            context_len,
        }
    }

    pub fn bind(store: &ParamStore, prefix: &str, layers: usize, context_len: usize) -> Result<Self> {
        let tokens = lookup(store, &format!("{prefix}.tok"))?;
        let positions = lookup(store, &format!("{prefix}.pos"))?;
        let (vocab_size, hidden) = store.get(tokens).dim();
        if store.get(positions).dim() != (context_len, hidden) {
            return Err(Error::validation(format!(
                "position table of `{prefix}` does not match context length {context_len}"
            )));
        }
        let layers = (0..layers)
            .map(|i| Linear::bind(store, &format!("{prefix}.conv{i}")))
            .collect::<Result<_>>()?;
        Ok(Self {
            tokens,
            positions,
            layers,
            vocab_size,
            hidden,
            context_len,
        })
    }
}

impl SequenceEncoder for ConvEncoder {
    fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn context_len(&self) -> usize {
        self.context_len
    }

    fn encode(&self, g: &mut Graph, ids: &[usize]) -> Var {
        assert!(ids.len() <= self.context_len, "sequence longer than context");
        let tok = g.param(self.tokens);
        let pos = g.param(self.positions);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let t = g.gather(tok, ids);
        let p = g.gather(pos, &positions);
        let mut h = g.add(t, p);
        for layer in &self.layers {
            let prev = g.shift(h, 1);
            let next = g.shift(h, -1);
            let window = g.concat_cols(&[prev, h, next]);
            let z = layer.forward(g, window);
            let a = g.tanh(z);
            h = g.add(h, a);
        }
        h
    }

    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor::Conv {
            vocab_size: self.vocab_size,
            hidden: self.hidden,
            layers: self.layers.len(),
            context_len: self.context_len,
        }
    }
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id(name)
        .ok_or_else(|| Error::validation(format!("checkpoint is missing parameter `{name}`")))
}
