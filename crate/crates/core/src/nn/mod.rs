//! Minimal neural-network toolkit: autodiff graph, parameters, Adam and a
//! few layers. Everything runs on `f64` so finite-difference checks are tight.

mod graph;
mod layers;
mod params;

pub use graph::{log_sum_exp, sigmoid, Graph, Mat, TripletObjective, Var};
pub use layers::{ConvEncoder, EncoderDescriptor, Linear, Mlp, SequenceEncoder};
pub use params::{glorot, normal_init, Adam, Gradients, ParamId, ParamStore};

#[cfg(test)]
mod tests;
