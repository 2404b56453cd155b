//! Bias-aware cross-modal embedding space: angular triplet losses, neighbor
//! samplers, a dual text/image encoder and its embedding table.

mod docembed;
mod loss;
mod model;
mod neighbors;
mod table;

pub use docembed::{BagOfWordsEmbedder, DocEmbedder};
pub use loss::{angular_loss, angular_loss_gradients, bias_angular_loss, AngularObjective, LossConfig};
pub use model::{train_space, DualEncoder, SpaceConfig, SpaceItem, SpaceTraining, StepLoss, IMAGE_DEPTH, IMAGE_PREFIX};
pub use neighbors::{
    bias_neighborhood, sample_bias_positive, sample_positive, semantic_neighbors, BiasNeighborhood,
    SemanticNeighborhood, DEFAULT_EPSILON, DEFAULT_K,
};
pub use table::{EmbeddingTable, EmbeddingVector, Modality};
