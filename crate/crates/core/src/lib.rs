pub mod corpus;
pub mod embedspace;
pub mod error;
pub mod fixtures;
pub mod imagescore;
pub mod imaging;
pub mod neutralize;
pub mod nn;
pub mod orchestrator;
pub mod retrieval;
pub mod text;
pub mod textbias;

pub use error::{Error, Result};
