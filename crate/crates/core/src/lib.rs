//! Schema-agnostic encoding of relational database rows into fixed-size
//! node embeddings.

pub mod ablation;
pub mod audit;
pub mod autodiff;
pub mod baseline;
pub mod conditioning;
pub mod config;
pub mod encoder;
pub mod diagnostics;
pub mod error;
pub mod gradcheck;
pub mod gnn;
pub mod graph;
pub mod hash;
pub mod metrics;
pub mod modality;
pub mod optim;
pub mod params;
pub mod perceiver;
pub mod sampler;
pub mod schema;
pub mod synth;
pub mod task;
pub mod tensor;
pub mod text;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use params::ParameterStore;
pub use tensor::DenseArray;
