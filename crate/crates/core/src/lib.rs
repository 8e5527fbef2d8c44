//! Graph convolutional classification of frame-level acoustic feature
//! sequences.
//!
//! Each utterance becomes a graph whose nodes are frames. Frames are linked
//! when their cosine similarity reaches a threshold (or, as a baseline, when
//! they are adjacent in time). A stack of degree-normalized message-passing
//! layers with skip connections, a mean readout and a softmax head classify
//! the whole graph. Gradients are derived by hand and checked against finite
//! differences; evaluation uses leave-one-speaker-out cross-validation.

pub mod checkpoint;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use features::{Dataset, StandardizeStats, SynthSpec, Utterance};
pub use graph::{Graph, GraphKind};
pub use matrix::Matrix;
pub use model::{ModelConfig, ModelParams};
pub use training::{Metrics, TrainConfig};
