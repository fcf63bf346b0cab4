//! On-disk formats and dataset plumbing.

pub mod checkpoint;
pub mod edut;
pub mod manifest;
pub mod splits;
pub mod synth;

pub use checkpoint::{Checkpoint, TrainState};
pub use edut::{read_tensor, write_tensor};
pub use manifest::{read_manifest, write_manifest, Category, Dimension, GeneratorModel, Labels, VideoRecord};
pub use splits::{make_split, make_splits, Partition, SplitSpec};
pub use synth::{generate, write_synthetic, SynthConfig, SyntheticVideo};
