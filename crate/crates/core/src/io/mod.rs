//! Run configuration, binary checkpoints and image output.

mod checkpoint;
mod config;
mod pgm;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use config::{RunConfig, StageSection};
pub use pgm::{read_pgm, write_pgm};
