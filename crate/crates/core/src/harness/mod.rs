//! Run configuration, checkpoint files and structured outputs.

pub mod checkpoint;
pub mod config;
pub mod output;
pub mod selfcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use config::{ConfigError, RunConfig};
pub use output::{MetricsWriter, OutputError, TrajectoryRow, TrajectoryWriter};
