//! Host-side companion to `illumsplat-core`: a rayon executor, the
//! NeRF-synthetic loader, PNG and JSON-lines IO, the checkpoint format and
//! the command-line pipeline.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod exec;
pub mod image_io;
pub mod metrics;
pub mod nerf;
pub mod pipeline;

pub use error::IoError;
pub use exec::RayonExecutor;
