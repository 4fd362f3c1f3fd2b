#![no_std]
// `!(x > 0)` is deliberate throughout: it also rejects NaN. Index loops
// mirror the math over small fixed axes.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod check;
pub mod encoding;
pub mod error;
pub mod exec;
pub mod field;
pub mod gaussian;
pub mod loss;
pub mod optim;
pub mod raster;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod shader;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;
