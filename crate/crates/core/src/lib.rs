//! Indirect time-of-flight depth reconstruction, capture simulation,
//! differentiable warping and the weakly-supervised flow objective.

pub mod error;
pub mod itof;
pub mod losses;
pub mod optim;
pub mod raster;
pub mod sim;
pub mod warp;

pub use error::{Error, Result};
pub use raster::{FlowField, Mask, Raster};
