#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod io;
pub mod masking;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod raster;
pub mod selfcheck;
pub mod speckle;

pub use error::{Error, Result};
pub use raster::Raster;
