// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cues;
mod error;
pub mod harness;
pub mod metrics;
pub mod net;
mod params;
mod rng;
pub mod scene;

pub use error::{Error, Result};
pub use params::{Bound, ParamSet};
