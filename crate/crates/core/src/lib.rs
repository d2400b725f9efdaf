//! Models, data handling, energy accounting and training for event/frame
//! fusion with spiking networks.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
mod error;
pub mod event_io;
pub mod fusion;
pub mod mst;
pub mod neurons;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod scnn;

pub use error::{Error, Result};
