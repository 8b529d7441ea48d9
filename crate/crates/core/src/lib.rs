pub mod checkpoint;
pub mod config;
pub mod energy;
pub mod error;
pub mod events;
pub mod flow;
pub mod net;
pub mod neurons;
pub mod nn;
pub mod swin;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
