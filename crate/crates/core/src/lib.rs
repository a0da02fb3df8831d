pub mod error;
pub mod harness;
pub mod mds;
pub mod measure;
pub mod rng;
pub mod shape;
pub mod transport;

pub use error::{Error, Result};
