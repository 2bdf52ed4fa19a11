pub mod bench;
pub mod cluster;
pub mod config;
pub mod consistency;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod featnet;
pub mod geom;
pub mod gradcheck;
pub mod linalg;
pub mod prune;
pub mod scenegen;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
