pub mod adaptation;
pub mod config;
pub mod data;
pub mod discriminator;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod frame;
pub mod interaction;
pub mod model;
pub mod numerics;
pub mod sampling;
pub mod seed;
pub mod selftest;

pub use error::{Error, Result};
