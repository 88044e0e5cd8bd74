pub mod complexity;
pub mod dsp;
pub mod error;
pub mod layers;
pub mod model;
pub mod objective;
pub mod scene;
pub mod stream;

pub use error::{Error, Result};
