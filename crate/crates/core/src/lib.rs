pub mod bounds;
pub mod error;
pub mod experiment;
pub mod ridge;
pub mod signal;
pub mod transform;
pub mod window;

pub use error::{Error, Result};
