//! Global learnable attention with super-bit locality-sensitive hashing for
//! single-image super-resolution.

pub mod bench;
mod binio;
pub mod error;
pub mod features;
pub mod gla;
pub mod imaging;
pub mod network;
pub mod params;
pub mod rng;
pub mod sblsh;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::Parameters;
pub use rng::SeededRng;
