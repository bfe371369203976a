pub mod crp;
pub mod error;
pub mod nn;
pub mod puf;
pub mod reliability;
pub mod rng;

pub use error::{Error, Result};
pub use rng::SimRng;
