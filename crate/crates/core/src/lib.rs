pub mod behavior;
pub mod constants;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod llg;
pub mod mtj;
pub mod seed;
pub mod snn;
pub mod stats;
pub mod vec3;

pub use error::{Error, Result};
pub use vec3::Vector3;
