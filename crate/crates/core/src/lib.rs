pub mod blur;
pub mod corpus;
pub mod deconv;
pub mod depth;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod pareto;
pub mod pattern;
pub mod prior;
pub mod psf;
pub mod quality;
pub mod radiometry;
pub mod spectrum;

pub use error::{Error, Result};
