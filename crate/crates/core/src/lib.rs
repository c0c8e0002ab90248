pub mod admm;
pub mod chain;
pub mod dc;
pub mod error;
pub mod eval;
pub mod io;
pub mod ipdc;
pub mod matops;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod rng;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
