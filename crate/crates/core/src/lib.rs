//! Simulation of measurement-induced transitions in driven transmons.

pub mod circuit;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod floquet;
pub mod linalg;
pub mod maps;
pub mod oracle;
pub mod ode;
pub mod presets;
pub mod propagate;
pub mod transmon;
pub mod units;

pub use error::{Error, Result};
