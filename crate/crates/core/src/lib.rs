pub mod config;
pub mod error;
pub mod kernel;
pub mod model;
pub mod orchestrator;
pub mod prov;
pub mod query;

pub use error::{Error, Result};
