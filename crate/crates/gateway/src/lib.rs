pub mod api;
pub mod app;
pub mod cli;
pub mod docs;
pub mod error;
pub mod server;

pub use app::App;
pub use error::{ErrorBody, GatewayError, Result};
