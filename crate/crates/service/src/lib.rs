//! HTTP service and command line for the SAE concept explorer.

pub mod api;
pub mod cli;
pub mod error;
pub mod state;

pub use api::{router, serve};
pub use error::{ApiError, ApiResult};
pub use state::{AppState, ServiceConfig, Session};
