//! Session service: corpora, study sessions and their append-only logs,
//! exposed over HTTP.

pub mod api;
pub mod app;
pub mod clock;
pub mod config;
pub mod error;
pub mod session;
pub mod store;

pub use app::App;
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::ServiceConfig;
pub use error::{ApiError, ApiResult};
