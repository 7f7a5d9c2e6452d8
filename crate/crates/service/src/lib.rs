//! Process composition for the echo engine: TOML configuration, the
//! append-only data directory, the session HTTP API and the `echo` CLI.

pub mod app;
pub mod cli;
pub mod clock;
pub mod config;
pub mod error;
pub mod http;
pub mod store;
pub mod wire;

pub use app::App;
pub use clock::{Clock, ManualClock, SystemClock};
pub use config::EngineConfig;
pub use error::{Result, ServiceError};
