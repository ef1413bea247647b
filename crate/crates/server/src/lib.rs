//! Durable store, access control and HTTP API of the basin information system.

pub mod api;
pub mod auth;
pub mod config;
pub mod error;
pub mod permissions;
pub mod service;
pub mod state;
pub mod store;

pub use config::Config;
pub use error::{Result, ServiceError};
pub use service::{Service, Session};
