//! Live threshold-hunting sessions over HTTP.
//!
//! Each session is an append-only JSONL event log in the data directory.
//! In-memory state is always the replay of that log, so a restart rebuilds
//! every session exactly.

pub mod api;
pub mod error;
pub mod manager;
pub mod session;
pub mod store;

pub use api::{router, serve, AppState, NextResponse, ServeOptions};
pub use error::{ErrorBody, Result, ServiceError};
pub use manager::SessionManager;
pub use session::{CreateSession, EntryUnit, Event, ObservationInput, Session, SessionView, Status};
