//! Network front end for the monitoring engine.
//!
//! Three newline-delimited JSON listeners share one [`hub::Hub`]:
//!
//! - ingest: devices send data-point records and get one ack line each;
//! - consumer: a recipient receives its notifications and acks each by id;
//! - console: receives every topic event and may send commands.
//!
//! [`client`] holds the matching clients used by the CLI and load tests.

pub mod client;
pub mod hub;
pub mod protocol;
pub mod router;
pub mod server;

pub use server::{Server, ServerAddrs, ServerError};
