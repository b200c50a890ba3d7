//! Service layer for ticketrag: snapshots, the feedback journal, the HTTP API
//! and the `ticketrag` command line.

pub mod cli;
pub mod config;
pub mod engine;
pub mod feedback;
pub mod http;
pub mod journal;
pub mod snapshot;
