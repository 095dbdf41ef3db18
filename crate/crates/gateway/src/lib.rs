//! Configuration, shared request handling and HTTP routes for the `quill`
//! binary.

pub mod config;
pub mod engine;
pub mod errors;
pub mod server;
pub mod service;
