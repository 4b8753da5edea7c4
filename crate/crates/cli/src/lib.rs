//! Library surface of the batch front end; the `allencahn` binary is a thin
//! wrapper around these modules.

pub mod commands;
pub mod config;
pub mod selftest;
