//! Configuration-driven command-line driver for the fiberhom toolkit.

pub mod commands;
pub mod config;
