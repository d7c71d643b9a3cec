//! Command-line entry points and the HTTP service.

pub mod adapter;
pub mod app;
pub mod commands;
pub mod config;
pub mod service;
