//! Command-line front end, file formats and parallel evaluation for
//! `iden-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;
pub mod runner;
pub mod selftest;
pub mod systems;
