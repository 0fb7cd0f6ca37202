//! Library half of the command-line frontend, kept separate so integration
//! tests can drive the same code paths the binary uses.

pub mod commands;
pub mod config;
pub mod data;
pub mod synth;
