//! Command-line runner: config resolution, experiment records, plots, the
//! numerical self-test and the environment server.

pub mod app;
pub mod config;
pub mod plot;
pub mod records;
pub mod run;
pub mod selftest;
pub mod serve;
