//! Scenario files, batch runs and reports for `unipos`.

pub mod commands;
pub mod report;
pub mod schema;
