//! Scenario runner for the acila library: loads structured-text scenario
//! files, drives the controller, gateways, fabric and entry-count model,
//! cross-checks analytic counts against concrete tables, and emits
//! reports.

pub mod generate;
pub mod report;
pub mod runner;
pub mod scenario;
