//! Front end for the LMB simulator: scenario configs, sweeps, calibration
//! files and report output.

pub mod calibration;
pub mod config;
pub mod profile;
pub mod report;
pub mod sweep;
