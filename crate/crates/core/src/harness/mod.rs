pub mod pipeline;
pub mod config;
pub mod run;
pub mod report;
