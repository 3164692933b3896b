pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod nn;
pub mod pfn;
pub mod lstm;
pub mod heads;
pub mod ita;
pub mod model;
pub mod metrics;
pub mod train;
pub mod checkpoint;
pub mod config;
pub mod cli;
