//! Experiment runner for s2dlab: configuration, per-run artifacts,
//! landscape and behaviour analyses, and SVG figures.

pub mod analyze;
pub mod config;
pub mod io;
pub mod protocol;
pub mod render;
pub mod run;
pub mod runner;
