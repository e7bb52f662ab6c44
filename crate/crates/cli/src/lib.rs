//! Experiment harness around `dynanewton-core`: svmlight IO, JSON run
//! configurations, convergence traces, cached reference optima and SVG
//! charts.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod plot;
pub mod reference;
pub mod svmlight;
pub mod trace;
