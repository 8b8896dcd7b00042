//! Driving-style inference from multi-agent trajectories.
//!
//! Trajectories become per-frame traffic graphs; closeness and cumulative
//! degree centrality of each agent are fitted with quadratics over sliding
//! windows, and the fitted derivatives locate and grade aggressive styles.
//! A seeded IDM/MOBIL highway simulator supplies labelled scenarios.

pub mod centrality;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod ingest;
pub mod pipeline;
pub mod regression;
pub mod sim;
pub mod style;

pub use error::{Error, Result};
