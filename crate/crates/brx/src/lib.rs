//! Command-line pipeline and HTTP service for explaining the search-and-rescue
//! agents with decision-tree behavior representations.

pub mod cli;
pub mod service;
