//! Waypoint generation for row-based crops.
//!
//! A small two-head convolutional network detects row-end waypoints on a
//! binary occupancy grid and embeds them in a latent space where the two
//! field sides separate by cosine similarity. Around it sit a synthetic
//! field generator, classical clustering baselines, detection/clustering
//! metrics and an A-B-B-A coverage planner.

pub mod autograd;
pub mod fieldgen;
pub mod rng;
pub mod types;
pub mod model;
pub mod inference;
pub mod baselines;
pub mod eval;
pub mod planner;
