//! Exact simulation and numerical verification of Fleming–Viot particle
//! systems on finite state spaces.
//!
//! A [`model::Model`] is a killed continuous-time chain on `K` live sites.
//! `N` particles follow it, and a killed particle jumps onto a uniformly
//! chosen survivor.

pub mod bounds;
pub mod complete_graph;
pub mod coupling;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod semigroup;
pub mod simulator;
pub mod two_point;
