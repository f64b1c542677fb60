//! Adaptive mesh refinement as a cooperative Markov game.
//!
//! A periodic quadtree mesh carries a bilinear DG advection solver; every
//! element is an agent that may refine, de-refine or do nothing. A graph
//! attention Q-network with additive value decomposition is trained on the
//! resulting game and compared against error-threshold policies.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod dg;
pub mod env;
pub mod eval;
pub mod ic;
pub mod learner;
pub mod mesh;
pub mod model;
pub mod par;
pub mod replay;
pub mod svg;
