//! Multimodal maximum-entropy dynamic games.
//!
//! Local LQ (maximum-entropy) Nash equilibria of general-sum dynamic games,
//! a Bayesian belief over which equilibrium the other agents play, and a
//! QMDP planner that hedges the ego agent's controls across equilibria. A
//! kinematic-bicycle lane-merge scenario and a closed-loop simulator exercise
//! the whole pipeline.

pub mod error;
pub mod game;
pub mod inference;
pub mod merge;
pub mod planner;
pub mod sim;
pub mod solver;
pub mod toy;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/games.md")]
    struct Games;
    #[doc = include_str!("../../../book/src/toy.md")]
    struct Toy;
    #[doc = include_str!("../../../book/src/inference.md")]
    struct Inference;
    #[doc = include_str!("../../../book/src/planning.md")]
    struct Planning;
    #[doc = include_str!("../../../book/src/merge.md")]
    struct Merge;
    #[doc = include_str!("../../../book/src/simulator.md")]
    struct Simulator;
}
