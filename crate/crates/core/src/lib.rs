//! Simulation of two-party vertical federated learning with the cut at the
//! input layer, plus binary-feature reconstruction attacks and defenses
//! against them.

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod exactcover;
pub mod linalg;
pub mod model;
pub mod vfl;

pub use error::{Error, Result};
pub use linalg::{Matrix, RankTolerance};
