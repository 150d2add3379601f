//! Experiment runner and plotting for the dtvec simulator.

pub mod experiments;
pub mod font;
pub mod plot;
