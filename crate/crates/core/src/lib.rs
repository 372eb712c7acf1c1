//! Memoryless-policy bounds and the SMF rolling-horizon controller for
//! finite POMDPs.

pub mod benchmarks;
pub mod cassandra;
pub mod model;
pub mod mdp;
pub mod lp;
pub mod formulate;
pub mod policy;
pub mod bnb;
pub mod sim;
