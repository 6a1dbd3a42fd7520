//! Belief control barrier functions driven by a generalized extended Kalman
//! filter for systems whose measurement noise scales with the state.

pub mod belief_safety;
pub mod config;
pub mod controllers;
pub mod error;
pub mod estimators;
pub mod models;
pub mod qp;
pub mod sim;
pub mod specfun;

pub use error::{Error, Result};
