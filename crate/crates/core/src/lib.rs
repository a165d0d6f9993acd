//! Simulation core for instruction-following navigation on city road graphs.

pub mod action;
pub mod citygraph;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod eval;
pub mod instruction;
pub mod landmarks;
pub mod matching;
pub mod memory;
pub mod routegen;
pub mod service;
pub mod synthworld;
pub mod util;

pub use error::{NavError, Result};
