//! Fully learnable neural reward machines.
//!
//! Jointly learns a symbol grounder and a probabilistic Moore machine from
//! observations and scalar rewards, and feeds the machine's belief state to an
//! actor-critic agent in non-Markovian gridworld tasks.

pub mod agents;
pub mod automata;
pub mod diffmath;
pub mod error;
pub mod flnrm;
pub mod gridworld;
pub mod harness;
pub mod tasks;

pub use error::{Error, Result};
