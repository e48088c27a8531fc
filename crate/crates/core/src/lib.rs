//! Meta-training of plastic recurrent networks on procedurally generated mazes.
//!
//! The genotype fixes static weights, local plasticity rules, and dopamine-like
//! modulators. Within a life cycle the plastic weights start from random values
//! and are reshaped step by step by those rules while the agent explores a maze
//! over several episodes. Separable CMA-ES (or plain ES) evolves the genotype
//! across generations.
//!
//! Module map:
//!
//! - [`maze`]: maze generation, observation and stepping.
//! - [`plasticity`]: the weight-update rules and modulation.
//! - [`models`]: model zoo, genotype layout codec, forward dynamics.
//! - [`inner_loop`]: multi-episode life cycle and fitness.
//! - [`evolution`]: ES / sep-CMA-ES outer loop, training driver, rule merging.
//! - [`metrics`]: evaluation statistics over life cycles and traces.

pub mod config;
pub mod error;
pub mod evolution;
pub mod inner_loop;
pub mod linalg;
pub mod maze;
pub mod metrics;
pub mod models;
pub mod plasticity;
pub mod seed;

pub use error::{Error, Result};
